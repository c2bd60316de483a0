#pragma once

// Flat binary parameter container.
//
// Layout (all integers little-endian):
//   magic "IIDSU1" (6 bytes)
//   u8  bytes per value (4 or 8, the storage precision)
//   u32 record count
//   per record:
//     u32 name length | name bytes | u32 rank | u64 extents[rank] |
//     raw values (IEEE float32 or float64, little-endian)
//
// Round-trips are bit-exact: an f64 store writes the doubles verbatim, an
// f32 store writes the (already float-rounded) values as floats.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "iidsu/fusion_model.hpp"
#include "iidsu/nn.hpp"
#include "iidsu/tensor.hpp"

namespace iidsu {

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Low-level container access. Structural problems (short file, bad magic,
/// oversized fields) throw IoError.
void write_records(const std::string& path,
                   const std::vector<CheckpointRecord>& records,
                   Precision precision);
std::pair<std::vector<CheckpointRecord>, Precision> read_records(
    const std::string& path);

/// Saves every parameter of the store, in creation order.
void save_checkpoint(const std::string& path, const ParamStore& ps);
/// Restores parameter values into an existing store. The file must carry
/// exactly the store's tensors (same names, shapes, precision); any
/// difference throws ContractError naming both sides. Records whose name
/// starts with "__" are metadata and are skipped.
void load_checkpoint(const std::string& path, ParamStore& ps);

/// Model-level save: parameters plus a "__config__" metadata record, so a
/// checkpoint alone is enough to rebuild the network.
void save_model(const std::string& path, const FusionModel& model);
/// Rebuilds the model recorded in the checkpoint.
FusionModel load_model(const std::string& path);
/// Loads checkpoint values into a model built from `cfg`; throws
/// ContractError naming both sides when the checkpoint's recorded
/// configuration disagrees with `cfg` (e.g. a width mismatch).
FusionModel load_model_as(const std::string& path, const ModelConfig& cfg,
                          uint64_t seed);

}  // namespace iidsu
