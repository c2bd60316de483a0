#include "iidsu/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace iidsu {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[6] = {'I', 'I', 'D', 'S', 'U', '1'};
constexpr uint32_t kMaxNameLen = 4096;
constexpr uint32_t kMaxRank = 16;

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw IoError("checkpoint '" + path + "': truncated header field");
  return v;
}

uint64_t get_u64(std::istream& is, const std::string& path) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw IoError("checkpoint '" + path + "': truncated extent");
  return v;
}

}  // namespace

void write_records(const std::string& path,
                   const std::vector<CheckpointRecord>& records,
                   Precision precision) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint '" + path + "': cannot open for writing");
  os.write(kMagic, sizeof(kMagic));
  const uint8_t bpv = static_cast<uint8_t>(precision);
  os.write(reinterpret_cast<const char*>(&bpv), 1);
  put_u32(os, static_cast<uint32_t>(records.size()));
  for (const CheckpointRecord& rec : records) {
    if (rec.name.empty() || rec.name.size() > kMaxNameLen)
      throw ContractError("checkpoint: record name length out of range");
    const int64_t numel = shape_numel(rec.shape);
    if (numel != static_cast<int64_t>(rec.values.size()))
      throw ContractError("checkpoint: '" + rec.name +
                          "' value count does not match its shape");
    put_u32(os, static_cast<uint32_t>(rec.name.size()));
    os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    put_u32(os, static_cast<uint32_t>(rec.shape.size()));
    for (int64_t e : rec.shape) put_u64(os, static_cast<uint64_t>(e));
    if (precision == Precision::f64) {
      os.write(reinterpret_cast<const char*>(rec.values.data()),
               static_cast<std::streamsize>(rec.values.size() * 8));
    } else {
      for (double v : rec.values) {
        const float f = static_cast<float>(v);
        os.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
  }
  if (!os) throw IoError("checkpoint '" + path + "': write failed");
}

std::pair<std::vector<CheckpointRecord>, Precision> read_records(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint '" + path + "': cannot open");
  char magic[6] = {};
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("checkpoint '" + path + "': bad magic (not an IIDSU1 file)");
  uint8_t bpv = 0;
  if (!is.read(reinterpret_cast<char*>(&bpv), 1) || (bpv != 4 && bpv != 8))
    throw IoError("checkpoint '" + path + "': invalid precision tag");
  const Precision prec = static_cast<Precision>(bpv);
  const uint32_t count = get_u32(is, path);

  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const uint32_t name_len = get_u32(is, path);
    if (name_len == 0 || name_len > kMaxNameLen)
      throw IoError("checkpoint '" + path + "': implausible name length");
    rec.name.resize(name_len);
    if (!is.read(rec.name.data(), name_len))
      throw IoError("checkpoint '" + path + "': truncated name");
    const uint32_t rank = get_u32(is, path);
    if (rank > kMaxRank)
      throw IoError("checkpoint '" + path + "': implausible rank");
    rec.shape.resize(rank);
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint64_t e = get_u64(is, path);
      if (e == 0 || e > (1ull << 32))
        throw IoError("checkpoint '" + path + "': implausible extent");
      rec.shape[d] = static_cast<int64_t>(e);
      numel *= rec.shape[d];
    }
    rec.values.resize(static_cast<size_t>(numel));
    if (prec == Precision::f64) {
      if (!is.read(reinterpret_cast<char*>(rec.values.data()), numel * 8))
        throw IoError("checkpoint '" + path + "': truncated values in '" +
                      rec.name + "'");
    } else {
      std::vector<float> buf(static_cast<size_t>(numel));
      if (!is.read(reinterpret_cast<char*>(buf.data()), numel * 4))
        throw IoError("checkpoint '" + path + "': truncated values in '" +
                      rec.name + "'");
      for (int64_t j = 0; j < numel; ++j) rec.values[j] = buf[j];
    }
    records.push_back(std::move(rec));
  }
  is.peek();
  if (!is.eof())
    throw IoError("checkpoint '" + path + "': trailing bytes after records");
  return {std::move(records), prec};
}

void save_checkpoint(const std::string& path, const ParamStore& ps) {
  std::vector<CheckpointRecord> records;
  records.reserve(ps.entries().size());
  for (const auto& [name, tensor] : ps.entries()) {
    records.push_back({name, tensor.shape(), tensor.data()});
  }
  write_records(path, records, ps.precision());
}

void load_checkpoint(const std::string& path, ParamStore& ps) {
  auto [records, prec] = read_records(path);
  if (prec != ps.precision())
    throw ContractError(
        "checkpoint '" + path + "' stores " +
        std::to_string(static_cast<int>(prec) * 8) +
        "-bit values but the model store is " +
        std::to_string(static_cast<int>(ps.precision()) * 8) + "-bit");
  std::map<std::string, const CheckpointRecord*> by_name;
  size_t param_records = 0;
  for (const CheckpointRecord& rec : records) {
    if (rec.name.rfind("__", 0) == 0) continue;  // metadata record
    by_name.emplace(rec.name, &rec);
    ++param_records;
  }
  if (param_records != ps.entries().size())
    throw ContractError("checkpoint '" + path + "' holds " +
                        std::to_string(param_records) +
                        " parameter tensors but the model has " +
                        std::to_string(ps.entries().size()));
  for (const auto& [name, tensor] : ps.entries()) {
    const auto it = by_name.find(name);
    if (it == by_name.end())
      throw ContractError("checkpoint '" + path + "' is missing tensor '" +
                          name + "' required by the model");
    const CheckpointRecord& rec = *it->second;
    if (rec.shape != tensor.shape())
      throw ContractError("checkpoint '" + path + "': tensor '" + name +
                          "' has shape " + shape_str(rec.shape) +
                          " but the model expects " +
                          shape_str(tensor.shape()));
    Tensor t = tensor;
    t.data_mut() = rec.values;
  }
}

namespace {

constexpr const char* kConfigRecord = "__config__";

CheckpointRecord config_record(const ModelConfig& cfg) {
  return {kConfigRecord,
          {6},
          {cfg.width_factor, static_cast<double>(cfg.r),
           static_cast<double>(cfg.gru_hidden),
           static_cast<double>(cfg.attention_heads),
           static_cast<double>(cfg.eca_kernel),
           static_cast<double>(static_cast<int>(cfg.precision))}};
}

ModelConfig config_from_record(const CheckpointRecord& rec,
                               const std::string& path) {
  if (rec.shape != Shape{6})
    throw IoError("checkpoint '" + path + "': malformed __config__ record");
  ModelConfig cfg;
  cfg.width_factor = rec.values[0];
  cfg.r = static_cast<int>(rec.values[1]);
  cfg.gru_hidden = static_cast<int>(rec.values[2]);
  cfg.attention_heads = static_cast<int>(rec.values[3]);
  cfg.eca_kernel = static_cast<int>(rec.values[4]);
  cfg.precision = rec.values[5] == 4.0 ? Precision::f32 : Precision::f64;
  return cfg;
}

bool close_enough(double a, double b) {
  return std::fabs(a - b) <= 1e-6 * std::max({1.0, std::fabs(a), std::fabs(b)});
}

}  // namespace

void save_model(const std::string& path, const FusionModel& model) {
  std::vector<CheckpointRecord> records;
  records.push_back(config_record(model.config()));
  for (const auto& [name, tensor] : model.params().entries()) {
    records.push_back({name, tensor.shape(), tensor.data()});
  }
  write_records(path, records, model.params().precision());
}

FusionModel load_model(const std::string& path) {
  auto [records, prec] = read_records(path);
  const CheckpointRecord* cfg_rec = nullptr;
  for (const CheckpointRecord& rec : records) {
    if (rec.name == kConfigRecord) cfg_rec = &rec;
  }
  if (cfg_rec == nullptr)
    throw IoError("checkpoint '" + path +
                  "' carries no __config__ record; load it into an "
                  "explicitly configured model instead");
  FusionModel model(config_from_record(*cfg_rec, path), /*seed=*/0);
  load_checkpoint(path, model.params());
  return model;
}

FusionModel load_model_as(const std::string& path, const ModelConfig& cfg,
                          uint64_t seed) {
  auto [records, prec] = read_records(path);
  for (const CheckpointRecord& rec : records) {
    if (rec.name != kConfigRecord) continue;
    const ModelConfig stored = config_from_record(rec, path);
    auto mismatch = [&](const char* field, double ckpt, double want) {
      throw ContractError("checkpoint '" + path + "' was trained with " +
                          std::string(field) + " = " + std::to_string(ckpt) +
                          " but the configuration requests " +
                          std::to_string(want));
    };
    if (!close_enough(stored.width_factor, cfg.width_factor))
      mismatch("width_factor", stored.width_factor, cfg.width_factor);
    if (stored.r != cfg.r) mismatch("r", stored.r, cfg.r);
    if (stored.gru_hidden != cfg.gru_hidden)
      mismatch("gru_hidden", stored.gru_hidden, cfg.gru_hidden);
    if (stored.attention_heads != cfg.attention_heads)
      mismatch("attention_heads", stored.attention_heads, cfg.attention_heads);
    if (stored.eca_kernel != cfg.eca_kernel)
      mismatch("eca_kernel", stored.eca_kernel, cfg.eca_kernel);
    if (stored.precision != cfg.precision)
      mismatch("precision bytes", static_cast<int>(stored.precision),
               static_cast<int>(cfg.precision));
  }
  FusionModel model(cfg, seed);
  load_checkpoint(path, model.params());
  return model;
}

}  // namespace iidsu
