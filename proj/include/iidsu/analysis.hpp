#pragma once

// Interpretability instrumentation: per-head ECA channel-weight correlation.
//
// Every task head reads the same scene feature through its own channel
// attention, so the attention weight vectors are directly comparable: the
// cosine similarity between a task head's weights and the planning head's
// weights measures how much of the planned-for scene content that task
// also attends to. ECA weights depend on the input, so the report fixes a
// seeded probe batch, averages each head's weights over it, and records the
// probe provenance alongside the similarities.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "iidsu/fusion_model.hpp"
#include "iidsu/tensor.hpp"

namespace iidsu {

/// Cosine similarity dot(a,b) / (|a|*|b|) between two equal-length vectors.
/// Throws ContractError on a length mismatch and NumericError when either
/// vector is all zeros (the similarity is undefined there).
double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b);
/// Tensor overload; both tensors must be rank 1.
double cosine_similarity(const Tensor& a, const Tensor& b);

/// Pairwise ECA channel-weight similarity over the five heads, plus the
/// probe batch provenance that makes the numbers reproducible.
struct CorrelationReport {
  uint64_t probe_seed = 0;
  int probe_samples = 0;
  /// Indexed by HeadId order (planning, density, bev, traffic, weather).
  /// Symmetric with a unit diagonal; every entry lies in [-1, 1].
  std::array<std::array<double, 5>, 5> matrix{};

  double pair(HeadId a, HeadId b) const;
  double plan_density() const { return pair(HeadId::planning, HeadId::density); }
  double plan_bev() const { return pair(HeadId::planning, HeadId::bev); }
  double plan_traffic() const { return pair(HeadId::planning, HeadId::traffic); }
  double plan_weather() const { return pair(HeadId::planning, HeadId::weather); }

  /// Text table: one "plan x <task>" row per auxiliary head, the full 5x5
  /// matrix, and the probe provenance line.
  std::string to_text() const;
};

/// Runs `samples` seeded random inputs through the model, averages each
/// head's ECA channel weights over the batch, and reports all pairwise
/// cosine similarities. Deterministic for a fixed (model, seed, samples).
CorrelationReport correlation_report(const FusionModel& model,
                                     uint64_t probe_seed = 2024,
                                     int probe_samples = 4);

}  // namespace iidsu
