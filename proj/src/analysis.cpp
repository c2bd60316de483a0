#include "iidsu/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "iidsu/nn.hpp"

namespace iidsu {

namespace {

std::string f4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ContractError("cosine_similarity: length mismatch (" +
                        std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  if (a.empty()) throw ContractError("cosine_similarity: empty vectors");
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  if (na2 == 0.0 || nb2 == 0.0)
    throw NumericError("cosine_similarity: undefined for a zero vector");
  // sqrt(na2 * nb2) rather than sqrt(na2)*sqrt(nb2): with round-to-nearest
  // this makes cos(a, a) exactly 1 for bitwise-equal inputs.
  return dot / std::sqrt(na2 * nb2);
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1)
    throw ContractError("cosine_similarity: expected rank-1 tensors, got " +
                        shape_str(a.shape()) + " and " + shape_str(b.shape()));
  return cosine_similarity(a.data(), b.data());
}

double CorrelationReport::pair(HeadId a, HeadId b) const {
  return matrix[static_cast<size_t>(a)][static_cast<size_t>(b)];
}

std::string CorrelationReport::to_text() const {
  std::string out;
  out += "correlation of auxiliary tasks and planning\n";
  out += "pair\tcosine similarity\n";
  out += "plan x det&pred\t" + f4(plan_density()) + "\n";
  out += "plan x BEV\t" + f4(plan_bev()) + "\n";
  out += "plan x traffic\t" + f4(plan_traffic()) + "\n";
  out += "plan x weather\t" + f4(plan_weather()) + "\n";
  out += "\npairwise matrix (plan, det&pred, BEV, traffic, weather)\n";
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      out += f4(matrix[i][j]);
      out += (j == 4) ? "\n" : "\t";
    }
  }
  out += "\nprobe: seed=" + std::to_string(probe_seed) +
         " samples=" + std::to_string(probe_samples) + "\n";
  return out;
}

CorrelationReport correlation_report(const FusionModel& model,
                                     uint64_t probe_seed, int probe_samples) {
  if (probe_samples < 1)
    throw ContractError("correlation_report: need at least one probe sample");
  const ModelConfig& cfg = model.config();
  Rng rng(probe_seed);
  std::array<std::vector<double>, 5> mean;

  for (int s = 0; s < probe_samples; ++s) {
    std::vector<double> img(3 * cfg.r * cfg.r);
    for (double& v : img) v = rng.uniform();
    std::vector<double> lidar(4 * cfg.r * cfg.r);
    for (double& v : lidar) v = rng.uniform(0.0, 4.0);
    const std::vector<double> goal = {rng.uniform(-3.0, 3.0),
                                      rng.uniform(-3.0, 3.0)};
    const ModelOutputs out = model.forward(
        Tensor::from_values({3, cfg.r, cfg.r}, img, cfg.precision),
        Tensor::from_values({4, cfg.r, cfg.r}, lidar, cfg.precision),
        Tensor::from_values({2}, goal, cfg.precision));
    for (size_t h = 0; h < 5; ++h) {
      const std::vector<double>& w = out.eca[h].data();
      if (mean[h].empty()) mean[h].assign(w.size(), 0.0);
      for (size_t i = 0; i < w.size(); ++i) mean[h][i] += w[i];
    }
  }
  for (auto& m : mean)
    for (double& v : m) v /= probe_samples;

  CorrelationReport rep;
  rep.probe_seed = probe_seed;
  rep.probe_samples = probe_samples;
  for (int i = 0; i < 5; ++i) {
    rep.matrix[i][i] = 1.0;  // cos(a, a) by construction
    for (int j = i + 1; j < 5; ++j) {
      const double c = cosine_similarity(mean[i], mean[j]);
      rep.matrix[i][j] = c;
      rep.matrix[j][i] = c;  // mirrored, so symmetry is exact
    }
  }
  return rep;
}

}  // namespace iidsu
