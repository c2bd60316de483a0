#include "iidsu/density_codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "iidsu/sensor_pipeline.hpp"

namespace iidsu {

namespace {

constexpr double kMinOverlap = 0.7;

// Smallest radius keeping IoU >= kMinOverlap for the three corner-shift
// cases, using the corrected quadratic roots.
double radius_cases(double h, double w) {
  const double o = kMinOverlap;

  const double b1 = h + w;
  const double c1 = w * h * (1.0 - o) / (1.0 + o);
  const double r1 = (b1 - std::sqrt(b1 * b1 - 4.0 * c1)) / 2.0;

  const double a2 = 4.0;
  const double b2 = 2.0 * (h + w);
  const double c2 = (1.0 - o) * w * h;
  const double r2 = (b2 - std::sqrt(b2 * b2 - 4.0 * a2 * c2)) / (2.0 * a2);

  const double a3 = 4.0 * o;
  const double b3 = -2.0 * o * (h + w);
  const double c3 = (o - 1.0) * w * h;
  const double r3 = (-b3 + std::sqrt(b3 * b3 - 4.0 * a3 * c3)) / (2.0 * a3);

  return std::min({r1, r2, r3});
}

}  // namespace

int64_t gaussian_radius_px(double len_px, double wid_px) {
  const double r = radius_cases(len_px, wid_px);
  return std::max<int64_t>(2, static_cast<int64_t>(std::floor(r)));
}

EncodedDensity encode_density(const std::vector<AgentBox>& agents, int64_t r) {
  if (r < 8) throw ContractError("encode_density: r must be at least 8");
  EncodedDensity out;
  out.map = Tensor::zeros({kDensityChannels, r, r}, Precision::f64);
  out.mask = Tensor::zeros({kDensitySteps, r, r}, Precision::f64);
  std::vector<double>& map = out.map.data_mut();
  std::vector<double>& mask = out.mask.data_mut();
  const int64_t plane = r * r;
  const double s = static_cast<double>(r) / 32.0;

  for (const AgentBox& a : agents) {
    if (a.timestep < 1 || a.timestep > kDensitySteps)
      throw ContractError("encode_density: timestep must be 1..3, got " +
                          std::to_string(a.timestep));
    if (!(a.w > 0.0 && a.l > 0.0))
      throw ContractError("encode_density: agent sizes must be positive");
    if (!(a.x >= 0.0 && a.x < 32.0 && a.y >= -16.0 && a.y < 16.0))
      continue;  // out-of-range centers are skipped, not an error

    const double u = a.x * s;            // pixels along forward
    const double v = (a.y + 16.0) * s;   // pixels along rightward
    const int64_t row = (r - 1) - static_cast<int64_t>(std::floor(u));
    const int64_t col = static_cast<int64_t>(std::floor(v));
    const int64_t base = (a.timestep - 1) * kDensityBlock;

    // Peak-1 Gaussian splat, overlapping agents combined by max.
    const int64_t rad = gaussian_radius_px(a.l * s, a.w * s);
    const double sigma = (2.0 * static_cast<double>(rad) + 1.0) / 6.0;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    double* heat = map.data() + base * plane;
    for (int64_t dr = -rad; dr <= rad; ++dr) {
      const int64_t rr = row + dr;
      if (rr < 0 || rr >= r) continue;
      for (int64_t dc = -rad; dc <= rad; ++dc) {
        const int64_t cc = col + dc;
        if (cc < 0 || cc >= r) continue;
        const double g =
            std::exp(-static_cast<double>(dr * dr + dc * dc) * inv2s2);
        double& cell = heat[rr * r + cc];
        cell = std::max(cell, g);
      }
    }

    const int64_t center = row * r + col;
    map[(base + 1) * plane + center] = u - std::floor(u);
    map[(base + 2) * plane + center] = v - std::floor(v);
    map[(base + 3) * plane + center] = std::log(a.w);
    map[(base + 4) * plane + center] = std::log(a.l);
    map[(base + 5) * plane + center] = std::sin(a.theta);
    map[(base + 6) * plane + center] = std::cos(a.theta);
    mask[(a.timestep - 1) * plane + center] = 1.0;
  }
  return out;
}

std::vector<AgentBox> decode_density(const Tensor& map,
                                     double heat_threshold) {
  if (!(heat_threshold > 0.0 && heat_threshold < 1.0))
    throw ContractError("decode_density: heat_threshold must be in (0, 1)");
  if (map.shape().size() != 3 || map.shape()[0] != kDensityChannels ||
      map.shape()[1] != map.shape()[2])
    throw ContractError("decode_density: map must be {21, R, R}, got " +
                        shape_str(map.shape()));
  const int64_t r = map.shape()[1];
  const int64_t plane = r * r;
  const double s = static_cast<double>(r) / 32.0;
  const std::vector<double>& m = map.data();

  std::vector<AgentBox> boxes;
  for (int64_t t = 0; t < kDensitySteps; ++t) {
    const double* heat = m.data() + t * kDensityBlock * plane;
    for (int64_t row = 0; row < r; ++row) {
      for (int64_t col = 0; col < r; ++col) {
        const int64_t idx = row * r + col;
        const double h = heat[idx];
        if (!(h > heat_threshold)) continue;
        bool peak = true;
        for (int64_t dr = -1; dr <= 1 && peak; ++dr) {
          for (int64_t dc = -1; dc <= 1 && peak; ++dc) {
            if (dr == 0 && dc == 0) continue;
            const int64_t rr = row + dr, cc = col + dc;
            if (rr < 0 || rr >= r || cc < 0 || cc >= r) continue;
            const int64_t nidx = rr * r + cc;
            const double nh = heat[nidx];
            // Strictly greater wins; exact ties go to the lower index.
            if (nh > h || (nh == h && nidx < idx)) peak = false;
          }
        }
        if (!peak) continue;
        const int64_t base = t * kDensityBlock;
        AgentBox b;
        const double dx = m[(base + 1) * plane + idx];
        const double dy = m[(base + 2) * plane + idx];
        b.x = (static_cast<double>((r - 1) - row) + dx) / s;
        b.y = (static_cast<double>(col) + dy) / s - 16.0;
        b.w = std::exp(m[(base + 3) * plane + idx]);
        b.l = std::exp(m[(base + 4) * plane + idx]);
        b.theta = normalize_yaw(std::atan2(m[(base + 5) * plane + idx],
                                           m[(base + 6) * plane + idx]));
        b.timestep = static_cast<int>(t + 1);
        b.kind = AgentKind::vehicle;
        boxes.push_back(b);
      }
    }
  }
  return boxes;
}

}  // namespace iidsu
