#pragma once

#include <cstdint>
#include <vector>

#include "iidsu/tensor.hpp"

namespace iidsu {

enum class AgentKind { vehicle, pedestrian };

/// An oriented agent box in the BEV frame at one future timestep:
/// (x m forward, y m rightward, w m width, l m length, theta radians
/// heading). timestep is 1..3, theta in (-pi, pi], w and l positive.
struct AgentBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double l = 0.0;
  double theta = 0.0;
  int timestep = 1;
  AgentKind kind = AgentKind::vehicle;
};

/// Object density map target plus its supervision mask.
///
/// `map` is {21, R, R}: three 7-channel blocks, one per future timestep,
/// each arranged [heat, dx, dy, log w, log l, sin, cos]. `mask` is {3, R, R}
/// with 1.0 exactly at object-center cells — regression channels are only
/// supervised there.
struct EncodedDensity {
  Tensor map;
  Tensor mask;
};

/// Channels per timestep block of the density map.
constexpr int64_t kDensityBlock = 7;
/// Future timesteps represented in the map.
constexpr int64_t kDensitySteps = 3;
/// Total density channels (kDensitySteps * kDensityBlock).
constexpr int64_t kDensityChannels = 21;

/// Size-adaptive Gaussian splat radius in pixels (CenterNet recipe at
/// minimum overlap 0.7, corrected roots), floored and clamped to >= 2.
int64_t gaussian_radius_px(double len_px, double wid_px);

/// Encodes ground-truth agents into the density map. Center cells follow
/// the BEV pixel mapping of the sensor pipeline (row = (R-1) - floor(x*s),
/// col = floor((y+16)*s), s = R/32); the heat channel receives a peak-1
/// Gaussian splat per agent, overlaps combined by max; (dx, dy) store the
/// continuous center minus the cell's minimum corner in pixel fractions.
/// Agents whose center is outside the BEV range are skipped. Non-positive
/// sizes or a timestep outside 1..3 violate the AgentBox invariants and
/// throw ContractError.
EncodedDensity encode_density(const std::vector<AgentBox>& agents, int64_t r);

/// Decodes a predicted density map {21, R, R} back into agent boxes. Cells
/// strictly above `heat_threshold` that are 3x3 local maxima (strictly
/// greater than every neighbor; equal values tie-break to the lower
/// row-major index) become detections; fields invert the encode
/// conventions, theta = atan2(sin, cos) normalized to (-pi, pi]. The map
/// carries no class information, so decoded boxes report AgentKind::vehicle.
/// Detections are emitted in (timestep, row-major) order.
std::vector<AgentBox> decode_density(const Tensor& map, double heat_threshold);

}  // namespace iidsu
