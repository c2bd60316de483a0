#pragma once

#include <functional>

#include "iidsu/tensor.hpp"

namespace iidsu {

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;   // |analytic - numeric| / max(1e-6, |a| + |n|)
  int64_t coords_checked = 0;
};

/// Central-difference check of reverse-mode gradients.
///
/// `make_loss` must rebuild the same scalar loss from the current parameter
/// values; it receives a tape (or nullptr for plain evaluation). Every
/// parameter is checked at up to `max_coords_per_tensor` evenly spaced
/// coordinates. Parameters should be f64: an f32 store would round the
/// +/- eps probes and poison the difference quotient.
///
/// `atol` gates coordinates whose analytic/numeric difference is below the
/// finite-difference noise floor (|loss| * ulp / eps): both sides are then
/// rounding dust — e.g. parameters whose true derivative is exactly zero by
/// symmetry — and their ratio is meaningless. Such coordinates contribute
/// zero relative error. 0 disables the gate.
GradCheckReport grad_check(const std::function<Tensor(GradGraph*)>& make_loss,
                           const std::vector<Tensor>& params, double eps,
                           int64_t max_coords_per_tensor, double atol = 0.0);

}  // namespace iidsu
