#include "iidsu/nn.hpp"

#include <cmath>

namespace iidsu {

int64_t Rng::uniform_int(int64_t n) {
  if (n < 1) throw ContractError("uniform_int: n must be >= 1");
  // Rejection sampling keeps the draw unbiased for any n.
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t r;
  do {
    r = eng_();
  } while (r >= limit);
  return static_cast<int64_t>(r % un);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;  // 2 pi
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

Tensor ParamStore::param(const std::string& name, Shape shape, Init init) {
  int64_t fan_in = 1;
  if (shape.size() >= 2) {
    // For {cout, cin, k, k} kernels this is cin*k*k; for {in, out} linears
    // the caller passes the explicit fan-in overload.
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  } else {
    fan_in = shape.empty() ? 1 : shape[0];
  }
  return param(name, std::move(shape), init, fan_in);
}

Tensor ParamStore::param(const std::string& name, Shape shape, Init init,
                         int64_t fan_in) {
  for (auto& [n, t] : entries_) {
    if (n == name) {
      if (t.shape() != shape)
        throw ContractError("parameter '" + name + "' re-registered as " +
                            shape_str(shape) + ", previously " +
                            shape_str(t.shape()));
      return t;
    }
  }
  const int64_t numel = shape_numel(shape);
  std::vector<double> v(static_cast<size_t>(numel), 0.0);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      std::fill(v.begin(), v.end(), 1.0);
      break;
    case Init::fan_in_uniform: {
      if (fan_in < 1) throw ContractError("fan_in must be >= 1");
      const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& x : v) x = rng_.uniform(-limit, limit);
      break;
    }
    case Init::normal_small:
      for (double& x : v) x = 0.02 * rng_.normal();
      break;
  }
  Tensor t = Tensor::from_values(std::move(shape), std::move(v), prec_, true);
  entries_.emplace_back(name, t);
  return t;
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return true;
  return false;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("unknown parameter '" + name + "'");
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [n, t] : entries_) out.push_back(t);
  return out;
}

void ParamStore::zero_grads() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

int64_t ParamStore::total_values() const {
  int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

Linear::Linear(ParamStore& ps, const std::string& prefix, int64_t in,
               int64_t out, Init weight_init)
    : w(ps.param(prefix + ".w", {in, out}, weight_init, in)),
      b(ps.param(prefix + ".b", {out}, Init::zeros)) {}

Tensor Linear::forward(const Tensor& x, GradGraph* g) const {
  if (x.rank() == 1) {
    Tensor row = reshape(x, {1, x.extent(0)}, g);
    Tensor y = add_bias(matmul(row, w, g), b, 1, g);
    return reshape(y, {w.extent(1)}, g);
  }
  if (x.rank() == 2) return add_bias(matmul(x, w, g), b, 1, g);
  throw ShapeError("Linear: input must be rank 1 or 2, got " +
                   shape_str(x.shape()));
}

Conv2dLayer::Conv2dLayer(ParamStore& ps, const std::string& prefix,
                         int64_t cin, int64_t cout, int window, int stride,
                         int pad, Init weight_init)
    : k(ps.param(prefix + ".k", {cout, cin, window, window}, weight_init)),
      b(ps.param(prefix + ".b", {cout}, Init::zeros)),
      stride(stride),
      pad(pad) {}

Tensor Conv2dLayer::forward(const Tensor& x, GradGraph* g) const {
  return add_bias(conv2d(x, k, stride, pad, g), b, 0, g);
}

GruCell::GruCell(ParamStore& ps, const std::string& prefix, int64_t in,
                 int64_t hidden)
    : w_ih(ps.param(prefix + ".w_ih", {in, 3 * hidden}, Init::fan_in_uniform,
                    in)),
      w_hh(ps.param(prefix + ".w_hh", {hidden, 3 * hidden},
                    Init::fan_in_uniform, hidden)),
      b_ih(ps.param(prefix + ".b_ih", {3 * hidden}, Init::zeros)),
      b_hh(ps.param(prefix + ".b_hh", {3 * hidden}, Init::zeros)) {}

Tensor GruCell::forward(const Tensor& x, const Tensor& h, GradGraph* g) const {
  const int64_t hid = hidden_size();
  if (x.rank() != 1 || x.extent(0) != w_ih.extent(0))
    throw ShapeError("GruCell: input " + shape_str(x.shape()) +
                     " does not match w_ih " + shape_str(w_ih.shape()));
  if (h.rank() != 1 || h.extent(0) != hid)
    throw ShapeError("GruCell: state " + shape_str(h.shape()) +
                     " does not match hidden size " + std::to_string(hid));
  Tensor xr = reshape(x, {1, x.extent(0)}, g);
  Tensor hr = reshape(h, {1, hid}, g);
  Tensor gi = reshape(add_bias(matmul(xr, w_ih, g), b_ih, 1, g), {3 * hid}, g);
  Tensor gh = reshape(add_bias(matmul(hr, w_hh, g), b_hh, 1, g), {3 * hid}, g);

  Tensor r = sigmoid(add(slice(gi, 0, 0, hid, g), slice(gh, 0, 0, hid, g), g), g);
  Tensor z = sigmoid(
      add(slice(gi, 0, hid, hid, g), slice(gh, 0, hid, hid, g), g), g);
  Tensor n = tanh_act(
      add(slice(gi, 0, 2 * hid, hid, g),
          mul(r, slice(gh, 0, 2 * hid, hid, g), g), g),
      g);
  // h' = n + z * (h - n)
  return add(n, mul(z, sub(h, n, g), g), g);
}

AffineLayerNorm::AffineLayerNorm(ParamStore& ps, const std::string& prefix,
                                 int64_t features, int axis)
    : gamma(ps.param(prefix + ".gamma", {features}, Init::ones)),
      beta(ps.param(prefix + ".beta", {features}, Init::zeros)),
      axis(axis) {}

Tensor AffineLayerNorm::forward(const Tensor& x, GradGraph* g) const {
  Tensor y = layer_norm(x, axis, 1e-5, g);
  return add_bias(mul_bias(y, gamma, axis, g), beta, axis, g);
}

}  // namespace iidsu
