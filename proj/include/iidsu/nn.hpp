#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "iidsu/ops.hpp"
#include "iidsu/tensor.hpp"

namespace iidsu {

/// Deterministic random source. All draws are derived from the raw 64-bit
/// stream of a mt19937_64 via fixed arithmetic, so sequences are identical
/// across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t raw() { return eng_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  /// Integer in [0, n).
  int64_t uniform_int(int64_t n);
  /// Standard normal via Box-Muller (pairs cached).
  double normal();

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

enum class Init : uint8_t {
  zeros,
  ones,
  fan_in_uniform,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in from shape
  normal_small,    // N(0, 0.02^2), for positional embeddings
};

/// Named parameter registry. Creation order is stable, names are unique,
/// and the store owns the precision and initializer RNG so that a given
/// (seed, architecture) pair always produces the same initial weights.
class ParamStore {
 public:
  ParamStore(Precision prec, uint64_t seed) : prec_(prec), rng_(seed) {}

  /// Creates the parameter on first call, returns the existing tensor on
  /// subsequent calls with the same name (shape must then match).
  Tensor param(const std::string& name, Shape shape, Init init);
  /// The optional fan-in override covers layers whose fan-in is not the
  /// trailing-axes product (e.g. a Linear stored input-major).
  Tensor param(const std::string& name, Shape shape, Init init,
               int64_t fan_in);

  bool has(const std::string& name) const;
  Tensor get(const std::string& name) const;  // throws ContractError if absent
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  std::vector<Tensor> tensors() const;
  void zero_grads();
  int64_t total_values() const;
  Precision precision() const { return prec_; }

 private:
  Precision prec_;
  Rng rng_;
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// y = x W + b with W stored input-major ({in, out}).
/// Accepts rank-1 ({in}) or rank-2 ({n, in}) inputs.
struct Linear {
  Tensor w, b;

  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
         Init weight_init = Init::fan_in_uniform);
  Tensor forward(const Tensor& x, GradGraph* g = nullptr) const;
  int64_t in_features() const { return w.extent(0); }
  int64_t out_features() const { return w.extent(1); }
};

/// Square-window 2-D convolution layer with per-channel bias.
struct Conv2dLayer {
  Tensor k, b;
  int stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& ps, const std::string& prefix, int64_t cin,
              int64_t cout, int window, int stride, int pad,
              Init weight_init = Init::fan_in_uniform);
  Tensor forward(const Tensor& x, GradGraph* g = nullptr) const;
};

/// Gated recurrent unit cell over rank-1 state vectors.
/// Gate layout along the packed 3H axis is [reset | update | candidate].
struct GruCell {
  Tensor w_ih;  // {in, 3H}
  Tensor w_hh;  // {H, 3H}
  Tensor b_ih, b_hh;  // {3H}

  GruCell() = default;
  GruCell(ParamStore& ps, const std::string& prefix, int64_t in, int64_t hidden);
  Tensor forward(const Tensor& x, const Tensor& h, GradGraph* g = nullptr) const;
  int64_t hidden_size() const { return w_hh.extent(0); }
};

/// Layer norm with learned per-feature scale and shift along `axis`.
struct AffineLayerNorm {
  Tensor gamma, beta;
  int axis = 0;

  AffineLayerNorm() = default;
  AffineLayerNorm(ParamStore& ps, const std::string& prefix, int64_t features,
                  int axis);
  Tensor forward(const Tensor& x, GradGraph* g = nullptr) const;
};

}  // namespace iidsu
