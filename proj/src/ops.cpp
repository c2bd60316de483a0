#include "iidsu/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace iidsu {
namespace {

bool taped(GradGraph* g, std::initializer_list<const Tensor*> ins) {
  if (!g) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_same_prec(const Tensor& a, const Tensor& b, const char* op) {
  if (a.precision() != b.precision())
    throw ContractError(std::string(op) + ": mixed precision operands");
}

// Splits a shape around `axis` into (outer, n, inner) strides for slice walks.
struct AxisSplit {
  int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
  AxisSplit sp;
  for (int i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.n = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

// C (M x N) = A (M x K) * B (K x N), accumulating into C. The k loop is the
// middle loop and each C element receives its products in ascending-k order,
// which keeps the floating-point accumulation order independent of blocking.
void matmul_raw(const double* a, const double* b, double* c, int64_t m,
                int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor unary_map(const Tensor& x, GradGraph* g,
                 double (*fwd)(double),
                 double (*dfdx)(double /*x*/, double /*y*/),
                 const char* /*name*/) {
  const int64_t n = x.numel();
  std::vector<double> y(n);
  for (int64_t i = 0; i < n; ++i) y[i] = fwd(x.data()[i]);
  Tensor out = Tensor::from_values(x.shape(), std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x, out, dfdx](std::vector<Tensor>& ins, Tensor& o) {
      (void)ins;
      const int64_t m = x.numel();
      std::vector<double> gx(m);
      for (int64_t i = 0; i < m; ++i)
        gx[i] = o.grad()[i] * dfdx(x.data()[i], out.data()[i]);
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), m);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, GradGraph* g) {
  require_same_shape(a, b, "add");
  require_same_prec(a, b, "add");
  const int64_t n = a.numel();
  std::vector<double> y(n);
  for (int64_t i = 0; i < n; ++i) y[i] = a.data()[i] + b.data()[i];
  Tensor out = Tensor::from_values(a.shape(), std::move(y), a.precision());
  if (taped(g, {&a, &b})) {
    g->record({a, b}, out, [a, b](std::vector<Tensor>&, Tensor& o) {
      const int64_t n = o.numel();
      if (a.requires_grad())
        const_cast<Tensor&>(a).accumulate_grad(o.grad().data(), n);
      if (b.requires_grad())
        const_cast<Tensor&>(b).accumulate_grad(o.grad().data(), n);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b, GradGraph* g) {
  require_same_shape(a, b, "sub");
  require_same_prec(a, b, "sub");
  const int64_t n = a.numel();
  std::vector<double> y(n);
  for (int64_t i = 0; i < n; ++i) y[i] = a.data()[i] - b.data()[i];
  Tensor out = Tensor::from_values(a.shape(), std::move(y), a.precision());
  if (taped(g, {&a, &b})) {
    g->record({a, b}, out, [a, b](std::vector<Tensor>&, Tensor& o) {
      const int64_t n = o.numel();
      if (a.requires_grad())
        const_cast<Tensor&>(a).accumulate_grad(o.grad().data(), n);
      if (b.requires_grad()) {
        std::vector<double> gb(n);
        for (int64_t i = 0; i < n; ++i) gb[i] = -o.grad()[i];
        const_cast<Tensor&>(b).accumulate_grad(gb.data(), n);
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, GradGraph* g) {
  require_same_shape(a, b, "mul");
  require_same_prec(a, b, "mul");
  const int64_t n = a.numel();
  std::vector<double> y(n);
  for (int64_t i = 0; i < n; ++i) y[i] = a.data()[i] * b.data()[i];
  Tensor out = Tensor::from_values(a.shape(), std::move(y), a.precision());
  if (taped(g, {&a, &b})) {
    g->record({a, b}, out, [a, b](std::vector<Tensor>&, Tensor& o) {
      const int64_t n = o.numel();
      std::vector<double> buf(n);
      if (a.requires_grad()) {
        for (int64_t i = 0; i < n; ++i) buf[i] = o.grad()[i] * b.data()[i];
        const_cast<Tensor&>(a).accumulate_grad(buf.data(), n);
      }
      if (b.requires_grad()) {
        for (int64_t i = 0; i < n; ++i) buf[i] = o.grad()[i] * a.data()[i];
        const_cast<Tensor&>(b).accumulate_grad(buf.data(), n);
      }
    });
  }
  return out;
}

Tensor scalar_mul(const Tensor& x, double s, GradGraph* g) {
  const int64_t n = x.numel();
  std::vector<double> y(n);
  for (int64_t i = 0; i < n; ++i) y[i] = x.data()[i] * s;
  Tensor out = Tensor::from_values(x.shape(), std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x, s](std::vector<Tensor>&, Tensor& o) {
      const int64_t n = o.numel();
      std::vector<double> gx(n);
      for (int64_t i = 0; i < n; ++i) gx[i] = o.grad()[i] * s;
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), n);
    });
  }
  return out;
}

Tensor scalar_add(const Tensor& x, double s, GradGraph* g) {
  const int64_t n = x.numel();
  std::vector<double> y(n);
  for (int64_t i = 0; i < n; ++i) y[i] = x.data()[i] + s;
  Tensor out = Tensor::from_values(x.shape(), std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x](std::vector<Tensor>&, Tensor& o) {
      const_cast<Tensor&>(x).accumulate_grad(o.grad().data(), o.numel());
    });
  }
  return out;
}

Tensor abs_val(const Tensor& x, GradGraph* g) {
  return unary_map(
      x, g, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); },
      "abs");
}

Tensor log_val(const Tensor& x, GradGraph* g) {
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i)
    if (!(x.data()[i] > 0.0))
      throw NumericError("log: non-positive element at flat index " +
                         std::to_string(i));
  return unary_map(
      x, g, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; }, "log");
}

Tensor clamp_val(const Tensor& x, double lo, double hi, GradGraph* g) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  const int64_t n = x.numel();
  std::vector<double> y(n);
  for (int64_t i = 0; i < n; ++i) y[i] = std::min(hi, std::max(lo, x.data()[i]));
  Tensor out = Tensor::from_values(x.shape(), std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x, lo, hi](std::vector<Tensor>&, Tensor& o) {
      const int64_t n = o.numel();
      std::vector<double> gx(n);
      for (int64_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        gx[i] = (v > lo && v < hi) ? o.grad()[i] : 0.0;
      }
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), n);
    });
  }
  return out;
}

Tensor smooth_l1_val(const Tensor& r, GradGraph* g) {
  return unary_map(
      r, g,
      [](double v) {
        const double a = std::fabs(v);
        return a < 1.0 ? 0.5 * v * v : a - 0.5;
      },
      [](double v, double) {
        if (std::fabs(v) < 1.0) return v;
        return v > 0.0 ? 1.0 : -1.0;
      },
      "smooth_l1");
}

Tensor matmul(const Tensor& a, const Tensor& b, GradGraph* g) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expects rank-2 operands, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  if (a.extent(1) != b.extent(0))
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  require_same_prec(a, b, "matmul");
  const int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<double> y(m * n, 0.0);
  matmul_raw(a.data().data(), b.data().data(), y.data(), m, k, n);
  Tensor out = Tensor::from_values({m, n}, std::move(y), a.precision());
  if (taped(g, {&a, &b})) {
    g->record({a, b}, out, [a, b, m, k, n](std::vector<Tensor>&, Tensor& o) {
      const double* go = o.grad().data();
      if (a.requires_grad()) {
        // dA[i][p] = sum_j dC[i][j] * B[p][j]
        std::vector<double> ga(m * k, 0.0);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            const double* brow = b.data().data() + p * n;
            const double* grow = go + i * n;
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + p] = acc;
          }
        const_cast<Tensor&>(a).accumulate_grad(ga.data(), m * k);
      }
      if (b.requires_grad()) {
        // dB[p][j] = sum_i A[i][p] * dC[i][j]
        std::vector<double> gb(k * n, 0.0);
        for (int64_t i = 0; i < m; ++i) {
          const double* arow = a.data().data() + i * k;
          const double* grow = go + i * n;
          for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* gbrow = gb.data() + p * n;
            for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
        const_cast<Tensor&>(b).accumulate_grad(gb.data(), k * n);
      }
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& x, GradGraph* g) {
  if (x.rank() != 2)
    throw ShapeError("transpose2d: expects rank-2, got " + shape_str(x.shape()));
  const int64_t r = x.extent(0), c = x.extent(1);
  std::vector<double> y(r * c);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) y[j * r + i] = x.data()[i * c + j];
  Tensor out = Tensor::from_values({c, r}, std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x, r, c](std::vector<Tensor>&, Tensor& o) {
      std::vector<double> gx(r * c);
      for (int64_t j = 0; j < c; ++j)
        for (int64_t i = 0; i < r; ++i) gx[i * c + j] = o.grad()[j * r + i];
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), r * c);
    });
  }
  return out;
}

namespace {

// Zero-padded copy of a C x H x W map.
std::vector<double> pad_map(const double* src, int64_t c, int64_t h, int64_t w,
                            int64_t p) {
  const int64_t hp = h + 2 * p, wp = w + 2 * p;
  std::vector<double> dst(c * hp * wp, 0.0);
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < h; ++y)
      std::memcpy(dst.data() + (ci * hp + y + p) * wp + p,
                  src + (ci * h + y) * w, sizeof(double) * w);
  return dst;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride,
              int padding, GradGraph* g) {
  if (input.rank() != 3)
    throw ShapeError("conv2d: input must be C x H x W, got " +
                     shape_str(input.shape()));
  if (kernel.rank() != 4)
    throw ShapeError("conv2d: kernel must be Cout x Cin x k x k, got " +
                     shape_str(kernel.shape()));
  if (kernel.extent(2) != kernel.extent(3))
    throw ShapeError("conv2d: kernel window must be square, got " +
                     shape_str(kernel.shape()));
  if (kernel.extent(1) != input.extent(0))
    throw ShapeError("conv2d: kernel expects " +
                     std::to_string(kernel.extent(1)) + " input channels, got " +
                     shape_str(input.shape()));
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
  require_same_prec(input, kernel, "conv2d");

  const int64_t cin = input.extent(0), h = input.extent(1), w = input.extent(2);
  const int64_t cout = kernel.extent(0), k = kernel.extent(2);
  const int64_t hp = h + 2 * padding, wp = w + 2 * padding;
  if (hp < k || wp < k)
    throw ShapeError("conv2d: window " + std::to_string(k) +
                     " exceeds padded input " + shape_str({cin, hp, wp}));
  const int64_t oh = (hp - k) / stride + 1;
  const int64_t ow = (wp - k) / stride + 1;
  const int64_t kdim = cin * k * k;

  const std::vector<double> xpad =
      pad_map(input.data().data(), cin, h, w, padding);

  // Row-chunked im2col: one K x W' patch matrix per output row, multiplied by
  // the kernel viewed as Cout x K. Column index order inside K is
  // (ci, ky, kx), matching a direct nested-loop convolution term for term so
  // the accumulation order (and thus the rounding) is identical.
  std::vector<double> y(cout * oh * ow, 0.0);
  std::vector<double> patch(kdim * ow);
  for (int64_t oy = 0; oy < oh; ++oy) {
    double* prow = patch.data();
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t ky = 0; ky < k; ++ky) {
        const double* srow = xpad.data() + (ci * hp + oy * stride + ky) * wp;
        for (int64_t kx = 0; kx < k; ++kx) {
          for (int64_t ox = 0; ox < ow; ++ox) prow[ox] = srow[ox * stride + kx];
          prow += ow;
        }
      }
    std::vector<double> crow(cout * ow, 0.0);
    matmul_raw(kernel.data().data(), patch.data(), crow.data(), cout, kdim, ow);
    for (int64_t co = 0; co < cout; ++co)
      std::memcpy(y.data() + (co * oh + oy) * ow, crow.data() + co * ow,
                  sizeof(double) * ow);
  }
  Tensor out = Tensor::from_values({cout, oh, ow}, std::move(y),
                                   input.precision());

  if (taped(g, {&input, &kernel})) {
    g->record({input, kernel}, out,
              [input, kernel, stride, padding, cin, h, w, cout, k, hp, wp, oh,
               ow, kdim](std::vector<Tensor>&, Tensor& o) {
      const double* go = o.grad().data();
      std::vector<double> xpad =
          pad_map(input.data().data(), cin, h, w, padding);
      std::vector<double> gk;
      if (kernel.requires_grad()) gk.assign(cout * kdim, 0.0);
      std::vector<double> gxpad;
      std::vector<double> kt;  // kernel transposed to K x Cout
      if (input.requires_grad()) {
        gxpad.assign(cin * hp * wp, 0.0);
        kt.assign(kdim * cout, 0.0);
        for (int64_t co = 0; co < cout; ++co)
          for (int64_t p = 0; p < kdim; ++p)
            kt[p * cout + co] = kernel.data()[co * kdim + p];
      }
      std::vector<double> patch(kdim * ow);
      std::vector<double> grow(cout * ow);
      std::vector<double> dpatch(kdim * ow);
      for (int64_t oy = 0; oy < oh; ++oy) {
        double* prow = patch.data();
        for (int64_t ci = 0; ci < cin; ++ci)
          for (int64_t ky = 0; ky < k; ++ky) {
            const double* srow =
                xpad.data() + (ci * hp + oy * stride + ky) * wp;
            for (int64_t kx = 0; kx < k; ++kx) {
              for (int64_t ox = 0; ox < ow; ++ox)
                prow[ox] = srow[ox * stride + kx];
              prow += ow;
            }
          }
        for (int64_t co = 0; co < cout; ++co)
          std::memcpy(grow.data() + co * ow, go + (co * oh + oy) * ow,
                      sizeof(double) * ow);
        if (kernel.requires_grad()) {
          // dK (Cout x Kdim) += dYrow (Cout x W') * patch^T (W' x Kdim)
          for (int64_t co = 0; co < cout; ++co) {
            const double* gr = grow.data() + co * ow;
            double* gkr = gk.data() + co * kdim;
            for (int64_t p = 0; p < kdim; ++p) {
              const double* pr = patch.data() + p * ow;
              double acc = 0.0;
              for (int64_t ox = 0; ox < ow; ++ox) acc += gr[ox] * pr[ox];
              gkr[p] += acc;
            }
          }
        }
        if (input.requires_grad()) {
          std::fill(dpatch.begin(), dpatch.end(), 0.0);
          matmul_raw(kt.data(), grow.data(), dpatch.data(), kdim, cout, ow);
          const double* dp = dpatch.data();
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ky = 0; ky < k; ++ky) {
              double* drow = gxpad.data() + (ci * hp + oy * stride + ky) * wp;
              for (int64_t kx = 0; kx < k; ++kx) {
                for (int64_t ox = 0; ox < ow; ++ox)
                  drow[ox * stride + kx] += dp[ox];
                dp += ow;
              }
            }
        }
      }
      if (kernel.requires_grad())
        const_cast<Tensor&>(kernel).accumulate_grad(gk.data(), cout * kdim);
      if (input.requires_grad()) {
        std::vector<double> gx(cin * h * w);
        for (int64_t ci = 0; ci < cin; ++ci)
          for (int64_t yy = 0; yy < h; ++yy)
            std::memcpy(gx.data() + (ci * h + yy) * w,
                        gxpad.data() + (ci * hp + yy + padding) * wp + padding,
                        sizeof(double) * w);
        const_cast<Tensor&>(input).accumulate_grad(gx.data(), cin * h * w);
      }
    });
  }
  return out;
}

Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& bias,
                   GradGraph* g) {
  if (x.rank() != 1)
    throw ShapeError("conv1d_same: input must be rank-1, got " +
                     shape_str(x.shape()));
  if (w.rank() != 1 || w.extent(0) % 2 == 0)
    throw ShapeError("conv1d_same: kernel must be rank-1 with odd length, got " +
                     shape_str(w.shape()));
  if (bias.numel() != 1)
    throw ShapeError("conv1d_same: bias must hold one element");
  require_same_prec(x, w, "conv1d_same");
  const int64_t n = x.extent(0), k = w.extent(0), off = (k - 1) / 2;
  std::vector<double> y(n);
  for (int64_t i = 0; i < n; ++i) {
    double acc = bias.data()[0];
    for (int64_t j = 0; j < k; ++j) {
      const int64_t s = i + j - off;
      if (s >= 0 && s < n) acc += w.data()[j] * x.data()[s];
    }
    y[i] = acc;
  }
  Tensor out = Tensor::from_values(x.shape(), std::move(y), x.precision());
  if (taped(g, {&x, &w, &bias})) {
    g->record({x, w, bias}, out,
              [x, w, bias, n, k, off](std::vector<Tensor>&, Tensor& o) {
      const double* go = o.grad().data();
      if (x.requires_grad()) {
        std::vector<double> gx(n, 0.0);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < k; ++j) {
            const int64_t s = i + j - off;
            if (s >= 0 && s < n) gx[s] += go[i] * w.data()[j];
          }
        const_cast<Tensor&>(x).accumulate_grad(gx.data(), n);
      }
      if (w.requires_grad()) {
        std::vector<double> gw(k, 0.0);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < k; ++j) {
            const int64_t s = i + j - off;
            if (s >= 0 && s < n) gw[j] += go[i] * x.data()[s];
          }
        const_cast<Tensor&>(w).accumulate_grad(gw.data(), k);
      }
      if (bias.requires_grad()) {
        double gb = 0.0;
        for (int64_t i = 0; i < n; ++i) gb += go[i];
        const_cast<Tensor&>(bias).accumulate_grad(&gb, 1);
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b, int axis, GradGraph* g) {
  const AxisSplit sp = split_axis(x.shape(), axis, "add_bias");
  if (b.rank() != 1 || b.extent(0) != sp.n)
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) +
                     " does not match axis extent " + std::to_string(sp.n));
  require_same_prec(x, b, "add_bias");
  std::vector<double> y(x.numel());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t c = 0; c < sp.n; ++c) {
      const double bv = b.data()[c];
      const int64_t base = (o * sp.n + c) * sp.inner;
      for (int64_t i = 0; i < sp.inner; ++i) y[base + i] = x.data()[base + i] + bv;
    }
  Tensor out = Tensor::from_values(x.shape(), std::move(y), x.precision());
  if (taped(g, {&x, &b})) {
    g->record({x, b}, out, [x, b, sp](std::vector<Tensor>&, Tensor& o) {
      const double* go = o.grad().data();
      if (x.requires_grad())
        const_cast<Tensor&>(x).accumulate_grad(go, o.numel());
      if (b.requires_grad()) {
        std::vector<double> gb(sp.n, 0.0);
        for (int64_t oo = 0; oo < sp.outer; ++oo)
          for (int64_t c = 0; c < sp.n; ++c) {
            const int64_t base = (oo * sp.n + c) * sp.inner;
            double acc = 0.0;
            for (int64_t i = 0; i < sp.inner; ++i) acc += go[base + i];
            gb[c] += acc;
          }
        const_cast<Tensor&>(b).accumulate_grad(gb.data(), sp.n);
      }
    });
  }
  return out;
}

Tensor mul_bias(const Tensor& x, const Tensor& s, int axis, GradGraph* g) {
  const AxisSplit sp = split_axis(x.shape(), axis, "mul_bias");
  if (s.rank() != 1 || s.extent(0) != sp.n)
    throw ShapeError("mul_bias: scale " + shape_str(s.shape()) +
                     " does not match axis extent " + std::to_string(sp.n));
  require_same_prec(x, s, "mul_bias");
  std::vector<double> y(x.numel());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t c = 0; c < sp.n; ++c) {
      const double sv = s.data()[c];
      const int64_t base = (o * sp.n + c) * sp.inner;
      for (int64_t i = 0; i < sp.inner; ++i) y[base + i] = x.data()[base + i] * sv;
    }
  Tensor out = Tensor::from_values(x.shape(), std::move(y), x.precision());
  if (taped(g, {&x, &s})) {
    g->record({x, s}, out, [x, s, sp](std::vector<Tensor>&, Tensor& o) {
      const double* go = o.grad().data();
      if (x.requires_grad()) {
        std::vector<double> gx(o.numel());
        for (int64_t oo = 0; oo < sp.outer; ++oo)
          for (int64_t c = 0; c < sp.n; ++c) {
            const double sv = s.data()[c];
            const int64_t base = (oo * sp.n + c) * sp.inner;
            for (int64_t i = 0; i < sp.inner; ++i) gx[base + i] = go[base + i] * sv;
          }
        const_cast<Tensor&>(x).accumulate_grad(gx.data(), o.numel());
      }
      if (s.requires_grad()) {
        std::vector<double> gs(sp.n, 0.0);
        for (int64_t oo = 0; oo < sp.outer; ++oo)
          for (int64_t c = 0; c < sp.n; ++c) {
            const int64_t base = (oo * sp.n + c) * sp.inner;
            double acc = 0.0;
            for (int64_t i = 0; i < sp.inner; ++i)
              acc += go[base + i] * x.data()[base + i];
            gs[c] += acc;
          }
        const_cast<Tensor&>(s).accumulate_grad(gs.data(), sp.n);
      }
    });
  }
  return out;
}

namespace {

constexpr double kGeluC1 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC2 = 0.044715;

double gelu_fwd(double v) {
  return 0.5 * v * (1.0 + std::tanh(kGeluC1 * (v + kGeluC2 * v * v * v)));
}

double gelu_bwd(double v, double) {
  const double u = kGeluC1 * (v + kGeluC2 * v * v * v);
  const double t = std::tanh(u);
  const double du = kGeluC1 * (1.0 + 3.0 * kGeluC2 * v * v);
  return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
}

double sigmoid_fwd(double v) {
  if (v >= 0.0) {
    const double e = std::exp(-v);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor relu(const Tensor& x, GradGraph* g) {
  return unary_map(
      x, g, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }, "relu");
}

Tensor gelu(const Tensor& x, GradGraph* g) {
  return unary_map(x, g, gelu_fwd, gelu_bwd, "gelu");
}

Tensor sigmoid(const Tensor& x, GradGraph* g) {
  return unary_map(
      x, g, sigmoid_fwd, [](double, double y) { return y * (1.0 - y); },
      "sigmoid");
}

Tensor tanh_act(const Tensor& x, GradGraph* g) {
  return unary_map(
      x, g, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Tensor activation(const Tensor& x, Act kind, GradGraph* g) {
  switch (kind) {
    case Act::relu: return relu(x, g);
    case Act::gelu: return gelu(x, g);
    case Act::sigmoid: return sigmoid(x, g);
    case Act::tanh_: return tanh_act(x, g);
  }
  throw ContractError("activation: unknown kind");
}

Tensor softmax(const Tensor& x, int axis, GradGraph* g) {
  const AxisSplit sp = split_axis(x.shape(), axis, "softmax");
  std::vector<double> y(x.numel());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      const int64_t base = o * sp.n * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < sp.n; ++c)
        mx = std::max(mx, x.data()[base + c * sp.inner]);
      double sum = 0.0;
      for (int64_t c = 0; c < sp.n; ++c) {
        const double e = std::exp(x.data()[base + c * sp.inner] - mx);
        y[base + c * sp.inner] = e;
        sum += e;
      }
      for (int64_t c = 0; c < sp.n; ++c) y[base + c * sp.inner] /= sum;
    }
  Tensor out = Tensor::from_values(x.shape(), std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x, out, sp](std::vector<Tensor>&, Tensor& o) {
      const double* go = o.grad().data();
      std::vector<double> gx(o.numel());
      for (int64_t oo = 0; oo < sp.outer; ++oo)
        for (int64_t i = 0; i < sp.inner; ++i) {
          const int64_t base = oo * sp.n * sp.inner + i;
          double dot = 0.0;
          for (int64_t c = 0; c < sp.n; ++c) {
            const int64_t idx = base + c * sp.inner;
            dot += go[idx] * out.data()[idx];
          }
          for (int64_t c = 0; c < sp.n; ++c) {
            const int64_t idx = base + c * sp.inner;
            gx[idx] = out.data()[idx] * (go[idx] - dot);
          }
        }
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), o.numel());
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x, int axis, GradGraph* g) {
  const AxisSplit sp = split_axis(x.shape(), axis, "log_softmax");
  std::vector<double> y(x.numel());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      const int64_t base = o * sp.n * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < sp.n; ++c)
        mx = std::max(mx, x.data()[base + c * sp.inner]);
      double sum = 0.0;
      for (int64_t c = 0; c < sp.n; ++c)
        sum += std::exp(x.data()[base + c * sp.inner] - mx);
      const double lse = mx + std::log(sum);
      for (int64_t c = 0; c < sp.n; ++c)
        y[base + c * sp.inner] = x.data()[base + c * sp.inner] - lse;
    }
  Tensor out = Tensor::from_values(x.shape(), std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x, out, sp](std::vector<Tensor>&, Tensor& o) {
      const double* go = o.grad().data();
      std::vector<double> gx(o.numel());
      for (int64_t oo = 0; oo < sp.outer; ++oo)
        for (int64_t i = 0; i < sp.inner; ++i) {
          const int64_t base = oo * sp.n * sp.inner + i;
          double sum = 0.0;
          for (int64_t c = 0; c < sp.n; ++c) sum += go[base + c * sp.inner];
          for (int64_t c = 0; c < sp.n; ++c) {
            const int64_t idx = base + c * sp.inner;
            gx[idx] = go[idx] - std::exp(out.data()[idx]) * sum;
          }
        }
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), o.numel());
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, int axis, double eps, GradGraph* g) {
  const AxisSplit sp = split_axis(x.shape(), axis, "layer_norm");
  if (sp.n < 2) throw ShapeError("layer_norm: axis extent must be >= 2");
  std::vector<double> y(x.numel());
  std::vector<double> inv_sigma(sp.outer * sp.inner);
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      const int64_t base = o * sp.n * sp.inner + i;
      double mean = 0.0;
      for (int64_t c = 0; c < sp.n; ++c) mean += x.data()[base + c * sp.inner];
      mean /= static_cast<double>(sp.n);
      double var = 0.0;
      for (int64_t c = 0; c < sp.n; ++c) {
        const double d = x.data()[base + c * sp.inner] - mean;
        var += d * d;
      }
      var /= static_cast<double>(sp.n);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_sigma[o * sp.inner + i] = is;
      for (int64_t c = 0; c < sp.n; ++c)
        y[base + c * sp.inner] = (x.data()[base + c * sp.inner] - mean) * is;
    }
  Tensor out = Tensor::from_values(x.shape(), std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out,
              [x, out, sp, inv_sigma](std::vector<Tensor>&, Tensor& o) {
      const double* go = o.grad().data();
      std::vector<double> gx(o.numel());
      const double n = static_cast<double>(sp.n);
      for (int64_t oo = 0; oo < sp.outer; ++oo)
        for (int64_t i = 0; i < sp.inner; ++i) {
          const int64_t base = oo * sp.n * sp.inner + i;
          const double is = inv_sigma[oo * sp.inner + i];
          double gsum = 0.0, gysum = 0.0;
          for (int64_t c = 0; c < sp.n; ++c) {
            const int64_t idx = base + c * sp.inner;
            gsum += go[idx];
            gysum += go[idx] * out.data()[idx];
          }
          for (int64_t c = 0; c < sp.n; ++c) {
            const int64_t idx = base + c * sp.inner;
            gx[idx] =
                is * (go[idx] - gsum / n - out.data()[idx] * gysum / n);
          }
        }
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), o.numel());
    });
  }
  return out;
}

Tensor reduce_sum(const Tensor& x, GradGraph* g) {
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.data()[i];
  Tensor out = Tensor::from_values({1}, {s}, x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x](std::vector<Tensor>&, Tensor& o) {
      std::vector<double> gx(x.numel(), o.grad()[0]);
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), x.numel());
    });
  }
  return out;
}

Tensor reduce_mean(const Tensor& x, GradGraph* g) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.data()[i];
  Tensor out = Tensor::from_values({1}, {s / n}, x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x, n](std::vector<Tensor>&, Tensor& o) {
      std::vector<double> gx(x.numel(), o.grad()[0] / n);
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), x.numel());
    });
  }
  return out;
}

Tensor avg_pool_global(const Tensor& x, GradGraph* g) {
  if (x.rank() != 3)
    throw ShapeError("avg_pool_global: expects C x H x W, got " +
                     shape_str(x.shape()));
  const int64_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
  std::vector<double> y(c, 0.0);
  for (int64_t ci = 0; ci < c; ++ci) {
    double s = 0.0;
    for (int64_t i = 0; i < hw; ++i) s += x.data()[ci * hw + i];
    y[ci] = s / static_cast<double>(hw);
  }
  Tensor out = Tensor::from_values({c, 1, 1}, std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x, c, hw](std::vector<Tensor>&, Tensor& o) {
      std::vector<double> gx(c * hw);
      for (int64_t ci = 0; ci < c; ++ci) {
        const double v = o.grad()[ci] / static_cast<double>(hw);
        for (int64_t i = 0; i < hw; ++i) gx[ci * hw + i] = v;
      }
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), c * hw);
    });
  }
  return out;
}

Tensor avg_pool_2d(const Tensor& x, int window, GradGraph* g) {
  if (x.rank() != 3)
    throw ShapeError("avg_pool_2d: expects C x H x W, got " +
                     shape_str(x.shape()));
  if (window < 1) throw ContractError("avg_pool_2d: window must be >= 1");
  const int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (h % window != 0 || w % window != 0)
    throw ShapeError("avg_pool_2d: window " + std::to_string(window) +
                     " must divide " + shape_str(x.shape()));
  const int64_t oh = h / window, ow = w / window;
  const double inv = 1.0 / static_cast<double>(window * window);
  std::vector<double> y(c * oh * ow, 0.0);
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (int64_t ky = 0; ky < window; ++ky)
          for (int64_t kx = 0; kx < window; ++kx)
            s += x.data()[(ci * h + oy * window + ky) * w + ox * window + kx];
        y[(ci * oh + oy) * ow + ox] = s * inv;
      }
  Tensor out = Tensor::from_values({c, oh, ow}, std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out,
              [x, c, h, w, oh, ow, window, inv](std::vector<Tensor>&, Tensor& o) {
      std::vector<double> gx(c * h * w, 0.0);
      for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox) {
            const double v = o.grad()[(ci * oh + oy) * ow + ox] * inv;
            for (int64_t ky = 0; ky < window; ++ky)
              for (int64_t kx = 0; kx < window; ++kx)
                gx[(ci * h + oy * window + ky) * w + ox * window + kx] = v;
          }
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), c * h * w);
    });
  }
  return out;
}

Tensor reduce(const Tensor& x, Reduce kind, ReduceParams params, GradGraph* g) {
  switch (kind) {
    case Reduce::sum: return reduce_sum(x, g);
    case Reduce::mean: return reduce_mean(x, g);
    case Reduce::avg_pool_global: return avg_pool_global(x, g);
    case Reduce::avg_pool_2d: return avg_pool_2d(x, params.window, g);
  }
  throw ContractError("reduce: unknown kind");
}

Tensor upsample_nearest(const Tensor& x, int factor, GradGraph* g) {
  if (x.rank() != 3)
    throw ShapeError("upsample_nearest: expects C x H x W, got " +
                     shape_str(x.shape()));
  if (factor < 1) throw ContractError("upsample_nearest: factor must be >= 1");
  const int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  const int64_t oh = h * factor, ow = w * factor;
  std::vector<double> y(c * oh * ow);
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t oy = 0; oy < oh; ++oy) {
      const double* srow = x.data().data() + (ci * h + oy / factor) * w;
      double* drow = y.data() + (ci * oh + oy) * ow;
      for (int64_t ox = 0; ox < ow; ++ox) drow[ox] = srow[ox / factor];
    }
  Tensor out = Tensor::from_values({c, oh, ow}, std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out,
              [x, c, h, w, oh, ow, factor](std::vector<Tensor>&, Tensor& o) {
      std::vector<double> gx(c * h * w, 0.0);
      for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t oy = 0; oy < oh; ++oy) {
          const double* grow = o.grad().data() + (ci * oh + oy) * ow;
          double* drow = gx.data() + (ci * h + oy / factor) * w;
          for (int64_t ox = 0; ox < ow; ++ox) drow[ox / factor] += grow[ox];
        }
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), c * h * w);
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape, GradGraph* g) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  Tensor out = Tensor::from_values(new_shape, x.data(), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x](std::vector<Tensor>&, Tensor& o) {
      const_cast<Tensor&>(x).accumulate_grad(o.grad().data(), o.numel());
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis, GradGraph* g) {
  if (xs.empty()) throw ContractError("concat: needs at least one input");
  const Shape& ref = xs[0].shape();
  int64_t total = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != xs[0].rank())
      throw ShapeError("concat: rank mismatch");
    if (t.precision() != xs[0].precision())
      throw ContractError("concat: mixed precision operands");
    for (int i = 0; i < static_cast<int>(ref.size()); ++i)
      if (i != axis && t.extent(i) != ref[i])
        throw ShapeError("concat: extent mismatch at axis " +
                         std::to_string(i) + ", " + shape_str(t.shape()) +
                         " vs " + shape_str(ref));
    total += t.extent(axis);
  }
  const AxisSplit sp = split_axis(ref, axis, "concat");
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<double> y(sp.outer * total * sp.inner);
  int64_t off = 0;
  for (const Tensor& t : xs) {
    const int64_t tn = t.extent(axis);
    for (int64_t o = 0; o < sp.outer; ++o)
      std::memcpy(y.data() + (o * total + off) * sp.inner,
                  t.data().data() + o * tn * sp.inner,
                  sizeof(double) * tn * sp.inner);
    off += tn;
  }
  Tensor out = Tensor::from_values(out_shape, std::move(y), xs[0].precision());
  bool any = false;
  if (g)
    for (const Tensor& t : xs) any = any || t.requires_grad();
  if (any) {
    g->record(xs, out, [xs, sp, total, axis](std::vector<Tensor>&, Tensor& o) {
      int64_t off = 0;
      for (const Tensor& t : xs) {
        const int64_t tn = t.extent(axis);
        if (t.requires_grad()) {
          std::vector<double> gt(t.numel());
          for (int64_t oo = 0; oo < sp.outer; ++oo)
            std::memcpy(gt.data() + oo * tn * sp.inner,
                        o.grad().data() + (oo * total + off) * sp.inner,
                        sizeof(double) * tn * sp.inner);
          const_cast<Tensor&>(t).accumulate_grad(gt.data(), t.numel());
        }
        off += tn;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len,
             GradGraph* g) {
  const AxisSplit sp = split_axis(x.shape(), axis, "slice");
  if (start < 0 || len < 1 || start + len > sp.n)
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of bounds for axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> y(sp.outer * len * sp.inner);
  for (int64_t o = 0; o < sp.outer; ++o)
    std::memcpy(y.data() + o * len * sp.inner,
                x.data().data() + (o * sp.n + start) * sp.inner,
                sizeof(double) * len * sp.inner);
  Tensor out = Tensor::from_values(out_shape, std::move(y), x.precision());
  if (taped(g, {&x})) {
    g->record({x}, out, [x, sp, start, len](std::vector<Tensor>&, Tensor& o) {
      std::vector<double> gx(x.numel(), 0.0);
      for (int64_t oo = 0; oo < sp.outer; ++oo)
        std::memcpy(gx.data() + (oo * sp.n + start) * sp.inner,
                    o.grad().data() + oo * len * sp.inner,
                    sizeof(double) * len * sp.inner);
      const_cast<Tensor&>(x).accumulate_grad(gx.data(), x.numel());
    });
  }
  return out;
}

}  // namespace iidsu
