#pragma once

#include "iidsu/tensor.hpp"

namespace iidsu {

// Primitive differentiable operations. Every function computes the forward
// value immediately and, when `g` is non-null and some input carries
// requires_grad, appends a backward rule to the tape. Passing g == nullptr
// gives plain evaluation.
//
// Shapes follow a channels-first convention: images and feature maps are
// C x H x W, token matrices are N x C.

enum class Act { relu, gelu, sigmoid, tanh_ };
enum class Reduce { sum, mean, avg_pool_global, avg_pool_2d };

struct ReduceParams {
  int window = 0;  // avg_pool_2d only
};

Tensor add(const Tensor& a, const Tensor& b, GradGraph* g = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, GradGraph* g = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, GradGraph* g = nullptr);
Tensor scalar_mul(const Tensor& x, double s, GradGraph* g = nullptr);
Tensor scalar_add(const Tensor& x, double s, GradGraph* g = nullptr);

Tensor abs_val(const Tensor& x, GradGraph* g = nullptr);
/// Natural log; every element must be > 0.
Tensor log_val(const Tensor& x, GradGraph* g = nullptr);
Tensor clamp_val(const Tensor& x, double lo, double hi, GradGraph* g = nullptr);
/// Elementwise smooth-L1 of a residual: 0.5 r^2 for |r| < 1, |r| - 0.5 beyond.
Tensor smooth_l1_val(const Tensor& r, GradGraph* g = nullptr);

Tensor matmul(const Tensor& a, const Tensor& b, GradGraph* g = nullptr);
Tensor transpose2d(const Tensor& x, GradGraph* g = nullptr);

/// Cross-correlation of input (Cin x H x W) with kernel (Cout x Cin x k x k).
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride,
              int padding, GradGraph* g = nullptr);
/// Same-length 1-D convolution of a vector with an odd-sized kernel plus a
/// scalar bias (zero padded).
Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& bias,
                   GradGraph* g = nullptr);

/// y = x + b broadcast along `axis` (b is rank-1 with length x.extent(axis)).
Tensor add_bias(const Tensor& x, const Tensor& b, int axis,
                GradGraph* g = nullptr);
/// y = x * s broadcast along `axis`.
Tensor mul_bias(const Tensor& x, const Tensor& s, int axis,
                GradGraph* g = nullptr);

Tensor activation(const Tensor& x, Act kind, GradGraph* g = nullptr);
Tensor relu(const Tensor& x, GradGraph* g = nullptr);
Tensor gelu(const Tensor& x, GradGraph* g = nullptr);
Tensor sigmoid(const Tensor& x, GradGraph* g = nullptr);
Tensor tanh_act(const Tensor& x, GradGraph* g = nullptr);

Tensor softmax(const Tensor& x, int axis, GradGraph* g = nullptr);
Tensor log_softmax(const Tensor& x, int axis, GradGraph* g = nullptr);
/// Normalizes each slice along `axis` to zero mean, unit variance.
Tensor layer_norm(const Tensor& x, int axis, double eps = 1e-5,
                  GradGraph* g = nullptr);

Tensor reduce(const Tensor& x, Reduce kind, ReduceParams params = {},
              GradGraph* g = nullptr);
Tensor reduce_sum(const Tensor& x, GradGraph* g = nullptr);
Tensor reduce_mean(const Tensor& x, GradGraph* g = nullptr);
/// C x H x W -> C x 1 x 1 spatial mean.
Tensor avg_pool_global(const Tensor& x, GradGraph* g = nullptr);
/// Non-overlapping k x k mean pooling; extents must divide exactly.
Tensor avg_pool_2d(const Tensor& x, int window, GradGraph* g = nullptr);
/// Nearest-neighbour upsampling of C x H x W by an integer factor.
Tensor upsample_nearest(const Tensor& x, int factor, GradGraph* g = nullptr);

Tensor reshape(const Tensor& x, Shape new_shape, GradGraph* g = nullptr);
Tensor concat(const std::vector<Tensor>& xs, int axis, GradGraph* g = nullptr);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len,
             GradGraph* g = nullptr);

}  // namespace iidsu
