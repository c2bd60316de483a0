#include "iidsu/tensor.hpp"

#include <sstream>

namespace iidsu {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

double quantize_value(double v, Precision p) {
  return p == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

Tensor Tensor::make(Shape shape, std::vector<double> values, Precision p,
                    bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (int64_t e : shape) {
    if (e < 1)
      throw ShapeError("tensor extents must all be >= 1, got " +
                       shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  if (p == Precision::f32)
    for (double& v : values) v = quantize_value(v, p);
  t.node_->data = std::move(values);
  t.node_->prec = p;
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::zeros(Shape shape, Precision p, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), 0.0);
  return make(std::move(shape), std::move(v), p, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, Precision p,
                    bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), value);
  return make(std::move(shape), std::move(v), p, requires_grad);
}

Tensor Tensor::scalar(double value, Precision p) {
  return make({1}, {value}, p, false);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, Precision p,
                           bool requires_grad) {
  return make(std::move(shape), std::move(values), p, requires_grad);
}

int64_t Tensor::extent(int axis) const {
  if (axis < 0 || axis >= rank())
    throw ShapeError("axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape()));
  return node_->shape[static_cast<size_t>(axis)];
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty())
    throw ContractError("tensor has no gradient; run backward first");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty())
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::vector<double>& Tensor::grad_mut() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::accumulate_grad(const double* g, int64_t n) {
  if (n != numel())
    throw ShapeError("gradient length " + std::to_string(n) +
                     " does not match tensor numel " + std::to_string(numel()));
  auto& dst = grad_mut();
  for (int64_t i = 0; i < n; ++i) dst[static_cast<size_t>(i)] += g[i];
}

double Tensor::value() const {
  if (numel() != 1)
    throw ContractError("value() requires a one-element tensor, got shape " +
                        shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(const std::vector<int64_t>& idx) const {
  if (static_cast<int>(idx.size()) != rank())
    throw ShapeError("index rank mismatch for shape " + shape_str(shape()));
  int64_t off = 0;
  for (size_t d = 0; d < idx.size(); ++d) {
    if (idx[d] < 0 || idx[d] >= node_->shape[d])
      throw ShapeError("index out of range for shape " + shape_str(shape()));
    off = off * node_->shape[d] + idx[d];
  }
  return node_->data[static_cast<size_t>(off)];
}

void GradGraph::record(std::vector<Tensor> inputs, Tensor output,
                       BackwardFn fn) {
  output.set_requires_grad(true);
  records_.push_back(Record{std::move(inputs), std::move(output), std::move(fn)});
}

void GradGraph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward requires a one-element loss tensor");
  Tensor seed = loss;
  double one = 1.0;
  seed.accumulate_grad(&one, 1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // branch never reached the loss
    it->fn(it->inputs, it->output);
  }
}

}  // namespace iidsu
