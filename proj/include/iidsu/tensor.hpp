#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace iidsu {

// Storage precision of a tensor. Values are held as doubles either way;
// f32 tensors round every stored value through IEEE float so that training
// runs and checkpoints behave like single precision while the engine keeps
// one code path.
enum class Precision : uint8_t { f32 = 4, f64 = 8 };

// Error taxonomy. Every throw in the library uses one of these so callers
// (and the CLI) can map failures to a stable category.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
double quantize_value(double v, Precision p);

/// Dense n-dimensional array participating in a reverse-mode graph.
/// Copying a Tensor copies a handle; the underlying buffer is shared and
/// treated as immutable after construction, except for gradient
/// accumulation during backward and explicit parameter updates between
/// training steps (data_mut).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, Precision p = Precision::f64,
                      bool requires_grad = false);
  static Tensor full(Shape shape, double value, Precision p = Precision::f64,
                     bool requires_grad = false);
  static Tensor scalar(double value, Precision p = Precision::f64);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            Precision p = Precision::f64,
                            bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
  int64_t extent(int axis) const;
  Precision precision() const { return node_->prec; }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& data() const { return node_->data; }
  /// Mutable access for parameter updates and deserialization. Never call
  /// on a tensor that already participates in a recorded graph.
  std::vector<double>& data_mut() { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();
  /// Adds `g` (length numel) into this tensor's grad, allocating it on
  /// first use.
  void accumulate_grad(const double* g, int64_t n);
  std::vector<double>& grad_mut();

  /// Value of a one-element tensor.
  double value() const;
  double at(const std::vector<int64_t>& idx) const;

  /// Identity of the underlying buffer (used by the tape).
  const void* id() const { return node_.get(); }

  /// Marks an op output as grad-carrying. Library-internal; called by the
  /// tape when an op is recorded.
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    Precision prec = Precision::f64;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;

  static Tensor make(Shape shape, std::vector<double> values, Precision p,
                     bool requires_grad);
};

/// Tape of primitive operations in application order. backward() replays
/// the tape in reverse, visiting each record exactly once. One graph (and
/// the tensors recorded on it) belongs to one logical thread at a time;
/// distinct graphs are independent.
class GradGraph {
 public:
  using BackwardFn = std::function<void(std::vector<Tensor>& inputs,
                                        Tensor& output)>;

  /// Appends a record. `fn` must read output.grad and accumulate into the
  /// inputs' grads. Public so tests and extensions can register custom
  /// primitives.
  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Requires a
  /// one-element loss. Call once per recorded graph; accumulating gradients
  /// over several forward passes means one graph per pass, leaf grads add up.
  void backward(const Tensor& loss);

  size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  struct Record {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Record> records_;
};

}  // namespace iidsu
