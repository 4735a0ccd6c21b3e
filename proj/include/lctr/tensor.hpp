#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lctr {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents do not fit an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for invalid hyperparameters or configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an API is called in a state that does not allow it.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  // Autograd node: parents in operand order and the closure that pushes
  // this tensor's grad into them. Empty for leaves.
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  double* grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor of doubles with optional reverse-mode gradient
/// tracking.
///
/// A Tensor is a shared handle: copies alias the same storage, and the
/// autograd graph keeps operands alive for as long as a result refers to
/// them. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Mutable view of the values. Writing through it does not invalidate
  /// graphs that already consumed this tensor; rebuild them instead.
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Same values, no history, no grad tracking.
  Tensor detach() const;
  /// Deep copy of values; the copy is a leaf with the same requires_grad.
  Tensor clone() const;

  /// Reverse-mode sweep from this scalar. Leaf grads accumulate across
  /// calls; intermediate grads are recomputed on each call.
  void backward() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// A trainable tensor with a model-unique name.
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Ordered collection of parameters; rejects duplicate names.
class ParameterList {
 public:
  /// Registers the tensor as trainable and returns the shared handle.
  Tensor add(std::string name, Tensor tensor);
  void extend(const ParameterList& other);

  const std::vector<Parameter>& items() const { return items_; }
  std::vector<Parameter>& items() { return items_; }
  std::size_t size() const { return items_.size(); }
  /// Total number of scalar entries across all parameters.
  std::size_t scalar_count() const;
  const Parameter* find(const std::string& name) const;
  void zero_grad();

 private:
  std::vector<Parameter> items_;
};

}  // namespace lctr
