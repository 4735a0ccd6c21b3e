#include "lctr/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace lctr {

namespace {
thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape,
                                              std::vector<double> values,
                                              bool requires_grad) {
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw DimensionError("tensor extents must be positive, got " +
                           shape_to_string(shape));
    }
  }
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return impl;
}
}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

double* detail::TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad.data();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> values(shape_numel(shape), value);
  return Tensor(make_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  return Tensor(make_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("shape() on an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for shape " + shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) return {};
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) return {};
  return impl_->data;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) {
    throw UsageError("item() requires a single-element tensor, got " +
                     shape_to_string(shape()));
  }
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) {
    throw DimensionError("index rank does not match shape " +
                         shape_to_string(s));
  }
  std::size_t offset = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) {
      throw DimensionError("index out of range for shape " +
                           shape_to_string(s));
    }
    offset = offset * s[axis] + i;
    ++axis;
  }
  return impl_->data[offset];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw UsageError("set_requires_grad on an undefined tensor");
  if (!impl_->is_leaf()) {
    throw UsageError("requires_grad can only be changed on leaf tensors");
  }
  impl_->requires_grad = flag;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const {
  if (!impl_) return {};
  return Tensor(make_impl(impl_->shape, impl_->data, false));
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return Tensor(make_impl(impl_->shape, impl_->data, impl_->requires_grad));
}

void Tensor::backward() const {
  if (!impl_) throw UsageError("backward() on an undefined tensor");
  if (impl_->data.size() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " +
                     shape_to_string(impl_->shape));
  }
  if (!impl_->requires_grad) {
    throw UsageError("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS gives a topological order with operands first.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorImpl* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::TensorImpl* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0);
  }
  impl_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

Tensor ParameterList::add(std::string name, Tensor tensor) {
  if (find(name) != nullptr) {
    throw UsageError("duplicate parameter name: " + name);
  }
  tensor.set_requires_grad(true);
  items_.push_back(Parameter{std::move(name), std::move(tensor)});
  return items_.back().tensor;
}

void ParameterList::extend(const ParameterList& other) {
  for (const auto& p : other.items()) add(p.name, p.tensor);
}

std::size_t ParameterList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

const Parameter* ParameterList::find(const std::string& name) const {
  auto it = std::find_if(items_.begin(), items_.end(),
                         [&](const Parameter& p) { return p.name == name; });
  return it == items_.end() ? nullptr : &*it;
}

void ParameterList::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

}  // namespace lctr
