#include "fusecore/tensor.hpp"

#include <numeric>
#include <sstream>

#include "fusecore/error.hpp"

namespace fusecore {

namespace {
thread_local Tape* g_current_tape = nullptr;

const detail::ImplPtr& checked(const detail::ImplPtr& impl) {
  if (!impl) throw ContractError("operation on an undefined tensor");
  return impl;
}
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor make_tensor(detail::ImplPtr impl) { return Tensor(std::move(impl)); }

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return adopt(std::move(shape), Buffer(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  return adopt(std::move(shape), Buffer(data.begin(), data.end()));
}

Tensor Tensor::adopt(Shape shape, Buffer data) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.impl_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return checked(impl_)->shape; }
std::size_t Tensor::size() const { return checked(impl_)->data.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  return s.size() == 1 ? 1 : s[0];
}

std::size_t Tensor::cols() const { return shape().back(); }

std::span<const double> Tensor::data() const { return checked(impl_)->data; }
std::span<double> Tensor::mutable_data() { return checked(impl_)->data; }
std::vector<double> Tensor::to_vector() const {
  const auto& d = checked(impl_)->data;
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t i) const { return data()[i]; }

double Tensor::at(std::size_t row, std::size_t col) const { return data()[row * cols() + col]; }

bool Tensor::requires_grad() const { return checked(impl_)->requires_grad; }
void Tensor::set_requires_grad(bool value) { checked(impl_)->requires_grad = value; }
bool Tensor::has_grad() const { return !checked(impl_)->grad.empty(); }

std::span<const double> Tensor::grad() const {
  return checked(impl_)->ensure_grad();
}

std::span<double> Tensor::mutable_grad() { return checked(impl_)->ensure_grad(); }

void Tensor::zero_grad() {
  auto& g = checked(impl_)->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::clear_grad() {
  auto& g = checked(impl_)->grad;
  g.clear();
  g.shrink_to_fit();
}

Tensor Tensor::detach() const { return from(shape(), to_vector()); }

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != size()) {
    throw DimensionError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
  }
  return from(std::move(new_shape), to_vector());
}

Tape::Scope::Scope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }
Tape::Scope::~Scope() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(Node node) {
  node.output->interior = true;
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& root) {
  if (!root.defined()) throw ContractError("backward on an undefined tensor");
  if (root.size() != 1) {
    throw ContractError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  }
  for (auto& node : nodes_) {
    auto& g = node.output->grad;
    std::fill(g.begin(), g.end(), 0.0);
  }
  const auto& root_impl = root.impl();
  if (!root_impl->requires_grad) return;
  root_impl->ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
}

void Tape::clear() {
  nodes_.clear();
  nodes_.shrink_to_fit();
}

NoGradGuard::NoGradGuard() : previous_(g_current_tape) { g_current_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_current_tape = previous_; }

}  // namespace fusecore
