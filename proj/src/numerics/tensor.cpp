#include "vtcm/numerics/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "vtcm/error.hpp"

namespace vtcm::num {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor make_result(Shape shape, std::vector<double> values) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return make_result(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + to_string(shape));
  }
  return make_result(std::move(shape), std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape s{values.size()};
  return make_result(std::move(s), std::move(values));
}

Tensor Tensor::scalar(double value) { return make_result({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= ndim()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw ShapeError("rows() needs a matrix, got " + to_string(shape()));
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw ShapeError("cols() needs a matrix, got " + to_string(shape()));
  return impl_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return impl_->data[r * cols() + c];
}

std::vector<double> Tensor::grad_or_zero() const {
  if (impl_->grad.size() == impl_->data.size()) return impl_->grad;
  return std::vector<double>(impl_->data.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return make_result(impl_->shape, impl_->data); }

Tensor Tensor::clone_parameter() const {
  Tensor t = detach();
  t.impl_->requires_grad = true;
  return t;
}

Tape::Tape() : previous_(g_active_tape) {
  if (previous_ != nullptr) {
    throw InvalidArgument("a gradient tape is already active on this thread");
  }
  g_active_tape = this;
}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<TensorImpl> out, std::function<void()> backward_fn) {
  out->requires_grad = true;
  nodes_.push_back(Node{std::move(out), std::move(backward_fn)});
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1 || root.ndim() != 0) {
    throw ShapeError("backward() needs a scalar root, got " +
                     (root.defined() ? to_string(root.shape()) : std::string("undefined")));
  }
  if (!root.requires_grad()) return;
  root.impl()->ensure_grad();
  root.impl()->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // not reachable from root
    it->backward();
  }
}

void Tape::clear() { nodes_.clear(); }

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

}  // namespace vtcm::num
