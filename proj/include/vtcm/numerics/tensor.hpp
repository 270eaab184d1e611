#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vtcm::num {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Dense row-major tensor with shared, reference-counted storage.
//
// Values produced by ops are never modified afterwards; the only mutation
// paths are mutable_data() (optimizers, topic updates) and the gradient
// buffer, which the tape fills during backward().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);
  // Leaf that participates in differentiation.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  std::vector<double> to_vector() const { return impl_->data; }
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return impl_->grad; }
  std::vector<double> grad_or_zero() const;
  void zero_grad();

  // Copy of the values with no tape history.
  Tensor detach() const;
  Tensor clone_parameter() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(Shape shape, std::vector<double> values);

  std::shared_ptr<TensorImpl> impl_;
};

Tensor make_result(Shape shape, std::vector<double> values);

// Records ops while alive on the current thread. Only one tape may be active
// per thread; ops evaluated with no tape build no history.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Reverse sweep from a scalar root. Gradients accumulate into every leaf
  // with requires_grad.
  void backward(const Tensor& root);
  void clear();
  std::size_t size() const { return nodes_.size(); }

  void record(std::shared_ptr<TensorImpl> out, std::function<void()> backward_fn);

 private:
  struct Node {
    std::shared_ptr<TensorImpl> out;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
};

// Suspends recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

}  // namespace vtcm::num
