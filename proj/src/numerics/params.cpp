#include "vtcm/numerics/params.hpp"

#include <cmath>

#include "vtcm/error.hpp"

namespace vtcm::num {

Tensor& ParameterStore::create(const std::string& name, Shape shape,
                               std::vector<double> values) {
  if (contains(name)) throw InvalidArgument("duplicate parameter " + name);
  auto [it, inserted] =
      tensors_.emplace(name, Tensor::parameter(std::move(shape), std::move(values)));
  return it->second;
}

Tensor& ParameterStore::zeros(const std::string& name, Shape shape) {
  return constant(name, std::move(shape), 0.0);
}

Tensor& ParameterStore::constant(const std::string& name, Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return create(name, std::move(shape), std::vector<double>(n, value));
}

Tensor& ParameterStore::xavier(const std::string& name, Shape shape, RngStream& rng) {
  const std::size_t n = shape_size(shape);
  const double fan_out = shape.size() >= 2 ? static_cast<double>(shape[shape.size() - 2])
                                           : static_cast<double>(n);
  const double fan_in = shape.empty() ? 1.0 : static_cast<double>(shape.back());
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> values(n);
  for (double& v : values) v = (2.0 * rng.uniform() - 1.0) * a;
  return create(name, std::move(shape), std::move(values));
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw InvalidArgument("unknown parameter " + name);
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw InvalidArgument("unknown parameter " + name);
  return it->second;
}

std::vector<std::pair<std::string, Tensor>> ParameterStore::with_prefix(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, t] : tensors_) {
    if (name.rfind(prefix, 0) == 0) out.emplace_back(name, t);
  }
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : tensors_) t.zero_grad();
}

void ParameterStore::set_all(double value) {
  for (auto& [name, t] : tensors_) {
    for (double& v : t.mutable_data()) v = value;
  }
}

}  // namespace vtcm::num
