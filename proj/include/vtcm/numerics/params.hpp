#pragma once

#include <map>
#include <string>
#include <vector>

#include "vtcm/numerics/random.hpp"
#include "vtcm/numerics/tensor.hpp"

namespace vtcm::num {

// Named collection of trainable leaves. Modules hold handles to the tensors
// they create here, so optimizer updates through the store are visible to
// the module immediately.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, Shape shape, std::vector<double> values);
  Tensor& zeros(const std::string& name, Shape shape);
  Tensor& constant(const std::string& name, Shape shape, double value);
  // Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)), fans taken from
  // the last two dimensions.
  Tensor& xavier(const std::string& name, Shape shape, RngStream& rng);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::map<std::string, Tensor>& all() const { return tensors_; }
  std::map<std::string, Tensor>& all() { return tensors_; }
  std::vector<std::pair<std::string, Tensor>> with_prefix(const std::string& prefix) const;

  std::size_t scalar_count() const;
  void zero_grad();
  void set_all(double value);

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace vtcm::num
