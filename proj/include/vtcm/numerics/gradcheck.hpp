#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "vtcm/numerics/tensor.hpp"

namespace vtcm::num {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[index]" of the worst coordinate
  std::size_t coordinates = 0;
};

// Per-coordinate error is |tape - fd| / max(|tape|, |fd|, floor), where fd is
// the central difference (f(x+h) - f(x-h)) / 2h. The floor keeps coordinates
// whose true derivative is ~0 from dividing round-off by round-off.
inline constexpr double kGradCheckFloor = 1e-3;

// f must return a scalar. x is copied into a fresh leaf; the caller's tensor
// is not modified.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h = 1e-5, double floor = kGradCheckFloor);

// Checks d f / d p for every tensor in `params` by perturbing them in place
// (values are restored afterwards). At most `max_coords` coordinates per
// tensor are probed, spread evenly; 0 means all.
GradCheckResult grad_check_params(const std::function<Tensor()>& f,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double h = 1e-5, std::size_t max_coords = 0,
                                  double floor = kGradCheckFloor);

}  // namespace vtcm::num
