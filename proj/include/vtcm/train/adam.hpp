#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vtcm/numerics/tensor.hpp"

namespace vtcm::train {

struct AdamState {
  std::map<std::string, std::vector<double>> m, v;
  std::uint64_t step = 0;
  std::size_t skipped = 0;  // steps dropped for non-finite gradients
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct StepReport {
  double grad_norm = 0.0;  // before clipping
  double scale = 1.0;      // clip factor applied to every gradient
  bool skipped = false;
};

// Global-norm clipping to `clip`, then a bias-corrected Adam update of every
// tensor from its accumulated gradient. A non-finite gradient skips the step
// and leaves parameters and moments untouched.
StepReport adaptive_step(std::vector<std::pair<std::string, num::Tensor>>& params,
                         AdamState& state, double lr, double clip);

}  // namespace vtcm::train
