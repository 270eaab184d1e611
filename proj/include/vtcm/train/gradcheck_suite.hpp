#pragma once

#include <string>
#include <vector>

namespace vtcm::train {

struct SuiteResult {
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  std::string worst;
  std::size_t coordinates = 0;
  bool passed() const { return max_rel_error < threshold; }
};

// Finite-difference checks of every differentiable component on toy sizes:
// the topic bound (L = 2, K = [4, 3], V_c = 6), both language models and the
// joint loss, each in double precision.
std::vector<SuiteResult> run_gradcheck_suites();
SuiteResult gradcheck_elbo();

}  // namespace vtcm::train
