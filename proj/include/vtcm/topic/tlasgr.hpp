#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vtcm/numerics/random.hpp"
#include "vtcm/numerics/tensor.hpp"
#include "vtcm/topic/hierarchy.hpp"

namespace vtcm::topic {

// Floor applied to theta before it weights the multinomial split, so an
// underflowed theta cannot zero a whole row of probabilities.
inline constexpr double kAugmentThetaFloor = 1e-30;
inline constexpr double kProjectionFloor = 1e-10;

// Latent counts of one document. a[l] is K_{l-1} x K_l row-major.
struct AugmentedCounts {
  std::vector<std::vector<std::int64_t>> a;
  std::vector<std::vector<std::int64_t>> m;       // m[l]: K_l, column sums of a[l]
  std::vector<std::vector<std::int64_t>> x_next;  // x_next[l]: CRT counts feeding layer l+2
};

// Upward pass: x^1 = counts; A^l rows split x^l over topics with
// p_k proportional to phi^l_{vk} theta^l_k; x^{l+1}_k = CRT(m_k, (Phi^{l+1}
// theta^{l+1})_k), or CRT(m_k, r_k) at the top.
AugmentedCounts augment_counts(const std::vector<std::int64_t>& counts, const TopicHierarchy& h,
                               const std::vector<std::vector<double>>& theta,
                               num::RngStream& rng);

// Sum of a[l] over a minibatch, one K_{l-1} x K_l matrix per layer.
std::vector<std::vector<double>> aggregate(const std::vector<AugmentedCounts>& batch,
                                           const TopicHierarchy& h);

struct TlasgrState {
  std::vector<std::vector<double>> precond;  // P^l_k, one vector per layer
  std::uint64_t step = 0;                    // q
  double a = 0.1, b = 1000.0, c = 0.7;       // step size a (1 + q/b)^-c
  double decay = 0.9;
  double rho = 1.0;

  static TlasgrState create(const TopicHierarchy& h);
  double step_size() const;
};

struct TlasgrOptions {
  bool noise = true;
  // When set, the current preconditioner is used as is instead of being
  // refreshed from the statistics first.
  bool freeze_preconditioner = false;
};

// One update of every topic column:
//   phi <- [phi + (eps/P)((rho A_k + eta) - (rho A_.k + K eta) phi)
//           + N(0, (2 eps / P)(diag phi - phi phi^T))]
// where [.] clamps to kProjectionFloor and renormalizes. P^l_k tracks
// rho A_.k + K eta with an exponential moving average (weight 1 - decay).
void tlasgr_update(TopicHierarchy& h, const std::vector<std::vector<double>>& stats,
                   TlasgrState& state, num::RngStream& rng, TlasgrOptions options = {});

void project_simplex(std::vector<double>& column);

}  // namespace vtcm::topic
