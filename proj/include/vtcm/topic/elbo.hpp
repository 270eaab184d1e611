#pragma once

#include <vector>

#include "vtcm/data/vocab.hpp"
#include "vtcm/numerics/tensor.hpp"
#include "vtcm/topic/encoder.hpp"
#include "vtcm/topic/hierarchy.hpp"

namespace vtcm::topic {

inline constexpr double kRateFloor = 1e-12;
inline constexpr double kEulerGamma = 0.57721566490153286061;

// sum_v [d_v ln(rate_v) - rate_v - ln d_v!] with rate = Phi^1 theta^1
// floored at kRateFloor.
num::Tensor log_poisson_likelihood(const std::vector<double>& counts, const num::Tensor& phi1,
                                   const num::Tensor& theta1);

// KL(Weibull(k, lambda) || Gamma(alpha, scale s)) summed over components:
//   gamma*alpha/k - alpha ln lambda + ln k + lambda Gamma(1 + 1/k) / s
//   - gamma - 1 + alpha ln s + ln Gamma(alpha)
num::Tensor kl_weibull_gamma(const num::Tensor& k, const num::Tensor& lambda,
                             const num::Tensor& alpha, double scale);

struct ElboTerms {
  num::Tensor value;       // likelihood - sum(kl)
  num::Tensor likelihood;  // log Poisson at sampled theta^1
  std::vector<num::Tensor> kl;
  TopicPosterior posterior;
};

// Prior shape for layer l: Phi^{l+1} theta^{l+1} floored at kPositiveFloor
// (l < L) or r (l = L).
num::Tensor prior_shape(const TopicHierarchy& h, const std::vector<num::Tensor>& theta,
                        std::size_t layer_index);

// Single-sample bound: one theta draw per layer from eps, analytic KL.
ElboTerms elbo_tm(const std::vector<double>& counts, const num::Tensor& pooled,
                  const TopicEncoder& encoder, const TopicHierarchy& h,
                  const std::vector<std::vector<double>>& eps);

// Same bound for an already encoded posterior; samples theta from eps.
ElboTerms elbo_from_posterior(const std::vector<double>& counts, TopicPosterior post,
                              const TopicHierarchy& h,
                              const std::vector<std::vector<double>>& eps);

}  // namespace vtcm::topic
