#include "vtcm/topic/elbo.hpp"

#include <cmath>

#include "vtcm/error.hpp"
#include "vtcm/numerics/ops.hpp"

namespace vtcm::topic {

using num::Tensor;

Tensor log_poisson_likelihood(const std::vector<double>& counts, const Tensor& phi1,
                              const Tensor& theta1) {
  if (counts.size() != phi1.rows()) {
    throw ShapeError("count vector of size " + std::to_string(counts.size()) +
                     " does not match Phi^1 " + num::to_string(phi1.shape()));
  }
  std::size_t hits = 0;
  const Tensor rate = num::clamp_min(num::matmul(phi1, theta1), kRateFloor, &hits);
  guard_counters().rate_floored += hits;
  double log_fact = 0.0;
  for (double c : counts) {
    if (c < 0.0) throw InvalidArgument("negative word count");
    log_fact += std::lgamma(c + 1.0);
  }
  const Tensor d = Tensor::vector(counts);
  return num::add_scalar(num::sub(num::dot(d, num::log(rate)), num::sum(rate)), -log_fact);
}

Tensor kl_weibull_gamma(const Tensor& k, const Tensor& lambda, const Tensor& alpha,
                        double scale) {
  if (k.shape() != lambda.shape() || k.shape() != alpha.shape()) {
    throw ShapeError("KL inputs disagree: k " + num::to_string(k.shape()) + ", lambda " +
                     num::to_string(lambda.shape()) + ", alpha " +
                     num::to_string(alpha.shape()));
  }
  if (!(scale > 0.0)) throw InvalidArgument("gamma scale must be positive");
  for (const Tensor* t : {&k, &lambda, &alpha}) {
    for (double v : t->data()) {
      if (!(v > 0.0)) throw InvalidArgument("KL parameters must be positive");
    }
  }
  const std::size_t n = k.size();
  const Tensor inv_k = num::div(Tensor::filled({n}, 1.0), k);
  const Tensor gamma_term = num::exp(num::lgamma(num::add_scalar(inv_k, 1.0)));
  Tensor t = num::scale(num::mul(alpha, inv_k), kEulerGamma);
  t = num::sub(t, num::mul(alpha, num::log(lambda)));
  t = num::add(t, num::log(k));
  t = num::add(t, num::scale(num::mul(lambda, gamma_term), 1.0 / scale));
  t = num::add(t, num::scale(alpha, std::log(scale)));
  t = num::add(t, num::lgamma(alpha));
  return num::add_scalar(num::sum(t), -(kEulerGamma + 1.0) * static_cast<double>(n));
}

Tensor prior_shape(const TopicHierarchy& h, const std::vector<Tensor>& theta,
                   std::size_t layer_index) {
  if (layer_index + 1 == h.layers()) return Tensor::vector(h.r);
  std::size_t hits = 0;
  Tensor a = num::clamp_min(num::matmul(h.phi[layer_index + 1], theta[layer_index + 1]),
                            kPositiveFloor, &hits);
  guard_counters().shape_floored += hits;
  return a;
}

ElboTerms elbo_from_posterior(const std::vector<double>& counts, TopicPosterior post,
                              const TopicHierarchy& h,
                              const std::vector<std::vector<double>>& eps) {
  if (post.layers() != h.layers()) throw ShapeError("posterior and hierarchy depths differ");
  sample_theta(post, eps);
  ElboTerms out;
  out.likelihood = log_poisson_likelihood(counts, h.phi[0], post.theta[0]);
  Tensor value = out.likelihood;
  for (std::size_t l = 0; l < h.layers(); ++l) {
    Tensor kl = kl_weibull_gamma(post.k[l], post.lambda[l], prior_shape(h, post.theta, l),
                                 h.tau[l]);
    value = num::sub(value, kl);
    out.kl.push_back(kl);
  }
  out.value = value;
  out.posterior = std::move(post);
  return out;
}

ElboTerms elbo_tm(const std::vector<double>& counts, const Tensor& pooled,
                  const TopicEncoder& encoder, const TopicHierarchy& h,
                  const std::vector<std::vector<double>>& eps) {
  return elbo_from_posterior(counts, encoder.encode(pooled), h, eps);
}

}  // namespace vtcm::topic
