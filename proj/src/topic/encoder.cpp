#include "vtcm/topic/encoder.hpp"

#include <cmath>

#include "vtcm/error.hpp"
#include "vtcm/numerics/ops.hpp"

namespace vtcm::topic {

using num::Tensor;

void GuardCounters::reset() {
  eps_clamped = 0;
  exponent_capped = 0;
  positive_floored = 0;
  rate_floored = 0;
  shape_floored = 0;
}

GuardCounters& guard_counters() {
  static GuardCounters counters;
  return counters;
}

Tensor TopicPosterior::theta_concat() const {
  if (theta.size() != k.size()) throw InvalidArgument("theta has not been sampled");
  return num::concat(std::span<const Tensor>(theta));
}

TopicEncoder::TopicEncoder(num::ParameterStore& store, const std::string& prefix,
                           EncoderConfig config, num::RngStream& rng)
    : config_(std::move(config)) {
  if (config_.input_dim == 0 || config_.hidden == 0 || config_.widths.empty()) {
    throw InvalidArgument("encoder needs input_dim, hidden and at least one layer");
  }
  // softplus(0.5413) = 1, so k and lambda start near 1.
  const double b0 = std::log(std::expm1(1.0));
  std::size_t in = config_.input_dim;
  for (std::size_t l = 0; l < config_.widths.size(); ++l) {
    const std::string p = prefix + "l" + std::to_string(l + 1) + "/";
    const std::size_t k = config_.widths[l];
    Layer layer;
    layer.w_v = store.xavier(p + "W_v", {config_.hidden, in}, rng);
    layer.b_v = store.zeros(p + "b_v", {config_.hidden});
    layer.w_k = store.xavier(p + "W_hk", {k, config_.hidden}, rng);
    layer.b_k = store.constant(p + "b_1", {k}, b0);
    layer.w_l = store.xavier(p + "W_hl", {k, config_.hidden}, rng);
    layer.b_l = store.constant(p + "b_2", {k}, b0);
    layers_.push_back(layer);
    in = config_.hidden;
  }
}

TopicPosterior TopicEncoder::encode(const Tensor& pooled) const {
  if (pooled.ndim() != 1 || pooled.size() != config_.input_dim) {
    throw ShapeError("encoder expects a pooled vector of size " +
                     std::to_string(config_.input_dim) + ", got " +
                     num::to_string(pooled.shape()));
  }
  TopicPosterior post;
  Tensor h = pooled;
  for (const Layer& layer : layers_) {
    h = num::tanh(num::add(num::matmul(layer.w_v, h), layer.b_v));
    std::size_t hits = 0;
    Tensor k = num::clamp_min(num::softplus(num::add(num::matmul(layer.w_k, h), layer.b_k)),
                              kPositiveFloor, &hits);
    Tensor lam = num::clamp_min(num::softplus(num::add(num::matmul(layer.w_l, h), layer.b_l)),
                                kPositiveFloor, &hits);
    guard_counters().positive_floored += hits;
    post.h.push_back(h);
    post.k.push_back(k);
    post.lambda.push_back(lam);
  }
  return post;
}

std::vector<std::vector<double>> draw_eps(num::RngStream& rng,
                                          const std::vector<std::size_t>& widths) {
  std::vector<std::vector<double>> eps;
  for (std::size_t k : widths) {
    std::vector<double> e(k);
    for (double& x : e) x = rng.uniform();
    eps.push_back(std::move(e));
  }
  return eps;
}

const std::vector<Tensor>& sample_theta(TopicPosterior& post,
                                        const std::vector<std::vector<double>>& eps) {
  if (eps.size() != post.layers()) throw ShapeError("one noise vector per layer required");
  post.theta.clear();
  for (std::size_t l = 0; l < post.layers(); ++l) {
    const std::size_t n = post.k[l].size();
    if (eps[l].size() != n) {
      throw ShapeError("noise for layer " + std::to_string(l + 1) + " has " +
                       std::to_string(eps[l].size()) + " entries, expected " + std::to_string(n));
    }
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) {
      double e = eps[l][i];
      if (!(e >= kEpsClamp && e <= 1.0 - kEpsClamp)) {
        e = std::isnan(e) ? 0.5 : std::min(std::max(e, kEpsClamp), 1.0 - kEpsClamp);
        ++guard_counters().eps_clamped;
      }
      c[i] = std::log(-std::log1p(-e));
    }
    std::size_t hits = 0;
    Tensor exponent = num::clamp_max(num::div(Tensor::vector(c), post.k[l]),
                                     kThetaExponentCap, &hits);
    guard_counters().exponent_capped += hits;
    post.theta.push_back(num::mul(post.lambda[l], num::exp(exponent)));
  }
  return post.theta;
}

std::vector<std::vector<double>> posterior_mean(const TopicPosterior& post) {
  std::vector<std::vector<double>> out;
  for (std::size_t l = 0; l < post.layers(); ++l) {
    std::vector<double> m(post.k[l].size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = post.lambda[l][i] * std::exp(std::lgamma(1.0 + 1.0 / post.k[l][i]));
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace vtcm::topic
