#pragma once

#include <atomic>
#include <cstddef>
#include <string>
#include <vector>

#include "vtcm/numerics/params.hpp"
#include "vtcm/numerics/random.hpp"
#include "vtcm/numerics/tensor.hpp"

namespace vtcm::topic {

inline constexpr double kPositiveFloor = 1e-6;
inline constexpr double kEpsClamp = 1e-12;
// Cap on ln(-ln(1 - eps)) / k, keeping theta finite when k is tiny.
inline constexpr double kThetaExponentCap = 50.0;

// How often each numeric guard fired. Process-wide; reset freely.
struct GuardCounters {
  std::atomic<std::size_t> eps_clamped{0};
  std::atomic<std::size_t> exponent_capped{0};
  std::atomic<std::size_t> positive_floored{0};
  std::atomic<std::size_t> rate_floored{0};
  std::atomic<std::size_t> shape_floored{0};

  void reset();
};
GuardCounters& guard_counters();

struct EncoderConfig {
  std::size_t input_dim = 0;
  std::size_t hidden = 128;
  std::vector<std::size_t> widths;  // K_1..K_L
};

struct TopicPosterior {
  std::vector<num::Tensor> h;       // h^1..h^L
  std::vector<num::Tensor> k;       // Weibull shapes
  std::vector<num::Tensor> lambda;  // Weibull scales
  std::vector<num::Tensor> theta;   // filled by sample_theta

  std::size_t layers() const { return k.size(); }
  // theta^1..theta^L end to end.
  num::Tensor theta_concat() const;
};

// Bottom-up MLP from the pooled feature to per-layer Weibull parameters:
// h^l = tanh(W_v^l h^{l-1} + b_v^l), k^l = softplus(W_hk^l h^l + b_1^l),
// lambda^l = softplus(W_hl^l h^l + b_2^l), both floored at kPositiveFloor.
class TopicEncoder {
 public:
  TopicEncoder(num::ParameterStore& store, const std::string& prefix, EncoderConfig config,
               num::RngStream& rng);

  TopicPosterior encode(const num::Tensor& pooled) const;
  const EncoderConfig& config() const { return config_; }

  struct Layer {
    num::Tensor w_v, b_v, w_k, b_k, w_l, b_l;
  };
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  EncoderConfig config_;
  std::vector<Layer> layers_;
};

// One uniform vector per layer, each entry in (0, 1).
std::vector<std::vector<double>> draw_eps(num::RngStream& rng,
                                          const std::vector<std::size_t>& widths);

// theta^l = lambda^l * (-ln(1 - eps^l))^(1 / k^l), differentiable in k and
// lambda. Fills post.theta and returns it.
const std::vector<num::Tensor>& sample_theta(TopicPosterior& post,
                                             const std::vector<std::vector<double>>& eps);

// Weibull mean lambda * Gamma(1 + 1/k) per layer, without gradient.
std::vector<std::vector<double>> posterior_mean(const TopicPosterior& post);

}  // namespace vtcm::topic
