#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "vtcm/data/features.hpp"
#include "vtcm/data/vocab.hpp"
#include "vtcm/numerics/params.hpp"
#include "vtcm/numerics/random.hpp"
#include "vtcm/numerics/tensor.hpp"

namespace vtcm::lm {

struct LmScore {
  num::Tensor log_likelihood;  // scalar, sum over scored tokens
  std::size_t tokens = 0;
  std::vector<double> token_log_probs;
};

// Incremental decoding: next_log_probs() scores the token after the current
// prefix, advance() appends the chosen token.
class DecodeSession {
 public:
  virtual ~DecodeSession() = default;
  virtual std::vector<double> next_log_probs() = 0;
  virtual void advance(int token) = 0;
};

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual num::ParameterStore& params() = 0;

  // Teacher-forced log-likelihood of every token of the paragraph, including
  // the end-of-paragraph marker. theta holds one vector per topic layer.
  // Dropout is applied only when dropout_rng is given.
  virtual LmScore score(const data::Paragraph& paragraph, const data::RegionFeatureSet& features,
                        const std::vector<num::Tensor>& theta,
                        num::RngStream* dropout_rng = nullptr) const = 0;

  virtual std::unique_ptr<DecodeSession> start(const data::RegionFeatureSet& features,
                                               const std::vector<num::Tensor>& theta) const = 0;
};

}  // namespace vtcm::lm
