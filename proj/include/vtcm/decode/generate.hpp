#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "vtcm/data/features.hpp"
#include "vtcm/data/vocab.hpp"
#include "vtcm/lm/language_model.hpp"
#include "vtcm/numerics/random.hpp"
#include "vtcm/topic/encoder.hpp"

namespace vtcm::decode {

enum class SamplingMode { kGreedy, kSample };

inline constexpr double kHardBan = std::numeric_limits<double>::infinity();

struct DecodeConfig {
  std::size_t max_sentences = data::kDefaultMaxSentences;  // J_max
  std::size_t max_tokens = data::kDefaultMaxTokens;        // T_max, including the terminator
  double penalty = 2.0;  // beta; kHardBan forbids any repeated trigram
  SamplingMode mode = SamplingMode::kGreedy;
  double temperature = 1.0;
  // Used as is instead of sampling theta from the encoder.
  std::optional<std::vector<std::vector<double>>> theta_override;

  void validate() const;
};

struct Generation {
  data::Paragraph paragraph;
  std::vector<std::vector<double>> theta;
  // Weibull parameters behind theta; empty when theta was overridden.
  std::vector<std::vector<double>> k, lambda;
};

// Count of each word trigram in `words`, the paragraph's word stream with
// sentence and paragraph markers removed.
std::size_t trigram_count(const std::vector<int>& words, int a, int b, int c);
std::vector<int> word_stream(const data::Paragraph& paragraph);
bool has_repeated_trigram(const data::Paragraph& paragraph);

// Subtracts c * ln(beta) from the log-probability of every candidate that
// would complete a trigram already seen c times in `words` (beta = kHardBan
// removes it), then renormalizes. Returns false and leaves the vector
// untouched when no candidate was affected.
bool apply_trigram_penalty(std::vector<double>& log_probs, const std::vector<int>& words,
                           double penalty);

// theta is the override when given, otherwise a Weibull draw from the
// encoder with eps taken from rng. Decoding is stepwise: a sentence ends at
// the end-of-sentence id or after max_tokens - 1 words, and the paragraph
// ends at the end-of-paragraph id or after max_sentences sentences. Words
// are chosen greedily or sampled from rng.
Generation generate(const data::RegionFeatureSet& features, const topic::TopicEncoder& encoder,
                    const lm::LanguageModel& lm, const DecodeConfig& config, num::RngStream& rng);

// One-hot theta at topic k (0-based) of layer l (1-based); every other
// entry, including the other layers, is zero.
std::vector<std::vector<double>> override_theta(const std::vector<std::size_t>& widths,
                                                std::size_t layer, std::size_t topic);

}  // namespace vtcm::decode
