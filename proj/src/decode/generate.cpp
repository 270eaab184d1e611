#include "vtcm/decode/generate.hpp"

#include <algorithm>
#include <cmath>

#include "vtcm/error.hpp"
#include "vtcm/numerics/ops.hpp"

namespace vtcm::decode {

using num::Tensor;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void renormalize(std::vector<double>& lp) {
  const double z = num::log_sum_exp(lp);
  for (double& x : lp) {
    if (x != kNegInf) x -= z;
  }
}

int choose(const std::vector<double>& lp, const DecodeConfig& cfg, num::RngStream& rng) {
  if (cfg.mode == SamplingMode::kGreedy) {
    return static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
  }
  std::vector<double> scaled(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) scaled[i] = lp[i] / cfg.temperature;
  return static_cast<int>(num::sample_categorical(rng, num::softmax_values(scaled)));
}

}  // namespace

void DecodeConfig::validate() const {
  if (max_sentences == 0 || max_tokens < 2) {
    throw InvalidArgument("decode limits must allow one sentence of one word");
  }
  if (!(penalty >= 1.0)) throw InvalidArgument("trigram penalty must be at least 1");
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
}

std::size_t trigram_count(const std::vector<int>& words, int a, int b, int c) {
  std::size_t n = 0;
  for (std::size_t i = 2; i < words.size(); ++i) {
    n += words[i - 2] == a && words[i - 1] == b && words[i] == c;
  }
  return n;
}

std::vector<int> word_stream(const data::Paragraph& paragraph) {
  std::vector<int> out;
  for (const auto& s : paragraph.sentences) {
    for (int id : s) {
      if (id >= data::kReservedCount || id == data::kUnk) out.push_back(id);
    }
  }
  return out;
}

bool has_repeated_trigram(const data::Paragraph& paragraph) {
  const auto w = word_stream(paragraph);
  for (std::size_t i = 2; i < w.size(); ++i) {
    if (trigram_count(w, w[i - 2], w[i - 1], w[i]) > 1) return true;
  }
  return false;
}

bool apply_trigram_penalty(std::vector<double>& log_probs, const std::vector<int>& words,
                           double penalty) {
  if (words.size() < 2 || penalty == 1.0) return false;
  const int a = words[words.size() - 2], b = words.back();
  std::vector<std::size_t> seen(log_probs.size(), 0);
  bool touched = false;
  for (std::size_t i = 2; i < words.size(); ++i) {
    if (words[i - 2] == a && words[i - 1] == b) {
      const auto c = static_cast<std::size_t>(words[i]);
      if (c < seen.size()) {
        ++seen[c];
        touched = true;
      }
    }
  }
  if (!touched) return false;
  const double log_beta = std::log(penalty);
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c] || log_probs[c] == kNegInf) continue;
    log_probs[c] = penalty == kHardBan ? kNegInf
                                       : log_probs[c] - static_cast<double>(seen[c]) * log_beta;
  }
  renormalize(log_probs);
  return true;
}

std::vector<std::vector<double>> override_theta(const std::vector<std::size_t>& widths,
                                                std::size_t layer, std::size_t topic) {
  if (layer < 1 || layer > widths.size()) {
    throw InvalidArgument("topic layer " + std::to_string(layer) + " outside 1.." +
                          std::to_string(widths.size()));
  }
  if (topic >= widths[layer - 1]) {
    throw InvalidArgument("topic " + std::to_string(topic) + " outside layer " +
                          std::to_string(layer) + " of width " +
                          std::to_string(widths[layer - 1]));
  }
  std::vector<std::vector<double>> out;
  for (std::size_t w : widths) out.emplace_back(w, 0.0);
  out[layer - 1][topic] = 1.0;
  return out;
}

Generation generate(const data::RegionFeatureSet& features, const topic::TopicEncoder& encoder,
                    const lm::LanguageModel& lm, const DecodeConfig& cfg, num::RngStream& rng) {
  cfg.validate();
  num::NoGradGuard guard;
  const auto& widths = encoder.config().widths;
  Generation out;
  if (cfg.theta_override) {
    out.theta = *cfg.theta_override;
    if (out.theta.size() != widths.size()) {
      throw ShapeError("theta override needs " + std::to_string(widths.size()) + " layers");
    }
    for (std::size_t l = 0; l < widths.size(); ++l) {
      if (out.theta[l].size() != widths[l]) {
        throw ShapeError("theta override layer " + std::to_string(l + 1) + " needs " +
                         std::to_string(widths[l]) + " entries");
      }
    }
  } else {
    auto post = encoder.encode(features.pooled);
    topic::sample_theta(post, topic::draw_eps(rng, widths));
    for (std::size_t l = 0; l < widths.size(); ++l) {
      out.theta.push_back(post.theta[l].to_vector());
      out.k.push_back(post.k[l].to_vector());
      out.lambda.push_back(post.lambda[l].to_vector());
    }
  }
  std::vector<Tensor> theta;
  for (const auto& t : out.theta) theta.push_back(Tensor::vector(t));

  auto session = lm.start(features, theta);
  out.paragraph.image_id = features.image_id;
  std::vector<int> words;
  std::vector<int> sentence;
  while (out.paragraph.sentences.size() < cfg.max_sentences) {
    auto lp = session->next_log_probs();
    if (lp.size() != lm.vocab_size()) throw ShapeError("decoder returned a wrong-sized row");
    bool masked = false;
    auto mask = [&](int id) {
      if (lp[static_cast<std::size_t>(id)] != kNegInf) {
        lp[static_cast<std::size_t>(id)] = kNegInf;
        masked = true;
      }
    };
    mask(data::kPad);
    mask(data::kBos);
    if (sentence.empty()) {
      mask(data::kEos);
      if (out.paragraph.sentences.empty()) mask(data::kEop);
    } else {
      mask(data::kEop);
    }
    int token;
    if (sentence.size() + 1 == cfg.max_tokens) {
      token = data::kEos;
    } else {
      if (masked) renormalize(lp);
      apply_trigram_penalty(lp, words, cfg.penalty);
      token = choose(lp, cfg, rng);
    }
    if (token == data::kEop) break;
    session->advance(token);
    sentence.push_back(token);
    if (token == data::kEos) {
      out.paragraph.sentences.push_back(std::move(sentence));
      sentence.clear();
    } else {
      words.push_back(token);
    }
  }
  return out;
}

}  // namespace vtcm::decode
