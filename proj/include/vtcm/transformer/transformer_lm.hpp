#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vtcm/lm/language_model.hpp"

namespace vtcm::transformer {

struct TransformerConfig {
  std::size_t vocab = 0;
  std::size_t feature_dim = 0;  // D
  std::size_t model_dim = 512;  // d
  std::size_t heads = 8;
  std::size_t memory_slots = 40;  // n_m
  std::vector<std::size_t> topic_widths = {80, 50, 30};  // also the depth L
  std::size_t max_length = 6 * 30 + 1;                   // I_max
  double dropout = 0.1;  // drop rate; 0.9 keep probability
  // false drops every topic projection: the plain meshed baseline.
  bool topic_guided = true;
};

// X~^1..X~^L, each M x d.
struct EncoderOutputs {
  std::vector<num::Tensor> levels;
};

// Optional capture of intermediate attention maps and gates for tests.
struct AttentionProbe {
  std::vector<num::Tensor> maps;   // every softmax matrix, one per head
  std::vector<num::Tensor> gates;  // every meshed alpha_l
};

class TransformerLm final : public lm::LanguageModel {
 public:
  TransformerLm(TransformerConfig config, num::RngStream& rng);

  std::string kind() const override { return "transformer"; }
  std::size_t vocab_size() const override { return config_.vocab; }
  num::ParameterStore& params() override { return store_; }
  const num::ParameterStore& params() const { return store_; }
  const TransformerConfig& config() const { return config_; }
  std::size_t layers() const { return config_.topic_widths.size(); }

  // Keys [X W_k; M_k], values [X W_v; M_v], per-head scaled dot-product
  // attention, heads concatenated. `layer` is 0-based.
  num::Tensor mem_attention(const num::Tensor& x, std::size_t layer,
                            AttentionProbe* probe = nullptr) const;
  // Region projection followed by L memory-augmented layers.
  EncoderOutputs encode_stack(const data::RegionFeatureSet& features,
                              AttentionProbe* probe = nullptr) const;
  // theta~^l = P^l theta^l (zero vectors when not topic guided).
  std::vector<num::Tensor> project_topics(const std::vector<num::Tensor>& theta) const;
  // sum_l alpha_l * C_l with C_l cross-attention over X~^l + theta~^l and
  // alpha_l = sigmoid([Y, C_l] W_l + b_l). `layer` selects decoder weights.
  num::Tensor meshed_attention(const EncoderOutputs& enc,
                               const std::vector<num::Tensor>& topic_vectors,
                               const num::Tensor& y, std::size_t layer,
                               AttentionProbe* probe = nullptr) const;
  // I x V log-probabilities for the token sequence (which starts with kBos).
  num::Tensor decode_stack(const EncoderOutputs& enc, const std::vector<num::Tensor>& theta,
                           const std::vector<int>& tokens, num::RngStream* dropout_rng = nullptr,
                           AttentionProbe* probe = nullptr) const;

  // Teacher-forced log-likelihood of the flat sequence y (predicted from
  // [kBos, y_1, ..., y_{I-1}]).
  lm::LmScore transformer_forward(const std::vector<int>& y, const data::RegionFeatureSet& features,
                                  const std::vector<num::Tensor>& theta,
                                  num::RngStream* dropout_rng = nullptr) const;

  lm::LmScore score(const data::Paragraph& paragraph, const data::RegionFeatureSet& features,
                    const std::vector<num::Tensor>& theta,
                    num::RngStream* dropout_rng = nullptr) const override;

  std::unique_ptr<lm::DecodeSession> start(const data::RegionFeatureSet& features,
                                           const std::vector<num::Tensor>& theta) const override;

 private:
  struct Norm {
    num::Tensor gain, bias;
  };
  struct FeedForward {
    num::Tensor w1, b1, w2, b2;
  };
  struct EncoderLayer {
    num::Tensor w_q, w_k, w_v, m_k, m_v;
    Norm norm1, norm2;
    FeedForward ff;
  };
  struct DecoderLayer {
    num::Tensor self_q, self_k, self_v;
    num::Tensor cross_q, cross_k, cross_v;
    std::vector<num::Tensor> gate_w, gate_b;  // one per encoder level
    Norm norm1, norm2, norm3;
    FeedForward ff;
  };

  num::Tensor attention(const num::Tensor& q, const num::Tensor& k, const num::Tensor& v,
                        bool causal, AttentionProbe* probe) const;
  num::Tensor feed_forward(const FeedForward& ff, const num::Tensor& x) const;
  num::Tensor norm(const Norm& n, const num::Tensor& x) const;
  void check_theta(const std::vector<num::Tensor>& theta) const;

  TransformerConfig config_;
  num::ParameterStore store_;
  num::Tensor w_in_, b_in_;  // region projection D -> d
  num::Tensor embed_;        // V x d
  num::Tensor positions_;    // max_length x d, fixed sinusoids
  std::vector<num::Tensor> topic_proj_;  // d x K_l
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  num::Tensor w_out_, b_out_;
};

std::vector<double> sinusoid_positions(std::size_t length, std::size_t dim);

}  // namespace vtcm::transformer
