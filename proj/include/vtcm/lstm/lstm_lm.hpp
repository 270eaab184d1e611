#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vtcm/lm/language_model.hpp"

namespace vtcm::lstm {

struct LstmConfig {
  std::size_t vocab = 0;
  std::size_t feature_dim = 0;  // D
  std::size_t hidden = 512;     // H
  std::size_t embed = 512;      // E
  std::size_t attention = 512;  // A
  std::vector<std::size_t> topic_widths = {80, 50, 30};
  double dropout = 0.5;
};

struct LstmState {
  num::Tensor hp, cp;                 // paragraph level
  std::vector<num::Tensor> hs, cs;    // sentence level, one per layer
};

// Per-paragraph quantities that do not change from token to token.
struct LstmContext {
  num::Tensor features;     // M x D
  num::Tensor pooled;       // D
  num::Tensor region_proj;  // M x A, rows W_va v_m
  num::Tensor topic_proj;   // A, W_ta theta_concat
  std::vector<num::Tensor> theta;
  // W_z theta + b_z etc. per layer.
  std::vector<num::Tensor> z_topic, r_topic, h_topic;
};

struct Attention {
  num::Tensor weights;  // M, on the simplex
  num::Tensor attended; // D
};

class LstmLm final : public lm::LanguageModel {
 public:
  LstmLm(LstmConfig config, num::RngStream& rng);

  std::string kind() const override { return "lstm"; }
  std::size_t vocab_size() const override { return config_.vocab; }
  num::ParameterStore& params() override { return store_; }
  const num::ParameterStore& params() const { return store_; }
  const LstmConfig& config() const { return config_; }
  std::size_t layers() const { return config_.topic_widths.size(); }

  LstmState initial_state() const;
  LstmContext prepare(const data::RegionFeatureSet& features,
                      const std::vector<num::Tensor>& theta) const;

  // Paragraph LSTM on [h^{s,1}, pooled, W_e w_prev]; updates state.hp/cp.
  num::Tensor paragraph_step(LstmState& state, const LstmContext& ctx, int prev_word,
                             num::RngStream* dropout_rng = nullptr) const;
  // a_m = w_att tanh(W_va v_m + W_ha h^p + W_ta theta), p = softmax(a).
  Attention attend(const LstmContext& ctx, const num::Tensor& hp) const;
  // GRU-style coupling of the layer-l hidden state with theta^l (0-based l).
  num::Tensor gate_couple(const num::Tensor& h, const LstmContext& ctx, std::size_t l) const;
  // Sentence LSTM stack on [v_hat, h^p]; returns u^1..u^L.
  std::vector<num::Tensor> sentence_step(LstmState& state, const LstmContext& ctx,
                                         const num::Tensor& input) const;
  // log softmax(W_o [u^1, ..., u^L]).
  num::Tensor predict_word(const std::vector<num::Tensor>& u,
                           num::RngStream* dropout_rng = nullptr) const;

  // One full token step; returns the log-distribution of the next word.
  num::Tensor step(LstmState& state, const LstmContext& ctx, int prev_word,
                   num::RngStream* dropout_rng = nullptr) const;

  // Scores exactly the given sentences. Each starts from kBos; state is
  // carried from sentence to sentence.
  lm::LmScore lstm_forward(const std::vector<std::vector<int>>& sentences,
                           const data::RegionFeatureSet& features,
                           const std::vector<num::Tensor>& theta,
                           num::RngStream* dropout_rng = nullptr) const;

  // lstm_forward over the paragraph's sentences plus the {kEop} sentence.
  lm::LmScore score(const data::Paragraph& paragraph, const data::RegionFeatureSet& features,
                    const std::vector<num::Tensor>& theta,
                    num::RngStream* dropout_rng = nullptr) const override;

  std::unique_ptr<lm::DecodeSession> start(const data::RegionFeatureSet& features,
                                           const std::vector<num::Tensor>& theta) const override;

 private:
  struct CellWeights {
    num::Tensor w, b;  // 4H x (in + H), 4H; gate order i, f, o, g
  };
  struct GateWeights {
    num::Tensor w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h;
  };

  void cell(const CellWeights& cw, const num::Tensor& x, num::Tensor& h, num::Tensor& c) const;
  void check_token(int token) const;

  LstmConfig config_;
  num::ParameterStore store_;
  num::Tensor w_e_;  // V x E, row w is the embedding of word w
  CellWeights para_;
  std::vector<CellWeights> sent_;
  std::vector<GateWeights> gates_;
  num::Tensor w_att_, w_va_, w_ha_, w_ta_;
  num::Tensor w_o_;
};

}  // namespace vtcm::lstm
