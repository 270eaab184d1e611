#include "vtcm/lstm/lstm_lm.hpp"

#include <numeric>

#include "vtcm/error.hpp"
#include "vtcm/numerics/ops.hpp"

namespace vtcm::lstm {

using num::Tensor;

namespace {

std::size_t total(const std::vector<std::size_t>& v) {
  return std::accumulate(v.begin(), v.end(), std::size_t{0});
}

class LstmSession final : public lm::DecodeSession {
 public:
  LstmSession(const LstmLm& model, LstmContext ctx)
      : model_(model), ctx_(std::move(ctx)), state_(model.initial_state()) {}

  std::vector<double> next_log_probs() override {
    if (!pending_) {
      num::NoGradGuard guard;
      next_state_ = state_;
      logp_ = model_.step(next_state_, ctx_, prev_).to_vector();
      pending_ = true;
    }
    return logp_;
  }

  void advance(int token) override {
    next_log_probs();
    state_ = next_state_;
    pending_ = false;
    prev_ = token == data::kEos ? data::kBos : token;
  }

 private:
  const LstmLm& model_;
  LstmContext ctx_;
  LstmState state_, next_state_;
  std::vector<double> logp_;
  int prev_ = data::kBos;
  bool pending_ = false;
};

}  // namespace

LstmLm::LstmLm(LstmConfig config, num::RngStream& rng) : config_(std::move(config)) {
  const auto& c = config_;
  if (c.vocab <= static_cast<std::size_t>(data::kReservedCount) || c.feature_dim == 0 ||
      c.hidden == 0 || c.embed == 0 || c.attention == 0 || c.topic_widths.empty()) {
    throw InvalidArgument("LSTM model dimensions must be positive");
  }
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
  const std::size_t h = c.hidden, k_total = total(c.topic_widths);
  auto make_cell = [&](const std::string& name, std::size_t in) {
    CellWeights cw;
    cw.w = store_.xavier(name + "/W", {4 * h, in + h}, rng);
    std::vector<double> b(4 * h, 0.0);
    std::fill(b.begin() + static_cast<std::ptrdiff_t>(h),
              b.begin() + static_cast<std::ptrdiff_t>(2 * h), 1.0);  // forget gate
    cw.b = store_.create(name + "/b", {4 * h}, b);
    return cw;
  };
  w_e_ = store_.xavier("lstm/W_e", {c.vocab, c.embed}, rng);
  para_ = make_cell("lstm/para", h + c.feature_dim + c.embed);
  w_att_ = store_.xavier("lstm/att/w_att", {c.attention}, rng);
  w_va_ = store_.xavier("lstm/att/W_va", {c.attention, c.feature_dim}, rng);
  w_ha_ = store_.xavier("lstm/att/W_ha", {c.attention, h}, rng);
  w_ta_ = store_.xavier("lstm/att/W_ta", {c.attention, k_total}, rng);
  for (std::size_t l = 0; l < c.topic_widths.size(); ++l) {
    const std::string p = "lstm/sent" + std::to_string(l + 1);
    sent_.push_back(make_cell(p, l == 0 ? c.feature_dim + h : h));
    const std::size_t k = c.topic_widths[l];
    GateWeights g;
    g.w_z = store_.xavier(p + "/gate/W_z", {h, k}, rng);
    g.u_z = store_.xavier(p + "/gate/U_z", {h, h}, rng);
    g.b_z = store_.zeros(p + "/gate/b_z", {h});
    g.w_r = store_.xavier(p + "/gate/W_r", {h, k}, rng);
    g.u_r = store_.xavier(p + "/gate/U_r", {h, h}, rng);
    g.b_r = store_.zeros(p + "/gate/b_r", {h});
    g.w_h = store_.xavier(p + "/gate/W_h", {h, k}, rng);
    g.u_h = store_.xavier(p + "/gate/U_h", {h, h}, rng);
    g.b_h = store_.zeros(p + "/gate/b_h", {h});
    gates_.push_back(g);
  }
  w_o_ = store_.xavier("lstm/W_o", {c.vocab, c.topic_widths.size() * h}, rng);
}

LstmState LstmLm::initial_state() const {
  LstmState s;
  s.hp = Tensor::zeros({config_.hidden});
  s.cp = s.hp;
  s.hs.assign(layers(), s.hp);
  s.cs.assign(layers(), s.hp);
  return s;
}

void LstmLm::check_token(int token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= config_.vocab) {
    throw InvalidArgument("token id " + std::to_string(token) + " outside vocabulary of size " +
                          std::to_string(config_.vocab));
  }
}

LstmContext LstmLm::prepare(const data::RegionFeatureSet& features,
                            const std::vector<Tensor>& theta) const {
  if (features.dim() != config_.feature_dim) {
    throw ShapeError("features have dimension " + std::to_string(features.dim()) +
                     ", model expects " + std::to_string(config_.feature_dim));
  }
  if (theta.size() != layers()) {
    throw ShapeError("expected " + std::to_string(layers()) + " topic layers, got " +
                     std::to_string(theta.size()));
  }
  for (std::size_t l = 0; l < layers(); ++l) {
    if (theta[l].shape() != num::Shape{config_.topic_widths[l]}) {
      throw ShapeError("theta^" + std::to_string(l + 1) + " has shape " +
                       num::to_string(theta[l].shape()));
    }
  }
  LstmContext ctx;
  ctx.features = features.features;
  ctx.pooled = features.pooled;
  ctx.theta = theta;
  ctx.region_proj = num::matmul(features.features, num::transpose(w_va_));
  ctx.topic_proj = num::matmul(w_ta_, num::concat(std::span<const Tensor>(theta)));
  for (std::size_t l = 0; l < layers(); ++l) {
    const GateWeights& g = gates_[l];
    ctx.z_topic.push_back(num::add(num::matmul(g.w_z, theta[l]), g.b_z));
    ctx.r_topic.push_back(num::add(num::matmul(g.w_r, theta[l]), g.b_r));
    ctx.h_topic.push_back(num::add(num::matmul(g.w_h, theta[l]), g.b_h));
  }
  return ctx;
}

void LstmLm::cell(const CellWeights& cw, const Tensor& x, Tensor& h, Tensor& c) const {
  const std::size_t n = config_.hidden;
  const Tensor z = num::add(num::matmul(cw.w, num::concat({x, h})), cw.b);
  const Tensor i = num::sigmoid(num::slice(z, 0, n));
  const Tensor f = num::sigmoid(num::slice(z, n, n));
  const Tensor o = num::sigmoid(num::slice(z, 2 * n, n));
  const Tensor g = num::tanh(num::slice(z, 3 * n, n));
  c = num::add(num::mul(f, c), num::mul(i, g));
  h = num::mul(o, num::tanh(c));
}

Tensor LstmLm::paragraph_step(LstmState& state, const LstmContext& ctx, int prev_word,
                              num::RngStream* dropout_rng) const {
  check_token(prev_word);
  Tensor emb = num::row(w_e_, static_cast<std::size_t>(prev_word));
  if (dropout_rng) emb = num::dropout(emb, config_.dropout, *dropout_rng);
  cell(para_, num::concat({state.hs[0], ctx.pooled, emb}), state.hp, state.cp);
  return state.hp;
}

Attention LstmLm::attend(const LstmContext& ctx, const Tensor& hp) const {
  const Tensor shared = num::add(num::matmul(w_ha_, hp), ctx.topic_proj);
  const Tensor scores = num::matmul(num::tanh(num::add_row(ctx.region_proj, shared)), w_att_);
  Attention a;
  a.weights = num::softmax(scores, 0);
  a.attended = num::vecmat(a.weights, ctx.features);
  return a;
}

Tensor LstmLm::gate_couple(const Tensor& h, const LstmContext& ctx, std::size_t l) const {
  const GateWeights& g = gates_.at(l);
  const Tensor z = num::sigmoid(num::add(ctx.z_topic[l], num::matmul(g.u_z, h)));
  const Tensor r = num::sigmoid(num::add(ctx.r_topic[l], num::matmul(g.u_r, h)));
  const Tensor h_hat = num::tanh(num::add(ctx.h_topic[l], num::matmul(g.u_h, num::mul(r, h))));
  // (1 - z) h + z h_hat
  return num::add(num::sub(h, num::mul(z, h)), num::mul(z, h_hat));
}

std::vector<Tensor> LstmLm::sentence_step(LstmState& state, const LstmContext& ctx,
                                          const Tensor& input) const {
  std::vector<Tensor> u;
  Tensor x = input;
  for (std::size_t l = 0; l < layers(); ++l) {
    cell(sent_[l], x, state.hs[l], state.cs[l]);
    u.push_back(gate_couple(state.hs[l], ctx, l));
    x = u.back();
  }
  return u;
}

Tensor LstmLm::predict_word(const std::vector<Tensor>& u, num::RngStream* dropout_rng) const {
  Tensor joined = num::concat(std::span<const Tensor>(u));
  if (dropout_rng) joined = num::dropout(joined, config_.dropout, *dropout_rng);
  return num::log_softmax(num::matmul(w_o_, joined), 0);
}

Tensor LstmLm::step(LstmState& state, const LstmContext& ctx, int prev_word,
                    num::RngStream* dropout_rng) const {
  const Tensor hp = paragraph_step(state, ctx, prev_word, dropout_rng);
  const Attention att = attend(ctx, hp);
  return predict_word(sentence_step(state, ctx, num::concat({att.attended, hp})), dropout_rng);
}

lm::LmScore LstmLm::lstm_forward(const std::vector<std::vector<int>>& sentences,
                                 const data::RegionFeatureSet& features,
                                 const std::vector<Tensor>& theta,
                                 num::RngStream* dropout_rng) const {
  const LstmContext ctx = prepare(features, theta);
  LstmState state = initial_state();
  Tensor total_ll;
  lm::LmScore out;
  for (const auto& sentence : sentences) {
    if (sentence.empty()) throw InvalidArgument("empty sentence in paragraph");
    int prev = data::kBos;
    for (int token : sentence) {
      check_token(token);
      const Tensor logp = step(state, ctx, prev, dropout_rng);
      const std::size_t id = static_cast<std::size_t>(token);
      out.token_log_probs.push_back(logp[id]);
      const Tensor term = num::pick(logp, std::span<const std::size_t>(&id, 1));
      total_ll = total_ll.defined() ? num::add(total_ll, term) : term;
      prev = token;
    }
  }
  if (!total_ll.defined()) throw InvalidArgument("nothing to score");
  out.tokens = out.token_log_probs.size();
  out.log_likelihood = total_ll;
  return out;
}

lm::LmScore LstmLm::score(const data::Paragraph& paragraph, const data::RegionFeatureSet& features,
                          const std::vector<Tensor>& theta, num::RngStream* dropout_rng) const {
  for (const auto& s : paragraph.sentences) {
    if (s.empty() || s.back() != data::kEos) {
      throw InvalidArgument("paragraph sentence does not end with the end-of-sentence id");
    }
  }
  return lstm_forward(data::lm_sentences(paragraph), features, theta, dropout_rng);
}

std::unique_ptr<lm::DecodeSession> LstmLm::start(const data::RegionFeatureSet& features,
                                                 const std::vector<Tensor>& theta) const {
  num::NoGradGuard guard;
  return std::make_unique<LstmSession>(*this, prepare(features, theta));
}

}  // namespace vtcm::lstm
