#include "vtcm/transformer/transformer_lm.hpp"

#include <cmath>

#include "vtcm/error.hpp"
#include "vtcm/numerics/ops.hpp"

namespace vtcm::transformer {

using num::Tensor;

namespace {
constexpr double kNormEps = 1e-10;
}  // namespace

namespace {

class TransformerSession final : public lm::DecodeSession {
 public:
  TransformerSession(const TransformerLm& model, EncoderOutputs enc, std::vector<Tensor> theta)
      : model_(model), enc_(std::move(enc)), theta_(std::move(theta)), tokens_{data::kBos} {}

  std::vector<double> next_log_probs() override {
    if (logp_.empty()) {
      num::NoGradGuard guard;
      const Tensor out = model_.decode_stack(enc_, theta_, tokens_);
      const std::size_t v = out.cols(), last = out.rows() - 1;
      logp_.assign(out.data().begin() + static_cast<std::ptrdiff_t>(last * v),
                   out.data().begin() + static_cast<std::ptrdiff_t>((last + 1) * v));
    }
    return logp_;
  }

  void advance(int token) override {
    tokens_.push_back(token);
    logp_.clear();
  }

 private:
  const TransformerLm& model_;
  EncoderOutputs enc_;
  std::vector<Tensor> theta_;
  std::vector<int> tokens_;
  std::vector<double> logp_;
};

}  // namespace

std::vector<double> sinusoid_positions(std::size_t length, std::size_t dim) {
  std::vector<double> pe(length * dim);
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe[p * dim + i] = i % 2 == 0 ? std::sin(static_cast<double>(p) * rate)
                                   : std::cos(static_cast<double>(p) * rate);
    }
  }
  return pe;
}

TransformerLm::TransformerLm(TransformerConfig config, num::RngStream& rng)
    : config_(std::move(config)) {
  const auto& c = config_;
  const std::size_t d = c.model_dim;
  if (c.vocab <= static_cast<std::size_t>(data::kReservedCount) || c.feature_dim == 0 || d == 0 ||
      c.heads == 0 || c.topic_widths.empty() || c.max_length == 0) {
    throw InvalidArgument("Transformer model dimensions must be positive");
  }
  if (d % c.heads != 0) {
    throw InvalidArgument("head count " + std::to_string(c.heads) + " does not divide d = " +
                          std::to_string(d));
  }
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
  const std::size_t inner = 4 * d;
  auto make_norm = [&](const std::string& name) {
    return Norm{store_.constant(name + "/gain", {d}, 1.0), store_.zeros(name + "/bias", {d})};
  };
  auto make_ff = [&](const std::string& name) {
    return FeedForward{store_.xavier(name + "/W1", {d, inner}, rng), store_.zeros(name + "/b1", {inner}),
                       store_.xavier(name + "/W2", {inner, d}, rng), store_.zeros(name + "/b2", {d})};
  };
  w_in_ = store_.xavier("tf/in/W", {c.feature_dim, d}, rng);
  b_in_ = store_.zeros("tf/in/b", {d});
  embed_ = store_.xavier("tf/embed", {c.vocab, d}, rng);
  positions_ = Tensor::from({c.max_length, d}, sinusoid_positions(c.max_length, d));
  for (std::size_t l = 0; l < layers(); ++l) {
    const std::string e = "tf/enc" + std::to_string(l + 1);
    EncoderLayer el;
    el.w_q = store_.xavier(e + "/W_q", {d, d}, rng);
    el.w_k = store_.xavier(e + "/W_k", {d, d}, rng);
    el.w_v = store_.xavier(e + "/W_v", {d, d}, rng);
    if (c.memory_slots > 0) {
      el.m_k = store_.xavier(e + "/M_k", {c.memory_slots, d}, rng);
      el.m_v = store_.xavier(e + "/M_v", {c.memory_slots, d}, rng);
    }
    el.norm1 = make_norm(e + "/norm1");
    el.norm2 = make_norm(e + "/norm2");
    el.ff = make_ff(e + "/ff");
    enc_.push_back(el);

    const std::string p = "tf/dec" + std::to_string(l + 1);
    DecoderLayer dl;
    dl.self_q = store_.xavier(p + "/self/W_q", {d, d}, rng);
    dl.self_k = store_.xavier(p + "/self/W_k", {d, d}, rng);
    dl.self_v = store_.xavier(p + "/self/W_v", {d, d}, rng);
    dl.cross_q = store_.xavier(p + "/cross/W_q", {d, d}, rng);
    dl.cross_k = store_.xavier(p + "/cross/W_k", {d, d}, rng);
    dl.cross_v = store_.xavier(p + "/cross/W_v", {d, d}, rng);
    for (std::size_t m = 0; m < layers(); ++m) {
      const std::string g = p + "/mesh" + std::to_string(m + 1);
      dl.gate_w.push_back(store_.xavier(g + "/W_l", {2 * d, d}, rng));
      dl.gate_b.push_back(store_.zeros(g + "/b_l", {d}));
    }
    dl.norm1 = make_norm(p + "/norm1");
    dl.norm2 = make_norm(p + "/norm2");
    dl.norm3 = make_norm(p + "/norm3");
    dl.ff = make_ff(p + "/ff");
    dec_.push_back(dl);

    if (c.topic_guided) {
      topic_proj_.push_back(
          store_.xavier("tf/topic" + std::to_string(l + 1), {d, c.topic_widths[l]}, rng));
    }
  }
  w_out_ = store_.xavier("tf/out/W", {d, c.vocab}, rng);
  b_out_ = store_.zeros("tf/out/b", {c.vocab});
}

Tensor TransformerLm::norm(const Norm& n, const Tensor& x) const {
  return num::layer_norm_rows(x, n.gain, n.bias, kNormEps);
}

Tensor TransformerLm::feed_forward(const FeedForward& ff, const Tensor& x) const {
  const Tensor hidden = num::relu(num::add_row(num::matmul(x, ff.w1), ff.b1));
  return num::add_row(num::matmul(hidden, ff.w2), ff.b2);
}

Tensor TransformerLm::attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                                AttentionProbe* probe) const {
  const std::size_t heads = config_.heads, dh = config_.model_dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (heads == 1) {
    const Tensor scores = num::scale(num::matmul(q, num::transpose(k)), scale);
    const Tensor p = causal ? num::causal_softmax_rows(scores) : num::softmax(scores, 1);
    if (probe) probe->maps.push_back(p);
    return num::matmul(p, v);
  }
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = num::slice_cols(q, h * dh, dh);
    const Tensor kh = num::slice_cols(k, h * dh, dh);
    const Tensor vh = num::slice_cols(v, h * dh, dh);
    const Tensor scores = num::scale(num::matmul(qh, num::transpose(kh)), scale);
    const Tensor p = causal ? num::causal_softmax_rows(scores) : num::softmax(scores, 1);
    if (probe) probe->maps.push_back(p);
    outs.push_back(num::matmul(p, vh));
  }
  return num::concat_cols(outs);
}

Tensor TransformerLm::mem_attention(const Tensor& x, std::size_t layer,
                                    AttentionProbe* probe) const {
  const EncoderLayer& el = enc_.at(layer);
  if (x.ndim() != 2 || x.cols() != config_.model_dim) {
    throw ShapeError("mem_attention expects M x " + std::to_string(config_.model_dim) +
                     ", got " + num::to_string(x.shape()));
  }
  Tensor keys = num::matmul(x, el.w_k);
  Tensor values = num::matmul(x, el.w_v);
  if (config_.memory_slots > 0) {
    keys = num::concat_rows(std::vector<Tensor>{keys, el.m_k});
    values = num::concat_rows(std::vector<Tensor>{values, el.m_v});
  }
  return attention(num::matmul(x, el.w_q), keys, values, false, probe);
}

EncoderOutputs TransformerLm::encode_stack(const data::RegionFeatureSet& features,
                                           AttentionProbe* probe) const {
  if (features.dim() != config_.feature_dim) {
    throw ShapeError("features have dimension " + std::to_string(features.dim()) +
                     ", model expects " + std::to_string(config_.feature_dim));
  }
  EncoderOutputs out;
  Tensor x = num::add_row(num::matmul(features.features, w_in_), b_in_);
  for (std::size_t l = 0; l < layers(); ++l) {
    const EncoderLayer& el = enc_[l];
    const Tensor z = norm(el.norm1, num::add(x, mem_attention(x, l, probe)));
    x = norm(el.norm2, num::add(z, feed_forward(el.ff, z)));
    out.levels.push_back(x);
  }
  return out;
}

void TransformerLm::check_theta(const std::vector<Tensor>& theta) const {
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
}

std::vector<Tensor> TransformerLm::project_topics(const std::vector<Tensor>& theta) const {
  check_theta(theta);
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < layers(); ++l) {
    out.push_back(config_.topic_guided ? num::matmul(topic_proj_[l], theta[l])
                                       : Tensor::zeros({config_.model_dim}));
  }
  return out;
}

Tensor TransformerLm::meshed_attention(const EncoderOutputs& enc,
                                       const std::vector<Tensor>& topic_vectors, const Tensor& y,
                                       std::size_t layer, AttentionProbe* probe) const {
  const DecoderLayer& dl = dec_.at(layer);
  if (enc.levels.size() != layers() || topic_vectors.size() != layers()) {
    throw ShapeError("meshed attention needs one encoder level and one topic vector per layer");
  }
  const Tensor q = num::matmul(y, dl.cross_q);
  Tensor out;
  for (std::size_t l = 0; l < layers(); ++l) {
    const Tensor memory = config_.topic_guided ? num::add_row(enc.levels[l], topic_vectors[l])
                                               : enc.levels[l];
    const Tensor c = attention(q, num::matmul(memory, dl.cross_k),
                               num::matmul(memory, dl.cross_v), false, probe);
    const Tensor alpha = num::sigmoid(num::add_row(
        num::matmul(num::concat_cols(std::vector<Tensor>{y, c}), dl.gate_w[l]), dl.gate_b[l]));
    if (probe) probe->gates.push_back(alpha);
    const Tensor term = num::mul(alpha, c);
    out = out.defined() ? num::add(out, term) : term;
  }
  return out;
}

Tensor TransformerLm::decode_stack(const EncoderOutputs& enc, const std::vector<Tensor>& theta,
                                   const std::vector<int>& tokens, num::RngStream* dropout_rng,
                                   AttentionProbe* probe) const {
  if (tokens.empty() || tokens.front() != data::kBos) {
    throw InvalidArgument("decoder input must start with the begin-of-sequence id");
  }
  if (tokens.size() > config_.max_length) {
    throw InvalidArgument("sequence length " + std::to_string(tokens.size()) +
                          " exceeds the limit " + std::to_string(config_.max_length));
  }
  std::vector<std::size_t> ids;
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab) {
      throw InvalidArgument("token id " + std::to_string(t) + " outside vocabulary of size " +
                            std::to_string(config_.vocab));
    }
    ids.push_back(static_cast<std::size_t>(t));
  }
  const std::vector<Tensor> topics = project_topics(theta);
  const std::size_t n = ids.size(), d = config_.model_dim;
  Tensor y = num::add(num::gather_rows(embed_, ids),
                      Tensor::from({n, d}, std::vector<double>(positions_.data().begin(),
                                                               positions_.data().begin() +
                                                                   static_cast<std::ptrdiff_t>(n * d))));
  if (dropout_rng) y = num::dropout(y, config_.dropout, *dropout_rng);
  for (std::size_t l = 0; l < layers(); ++l) {
    const DecoderLayer& dl = dec_[l];
    const Tensor self = attention(num::matmul(y, dl.self_q), num::matmul(y, dl.self_k),
                                  num::matmul(y, dl.self_v), true, probe);
    const Tensor s = norm(dl.norm1, num::add(y, self));
    const Tensor z = norm(dl.norm2, num::add(s, meshed_attention(enc, topics, s, l, probe)));
    const Tensor x = config_.topic_guided ? num::add_row(z, topics[l]) : z;
    y = norm(dl.norm3, num::add(x, feed_forward(dl.ff, x)));
  }
  if (dropout_rng) y = num::dropout(y, config_.dropout, *dropout_rng);
  return num::log_softmax(num::add_row(num::matmul(y, w_out_), b_out_), 1);
}

lm::LmScore TransformerLm::transformer_forward(const std::vector<int>& y,
                                               const data::RegionFeatureSet& features,
                                               const std::vector<Tensor>& theta,
                                               num::RngStream* dropout_rng) const {
  if (y.empty()) throw InvalidArgument("nothing to score");
  std::vector<int> input = {data::kBos};
  input.insert(input.end(), y.begin(), y.end() - 1);
  const Tensor logp = decode_stack(encode_stack(features), theta, input, dropout_rng);
  std::vector<std::size_t> targets(y.begin(), y.end());
  lm::LmScore out;
  out.log_likelihood = num::pick(logp, targets);
  out.tokens = y.size();
  for (std::size_t i = 0; i < y.size(); ++i) out.token_log_probs.push_back(logp.at(i, targets[i]));
  return out;
}

lm::LmScore TransformerLm::score(const data::Paragraph& paragraph,
                                 const data::RegionFeatureSet& features,
                                 const std::vector<Tensor>& theta,
                                 num::RngStream* dropout_rng) const {
  for (const auto& s : paragraph.sentences) {
    if (s.empty() || s.back() != data::kEos) {
      throw InvalidArgument("paragraph sentence does not end with the end-of-sentence id");
    }
  }
  return transformer_forward(data::flatten(paragraph), features, theta, dropout_rng);
}

std::unique_ptr<lm::DecodeSession> TransformerLm::start(const data::RegionFeatureSet& features,
                                                        const std::vector<Tensor>& theta) const {
  num::NoGradGuard guard;
  check_theta(theta);
  return std::make_unique<TransformerSession>(*this, encode_stack(features), theta);
}

}  // namespace vtcm::transformer
