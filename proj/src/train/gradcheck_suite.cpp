#include "vtcm/train/gradcheck_suite.hpp"

#include "vtcm/lstm/lstm_lm.hpp"
#include "vtcm/numerics/gradcheck.hpp"
#include "vtcm/numerics/ops.hpp"
#include "vtcm/topic/elbo.hpp"
#include "vtcm/train/trainer.hpp"
#include "vtcm/transformer/transformer_lm.hpp"

namespace vtcm::train {

using num::RngStream;
using num::Tensor;

namespace {

constexpr double kThreshold = 1e-4;

Tensor uniform_tensor(RngStream& rng, num::Shape shape, double lo, double hi) {
  std::vector<double> v(num::shape_size(shape));
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor::from(std::move(shape), std::move(v));
}

SuiteResult finish(std::string name, const num::GradCheckResult& r) {
  return {std::move(name), r.max_rel_error, kThreshold, r.worst, r.coordinates};
}

std::vector<std::pair<std::string, Tensor>> all_params(const num::ParameterStore& s) {
  return {s.all().begin(), s.all().end()};
}

SuiteResult gradcheck_lm(lm::LanguageModel& model, const std::string& name, RngStream& rng) {
  const auto f = data::RegionFeatureSet::create("g", uniform_tensor(rng, {2, 3}, -1, 1));
  std::vector<Tensor> theta = {uniform_tensor(rng, {3}, 0, 2), uniform_tensor(rng, {2}, 0, 2)};
  data::Paragraph p;
  p.sentences = {{6, 7, data::kEos}};
  return finish(name, num::grad_check_params(
                          [&] { return model.score(p, f, theta).log_likelihood; },
                          all_params(model.params())));
}

}  // namespace

SuiteResult gradcheck_elbo() {
  RngStream rng(9, 0);
  const topic::TopicHierarchy h = topic::TopicHierarchy::random(6, {4, 3}, rng);
  num::ParameterStore store;
  topic::TopicEncoder enc(store, "enc/", {5, 6, {4, 3}}, rng);
  const Tensor pooled = uniform_tensor(rng, {5}, -1, 1);
  const auto eps = topic::draw_eps(rng, {4, 3});
  const std::vector<double> counts = {2, 0, 1, 4, 0, 3};
  return finish("elbo_tm", num::grad_check_params(
                               [&] { return topic::elbo_tm(counts, pooled, enc, h, eps).value; },
                               all_params(store)));
}

std::vector<SuiteResult> run_gradcheck_suites() {
  std::vector<SuiteResult> out;
  out.push_back(gradcheck_elbo());

  RngStream rng(31, 0);
  lstm::LstmConfig lc;
  lc.vocab = 9;
  lc.feature_dim = 3;
  lc.hidden = 4;
  lc.embed = lc.attention = 3;
  lc.topic_widths = {3, 2};
  lc.dropout = 0.0;
  lstm::LstmLm lstm_model(lc, rng);
  out.push_back(gradcheck_lm(lstm_model, "lstm_lm", rng));

  transformer::TransformerConfig tc;
  tc.vocab = 9;
  tc.feature_dim = 3;
  tc.model_dim = 8;
  tc.heads = 2;
  tc.memory_slots = 2;
  tc.topic_widths = {3, 2};
  tc.dropout = 0.0;
  transformer::TransformerLm tf_model(tc, rng);
  out.push_back(gradcheck_lm(tf_model, "transformer_lm", rng));

  // Joint loss through the encoder: the caption term's theta path included.
  TrainConfig cfg;
  cfg.widths = {3, 2};
  cfg.encoder_hidden = 4;
  cfg.hidden = 3;
  cfg.dropout = 0.0;
  auto vocab = data::make_vocabs(data::synth_terms(5));
  ModelBundle bundle(cfg, vocab, 3);
  Example ex{data::RegionFeatureSet::create("j", uniform_tensor(rng, {2, 3}, -1, 1)), {}, {}};
  ex.paragraph.sentences = {{6, 8, data::kEos}};
  ex.counts = {0, 2, 0, 1, 0};
  const auto eps = topic::draw_eps(rng, cfg.widths);
  out.push_back(finish("joint_loss", num::grad_check_params(
                                         [&] { return joint_loss({&ex}, bundle, {eps}).total; },
                                         all_params(bundle.tm_params))));
  return out;
}

}  // namespace vtcm::train
