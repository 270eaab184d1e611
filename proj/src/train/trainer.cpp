#include "vtcm/train/trainer.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "vtcm/error.hpp"
#include "vtcm/lstm/lstm_lm.hpp"
#include "vtcm/numerics/ops.hpp"
#include "vtcm/topic/elbo.hpp"
#include "vtcm/transformer/transformer_lm.hpp"

namespace vtcm::train {

using num::Tensor;

namespace {

constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kEpsStream = 1;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kDropoutStream = 3;
constexpr std::uint64_t kShuffleStreamBase = 100;

std::unique_ptr<lm::LanguageModel> make_lm(const TrainConfig& c, std::size_t vocab,
                                           std::size_t feature_dim, num::RngStream& rng) {
  if (c.lm == LmKind::kLstm) {
    lstm::LstmConfig lc;
    lc.vocab = vocab;
    lc.feature_dim = feature_dim;
    lc.hidden = lc.embed = lc.attention = c.hidden;
    lc.topic_widths = c.widths;
    lc.dropout = c.dropout_rate();
    return std::make_unique<lstm::LstmLm>(lc, rng);
  }
  transformer::TransformerConfig tc;
  tc.vocab = vocab;
  tc.feature_dim = feature_dim;
  tc.model_dim = c.hidden;
  tc.heads = c.heads;
  tc.memory_slots = c.memory_slots;
  tc.topic_widths = c.widths;
  tc.dropout = c.dropout_rate();
  return std::make_unique<transformer::TransformerLm>(tc, rng);
}

std::vector<std::int64_t> to_counts(const std::vector<double>& counts) {
  std::vector<std::int64_t> out;
  out.reserve(counts.size());
  for (double c : counts) out.push_back(static_cast<std::int64_t>(std::llround(c)));
  return out;
}

nlohmann::json words_json(const data::Vocabulary& v) { return v.words(); }

}  // namespace

std::vector<Example> make_examples(const data::SynthCorpus& corpus) {
  std::vector<Example> out;
  for (const auto& d : corpus.docs) {
    out.push_back({d.features, d.paragraph, d.bow.dense(corpus.vocab.tm.size())});
  }
  return out;
}

std::vector<Example> make_examples(const std::vector<data::CorpusRecord>& corpus,
                                   const std::vector<data::RegionFeatureSet>& features,
                                   const data::VocabPair& vocab) {
  std::map<std::string, const data::RegionFeatureSet*> by_id;
  for (const auto& f : features) by_id[f.image_id] = &f;
  std::vector<Example> out;
  for (const auto& r : corpus) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::kMissing, "no region features for image '" + r.id + "'");
    }
    data::Paragraph p = data::encode_paragraph(r, vocab.lm);
    if (p.sentences.empty()) continue;
    auto counts = data::to_bow(p, vocab).bow.dense(vocab.tm.size());
    out.push_back({*it->second, std::move(p), std::move(counts)});
  }
  return out;
}

TrainStreams::TrainStreams(std::uint64_t seed)
    : eps(seed, kEpsStream), augment(seed, kAugmentStream), dropout(seed, kDropoutStream) {}

ModelBundle::ModelBundle(TrainConfig cfg, data::VocabPair v, std::size_t feature_dim_)
    : config(std::move(cfg)), vocab(std::move(v)), feature_dim(feature_dim_), streams(config.seed) {
  config.validate();
  if (vocab.tm.size() == 0) throw InvalidArgument("topic vocabulary is empty");
  if (feature_dim == 0) throw InvalidArgument("feature dimension must be positive");
  num::RngStream init(config.seed, kInitStream);
  encoder = std::make_unique<topic::TopicEncoder>(
      tm_params, "enc/", topic::EncoderConfig{feature_dim, config.encoder_hidden, config.widths},
      init);
  hierarchy = topic::TopicHierarchy::random(vocab.tm.size(), config.widths, init, config.eta);
  tlasgr = topic::TlasgrState::create(hierarchy);
  tlasgr.a = config.topic_step;
  lm = make_lm(config, vocab.lm.size(), feature_dim, init);
}

std::vector<std::pair<std::string, Tensor>> ModelBundle::trainable() const {
  auto out = tm_params.with_prefix("");
  for (const auto& [name, t] : lm->params().all()) out.emplace_back(name, t);
  return out;
}

void ModelBundle::zero_grad() {
  tm_params.zero_grad();
  lm->params().zero_grad();
}

JointLoss joint_loss(const std::vector<const Example*>& batch, const ModelBundle& model,
                     const std::vector<std::vector<std::vector<double>>>& eps,
                     JointOptions options) {
  if (batch.empty()) throw InvalidArgument("joint_loss: empty batch");
  if (eps.size() != batch.size()) throw InvalidArgument("joint_loss: one eps set per image");
  JointLoss out;
  Tensor sum;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Example& ex = *batch[n];
    auto terms = topic::elbo_from_posterior(ex.counts, model.encoder->encode(ex.features.pooled),
                                            model.hierarchy, eps[n]);
    std::vector<Tensor> theta = terms.posterior.theta;
    std::vector<std::vector<double>> values;
    for (auto& t : theta) {
      values.push_back(t.to_vector());
      if (options.detach_theta) t = t.detach();
    }
    out.theta.push_back(std::move(values));
    const auto caption = model.lm->score(ex.paragraph, ex.features, theta, options.dropout);
    const Tensor joint = num::add(terms.value, caption.log_likelihood);
    sum = sum.defined() ? num::add(sum, joint) : joint;
    out.elbo += terms.value.item();
    out.nll -= caption.log_likelihood.item();
    out.tokens += caption.tokens;
  }
  const double n = static_cast<double>(batch.size());
  out.total = num::scale(sum, -1.0 / n);
  out.elbo /= n;
  out.nll /= n;
  return out;
}

std::string format_log_record(const StepStats& s) {
  nlohmann::json j;
  j["step"] = s.step;
  j["loss"] = s.loss;
  j["elbo"] = s.elbo;
  j["nll"] = s.nll;
  j["lr"] = s.lr;
  j["grad_norm"] = s.grad_norm;
  j["tokens"] = s.tokens;
  if (s.skipped) j["skipped"] = true;
  return j.dump();
}

StepStats train_step(ModelBundle& model, const std::vector<const Example*>& batch, double rho) {
  std::vector<std::vector<std::vector<double>>> eps;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    eps.push_back(topic::draw_eps(model.streams.eps, model.config.widths));
  }
  StepStats stats;
  stats.step = model.step + 1;
  stats.lr = lr_schedule(model.config.lm, stats.step, model.config.base_learning_rate(),
                         model.config.warmup);
  JointLoss loss;
  {
    num::Tape tape;
    JointOptions opts;
    if (model.config.dropout_rate() > 0.0) opts.dropout = &model.streams.dropout;
    try {
      loss = joint_loss(batch, model, eps, opts);
      tape.backward(loss.total);
    } catch (const NumericError&) {
      // A non-finite forward or backward value: count it like a non-finite
      // gradient and leave both Omega and Phi untouched.
      model.zero_grad();
      ++model.adam.skipped;
      ++model.step;
      stats.loss = stats.elbo = stats.nll = std::numeric_limits<double>::quiet_NaN();
      stats.skipped = true;
      return stats;
    }
    auto params = model.trainable();
    const StepReport report = adaptive_step(params, model.adam, stats.lr, model.config.clip_norm);
    stats.grad_norm = report.grad_norm;
    stats.skipped = report.skipped;
    model.zero_grad();
  }
  stats.loss = loss.total.item();
  stats.elbo = loss.elbo;
  stats.nll = loss.nll;
  stats.tokens = loss.tokens;

  if (model.config.topic_step > 0.0) {
    std::vector<topic::AugmentedCounts> aug;
    for (std::size_t n = 0; n < batch.size(); ++n) {
      aug.push_back(topic::augment_counts(to_counts(batch[n]->counts), model.hierarchy,
                                          loss.theta[n], model.streams.augment));
    }
    model.tlasgr.rho = rho;
    topic::tlasgr_update(model.hierarchy, topic::aggregate(aug, model.hierarchy), model.tlasgr,
                         model.streams.augment);
  }
  ++model.step;
  return stats;
}

EpochStats train_epoch(ModelBundle& model, const std::vector<Example>& dataset,
                       const std::function<void(const StepStats&)>& on_step) {
  if (dataset.empty()) throw InvalidArgument("train_epoch: empty dataset");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  num::RngStream shuffler(model.config.seed, kShuffleStreamBase + model.epoch);
  num::shuffle(shuffler, order);
  const std::size_t n = model.config.batch_size;
  const double rho = static_cast<double>(dataset.size()) / static_cast<double>(n);

  EpochStats out;
  for (std::size_t begin = 0; begin < order.size(); begin += n) {
    if (model.config.max_steps && model.step >= model.config.max_steps) break;
    std::vector<const Example*> batch;
    for (std::size_t i = begin; i < std::min(order.size(), begin + n); ++i) {
      batch.push_back(&dataset[order[i]]);
    }
    const StepStats s = train_step(model, batch, rho);
    if (on_step) on_step(s);
    out.trace.push_back(s);
    out.loss += s.loss;
    out.elbo += s.elbo;
    out.nll += s.nll;
    out.skipped += s.skipped;
  }
  out.steps = out.trace.size();
  if (out.steps) {
    out.loss /= static_cast<double>(out.steps);
    out.elbo /= static_cast<double>(out.steps);
    out.nll /= static_cast<double>(out.steps);
  }
  ++model.epoch;
  return out;
}

data::Checkpoint save_bundle(const ModelBundle& model) {
  data::Checkpoint ck;
  ck.meta["config"] = format_config(model.config);
  ck.meta["vocab.lm"] = words_json(model.vocab.lm).dump();
  ck.meta["vocab.tm"] = words_json(model.vocab.tm).dump();
  ck.meta["vocab.stopwords"] = nlohmann::json(model.vocab.stopwords).dump();
  ck.meta["feature_dim"] = std::to_string(model.feature_dim);
  ck.meta["step"] = std::to_string(model.step);
  ck.meta["epoch"] = std::to_string(model.epoch);
  ck.meta["rng.eps"] = model.streams.eps.state();
  ck.meta["rng.augment"] = model.streams.augment.state();
  ck.meta["rng.dropout"] = model.streams.dropout.state();
  ck.meta["tlasgr.step"] = std::to_string(model.tlasgr.step);
  ck.meta["adam.step"] = std::to_string(model.adam.step);
  ck.meta["adam.skipped"] = std::to_string(model.adam.skipped);

  ck.put_store("tm/", model.tm_params);
  ck.put_store("lm/", model.lm->params());
  const auto& h = model.hierarchy;
  for (std::size_t l = 0; l < h.layers(); ++l) {
    const std::string i = std::to_string(l + 1);
    ck.put("phi/" + i, h.phi[l]);
    ck.put("tlasgr/precond/" + i, Tensor::vector(model.tlasgr.precond[l]));
  }
  ck.put("topic/r", Tensor::vector(h.r));
  ck.put("topic/tau", Tensor::vector(h.tau));
  ck.put("topic/eta", Tensor::vector(h.eta));
  for (const auto& [name, m] : model.adam.m) ck.put("adam/m/" + name, Tensor::vector(m));
  for (const auto& [name, v] : model.adam.v) ck.put("adam/v/" + name, Tensor::vector(v));
  return ck;
}

std::unique_ptr<ModelBundle> load_bundle(const data::Checkpoint& ck) {
  std::istringstream cfg_text(ck.get("config"));
  TrainConfig cfg = parse_config(cfg_text);
  data::VocabPair vocab;
  try {
    vocab.lm = data::Vocabulary(nlohmann::json::parse(ck.get("vocab.lm")).get<std::vector<std::string>>());
    vocab.tm = data::Vocabulary(nlohmann::json::parse(ck.get("vocab.tm")).get<std::vector<std::string>>());
    vocab.stopwords =
        nlohmann::json::parse(ck.get("vocab.stopwords")).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint vocabulary is malformed: ") + e.what());
  }
  vocab.link();
  auto model = std::make_unique<ModelBundle>(cfg, std::move(vocab),
                                             std::stoull(ck.get("feature_dim")));
  ck.restore_store("tm/", model->tm_params);
  ck.restore_store("lm/", model->lm->params());
  auto& h = model->hierarchy;
  for (std::size_t l = 0; l < h.layers(); ++l) {
    const std::string i = std::to_string(l + 1);
    ck.restore("phi/" + i, h.phi[l]);
    model->tlasgr.precond[l] = ck.tensor("tlasgr/precond/" + i).values;
  }
  h.r = ck.tensor("topic/r").values;
  h.tau = ck.tensor("topic/tau").values;
  h.eta = ck.tensor("topic/eta").values;
  h.validate(1e-8);
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("adam/m/", 0) == 0) model->adam.m[name.substr(7)] = t.values;
    if (name.rfind("adam/v/", 0) == 0) model->adam.v[name.substr(7)] = t.values;
  }
  model->step = std::stoull(ck.get("step"));
  model->epoch = std::stoull(ck.get("epoch"));
  model->tlasgr.step = std::stoull(ck.get("tlasgr.step"));
  model->adam.step = std::stoull(ck.get("adam.step"));
  model->adam.skipped = std::stoull(ck.get("adam.skipped"));
  model->streams.eps.restore(ck.get("rng.eps"));
  model->streams.augment.restore(ck.get("rng.augment"));
  model->streams.dropout.restore(ck.get("rng.dropout"));
  return model;
}

}  // namespace vtcm::train
