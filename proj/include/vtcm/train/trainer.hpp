#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vtcm/data/checkpoint.hpp"
#include "vtcm/data/synth.hpp"
#include "vtcm/lm/language_model.hpp"
#include "vtcm/topic/encoder.hpp"
#include "vtcm/topic/hierarchy.hpp"
#include "vtcm/topic/tlasgr.hpp"
#include "vtcm/train/adam.hpp"
#include "vtcm/train/config.hpp"

namespace vtcm::train {

// One image with its paragraph and bag of words over the topic vocabulary.
struct Example {
  data::RegionFeatureSet features;
  data::Paragraph paragraph;
  std::vector<double> counts;
};

std::vector<Example> make_examples(const data::SynthCorpus& corpus);
// Joins corpus records to feature sets by image id; records without
// features are an error.
std::vector<Example> make_examples(const std::vector<data::CorpusRecord>& corpus,
                                   const std::vector<data::RegionFeatureSet>& features,
                                   const data::VocabPair& vocab);

// Random streams of a training run, all derived from the config seed.
struct TrainStreams {
  num::RngStream eps, augment, dropout;
  explicit TrainStreams(std::uint64_t seed);
};

// Everything a run owns: topic encoder (Omega_TM), language model (Omega_LM),
// global topics Phi with their sampler state, and optimizer state.
struct ModelBundle {
  TrainConfig config;
  data::VocabPair vocab;
  std::size_t feature_dim = 0;
  num::ParameterStore tm_params;
  std::unique_ptr<topic::TopicEncoder> encoder;
  topic::TopicHierarchy hierarchy;
  topic::TlasgrState tlasgr;
  std::unique_ptr<lm::LanguageModel> lm;
  AdamState adam;
  TrainStreams streams;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;

  ModelBundle(TrainConfig config, data::VocabPair vocab, std::size_t feature_dim);

  // Encoder and language-model tensors, the set the optimizer updates.
  std::vector<std::pair<std::string, num::Tensor>> trainable() const;
  void zero_grad();
};

struct JointOptions {
  bool detach_theta = false;  // cut the language-model gradient into the encoder
  num::RngStream* dropout = nullptr;
};

struct JointLoss {
  num::Tensor total;  // -(sum ELBO + sum caption log-likelihood) / N
  double elbo = 0.0;  // mean per image
  double nll = 0.0;   // mean caption negative log-likelihood per image
  std::size_t tokens = 0;
  std::vector<std::vector<std::vector<double>>> theta;  // sampled theta per image
};

// eps[n] holds one uniform vector per topic layer for image n.
JointLoss joint_loss(const std::vector<const Example*>& batch, const ModelBundle& model,
                     const std::vector<std::vector<std::vector<double>>>& eps,
                     JointOptions options = {});

struct StepStats {
  std::uint64_t step = 0;
  double loss = 0.0, elbo = 0.0, nll = 0.0, lr = 0.0, grad_norm = 0.0;
  std::size_t tokens = 0;
  bool skipped = false;
};

std::string format_log_record(const StepStats& stats);

// One minibatch: draw eps, sample theta, joint loss, Adam on Omega_TM and
// Omega_LM, then augment_counts and TLASGR on Phi with the same theta.
StepStats train_step(ModelBundle& model, const std::vector<const Example*>& batch, double rho);

struct EpochStats {
  std::size_t steps = 0, skipped = 0;
  double loss = 0.0, elbo = 0.0, nll = 0.0;  // means over steps
  std::vector<StepStats> trace;
};

// Shuffles with the epoch-seeded stream, sets rho = |dataset| / N and runs
// every minibatch (the last one may be short). Stops early once
// config.max_steps is reached.
EpochStats train_epoch(ModelBundle& model, const std::vector<Example>& dataset,
                       const std::function<void(const StepStats&)>& on_step = {});

data::Checkpoint save_bundle(const ModelBundle& model);
std::unique_ptr<ModelBundle> load_bundle(const data::Checkpoint& ckpt);

}  // namespace vtcm::train
