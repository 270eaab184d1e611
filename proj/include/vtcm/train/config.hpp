#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vtcm::train {

enum class LmKind { kLstm, kTransformer };

std::string to_string(LmKind kind);
LmKind parse_lm_kind(const std::string& name);

struct TrainConfig {
  LmKind lm = LmKind::kLstm;
  std::size_t batch_size = 20;  // N
  std::vector<std::size_t> widths = {80, 50, 30};
  // Unset means the per-model default (see default_learning_rate).
  std::optional<double> learning_rate;
  std::size_t warmup = 1000;
  double clip_norm = 0.1;
  std::optional<double> dropout;  // unset: 0.5 for the LSTM, 0.1 for the Transformer
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0: no cap
  std::uint64_t seed = 1;

  std::size_t encoder_hidden = 128;
  std::size_t hidden = 512;  // LSTM H = E = A, or Transformer d
  std::size_t heads = 8;
  std::size_t memory_slots = 40;

  double eta = 0.1;        // Dirichlet concentration of the topic columns
  double topic_step = 0.1;  // TLASGR step-size scale a; 0 freezes Phi

  double base_learning_rate() const;
  double dropout_rate() const;
  // Throws InvalidArgument naming the first bad field.
  void validate() const;
};

double default_learning_rate(LmKind kind, std::size_t model_dim);

// `key = value` lines; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_config(std::istream& in);
TrainConfig load_config(const std::string& path);
// Round-trips through parse_config.
std::string format_config(const TrainConfig& config);

// LSTM: constant base. Transformer: base * min(step^-1/2, step * warmup^-3/2),
// which is 0 at step 0.
double lr_schedule(LmKind kind, std::uint64_t step, double base, std::uint64_t warmup);

}  // namespace vtcm::train
