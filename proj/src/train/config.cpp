#include "vtcm/train/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vtcm/error.hpp"

namespace vtcm::train {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw InvalidArgument("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  return out;
}

}  // namespace

std::string to_string(LmKind kind) { return kind == LmKind::kLstm ? "lstm" : "transformer"; }

LmKind parse_lm_kind(const std::string& name) {
  if (name == "lstm") return LmKind::kLstm;
  if (name == "transformer") return LmKind::kTransformer;
  throw InvalidArgument("unknown language model '" + name + "' (expected lstm or transformer)");
}

double default_learning_rate(LmKind kind, std::size_t model_dim) {
  if (kind == LmKind::kLstm) return 5e-4;
  return 1.0 / std::sqrt(static_cast<double>(model_dim));
}

double TrainConfig::base_learning_rate() const {
  return learning_rate ? *learning_rate : default_learning_rate(lm, hidden);
}

double TrainConfig::dropout_rate() const {
  if (dropout) return *dropout;
  return lm == LmKind::kLstm ? 0.5 : 0.1;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidArgument("config: " + what); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (widths.empty()) fail("widths must list at least one layer");
  if (std::find(widths.begin(), widths.end(), 0u) != widths.end()) fail("widths must be positive");
  if (!(base_learning_rate() >= 0.0) || !std::isfinite(base_learning_rate())) {
    fail("learning_rate must be finite and nonnegative");
  }
  if (lm == LmKind::kTransformer && warmup == 0) fail("warmup must be positive");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (!(dropout_rate() >= 0.0 && dropout_rate() < 1.0)) fail("dropout must lie in [0, 1)");
  if (epochs == 0) fail("epochs must be positive");
  if (encoder_hidden == 0 || hidden == 0) fail("hidden sizes must be positive");
  if (lm == LmKind::kTransformer && (heads == 0 || hidden % heads != 0)) {
    fail("heads must divide hidden");
  }
  if (!(eta > 0.0)) fail("eta must be positive");
  if (!(topic_step >= 0.0)) fail("topic_step must be nonnegative");
}

TrainConfig parse_config(std::istream& in) {
  TrainConfig c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "lm") {
      c.lm = parse_lm_kind(value);
    } else if (key == "batch_size") {
      c.batch_size = parse_number<std::size_t>(key, value);
    } else if (key == "widths") {
      c.widths = parse_list(key, value);
    } else if (key == "learning_rate") {
      c.learning_rate = parse_number<double>(key, value);
    } else if (key == "warmup") {
      c.warmup = parse_number<std::size_t>(key, value);
    } else if (key == "clip_norm") {
      c.clip_norm = parse_number<double>(key, value);
    } else if (key == "dropout") {
      c.dropout = parse_number<double>(key, value);
    } else if (key == "epochs") {
      c.epochs = parse_number<std::size_t>(key, value);
    } else if (key == "max_steps") {
      c.max_steps = parse_number<std::size_t>(key, value);
    } else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "encoder_hidden") {
      c.encoder_hidden = parse_number<std::size_t>(key, value);
    } else if (key == "hidden") {
      c.hidden = parse_number<std::size_t>(key, value);
    } else if (key == "heads") {
      c.heads = parse_number<std::size_t>(key, value);
    } else if (key == "memory_slots") {
      c.memory_slots = parse_number<std::size_t>(key, value);
    } else if (key == "eta") {
      c.eta = parse_number<double>(key, value);
    } else if (key == "topic_step") {
      c.topic_step = parse_number<double>(key, value);
    } else {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": unknown key '" + key +
                            "'");
    }
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config " + path);
  return parse_config(in);
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "lm = " << to_string(c.lm) << '\n' << "batch_size = " << c.batch_size << '\n';
  out << "widths = ";
  for (std::size_t i = 0; i < c.widths.size(); ++i) out << (i ? "," : "") << c.widths[i];
  out << '\n';
  if (c.learning_rate) out << "learning_rate = " << *c.learning_rate << '\n';
  out << "warmup = " << c.warmup << '\n' << "clip_norm = " << c.clip_norm << '\n';
  if (c.dropout) out << "dropout = " << *c.dropout << '\n';
  out << "epochs = " << c.epochs << '\n'
      << "max_steps = " << c.max_steps << '\n'
      << "seed = " << c.seed << '\n'
      << "encoder_hidden = " << c.encoder_hidden << '\n'
      << "hidden = " << c.hidden << '\n'
      << "heads = " << c.heads << '\n'
      << "memory_slots = " << c.memory_slots << '\n'
      << "eta = " << c.eta << '\n'
      << "topic_step = " << c.topic_step << '\n';
  return out.str();
}

double lr_schedule(LmKind kind, std::uint64_t step, double base, std::uint64_t warmup) {
  if (kind == LmKind::kLstm) return base;
  if (step == 0) return 0.0;
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return base * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

}  // namespace vtcm::train
