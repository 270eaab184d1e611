// Command-line front end: synth, train, generate, topics, eval, gradcheck.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "vtcm/data/synth.hpp"
#include "vtcm/decode/generate.hpp"
#include "vtcm/decode/metrics.hpp"
#include "vtcm/error.hpp"
#include "vtcm/topic/topic_words.hpp"
#include "vtcm/train/gradcheck_suite.hpp"
#include "vtcm/train/trainer.hpp"

using namespace vtcm;

namespace {

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  if (out.empty()) throw InvalidArgument("empty width list");
  return out;
}

std::pair<std::size_t, std::size_t> parse_override(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw InvalidArgument("--topic-override expects layer:topic, got '" + text + "'");
  }
  try {
    return {std::stoul(text.substr(0, colon)), std::stoul(text.substr(colon + 1))};
  } catch (const std::exception&) {
    throw InvalidArgument("--topic-override expects layer:topic, got '" + text + "'");
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
  }
  return out;
}

// "id<TAB>text" records; several lines may share an id.
std::map<std::string, std::vector<std::string>> read_records(const std::string& path) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& line : read_lines(path)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path + ": line without a tab: " + line);
    out[line.substr(0, tab)].push_back(line.substr(tab + 1));
  }
  return out;
}

int cmd_synth(const std::string& out_dir, std::size_t docs, std::size_t vocab,
              const std::string& widths, std::size_t length, std::uint64_t seed,
              const data::FeatureMap& map) {
  std::filesystem::create_directories(out_dir);
  num::RngStream hr(seed, 0);
  const auto truth = data::planted_hierarchy(vocab, parse_widths(widths), hr);
  num::RngStream cr(seed, 1);
  const auto corpus = data::synth_corpus(cr, truth, docs, length, map);
  std::vector<data::CorpusRecord> records;
  std::vector<data::RegionFeatureSet> features;
  for (const auto& d : corpus.docs) {
    records.push_back(d.record);
    features.push_back(d.features);
  }
  data::write_corpus(out_dir + "/corpus.jsonl", records);
  data::save_features(out_dir + "/features.vtcf", features);
  std::ofstream topics(out_dir + "/topics_true.tsv");
  topic::write_topic_table(topics, truth, corpus.vocab.tm, vocab);
  std::cout << "wrote " << docs << " documents to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& corpus_path,
              const std::string& features_path, const std::string& out, const std::string& log_path,
              const std::string& stopwords_path, double trim, const std::string& resume) {
  const auto corpus = data::read_corpus(corpus_path);
  const auto features = data::load_features(features_path);
  if (features.empty()) throw InvalidArgument("no region features in " + features_path);
  std::unique_ptr<train::ModelBundle> model;
  if (!resume.empty()) {
    model = train::load_bundle(data::load_checkpoint(resume));
  } else {
    const auto cfg = train::load_config(config_path);
    std::vector<std::string> stopwords;
    if (!stopwords_path.empty()) stopwords = read_lines(stopwords_path);
    model = std::make_unique<train::ModelBundle>(
        cfg, data::build_vocabs(corpus, stopwords, trim), features.front().dim());
  }
  const auto examples = train::make_examples(corpus, features, model->vocab);
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::app);
    if (!log) throw Error(ErrorKind::kIo, "cannot write log " + log_path);
  }
  while (model->epoch < model->config.epochs) {
    const auto stats = train::train_epoch(*model, examples, [&](const train::StepStats& s) {
      if (log) log << train::format_log_record(s) << '\n';
    });
    std::cerr << "epoch " << model->epoch << ": loss " << stats.loss << " elbo " << stats.elbo
              << " nll " << stats.nll << " skipped " << stats.skipped << "\n";
    if (stats.steps == 0) break;
  }
  data::save_checkpoint(out, train::save_bundle(*model));
  std::cout << "saved " << out << " at step " << model->step << "\n";
  return 0;
}

int cmd_generate(const std::string& checkpoint, const std::string& features_path,
                 const std::vector<std::string>& images, const std::string& override_text,
                 std::uint64_t seed, const std::string& penalty, bool sample, double temperature,
                 std::size_t draws) {
  const auto model = train::load_bundle(data::load_checkpoint(checkpoint));
  decode::DecodeConfig cfg;
  cfg.penalty = penalty == "inf" ? decode::kHardBan : std::stod(penalty);
  cfg.mode = sample ? decode::SamplingMode::kSample : decode::SamplingMode::kGreedy;
  cfg.temperature = temperature;
  if (!override_text.empty()) {
    const auto [layer, topic] = parse_override(override_text);
    cfg.theta_override = decode::override_theta(model->config.widths, layer, topic);
  }
  num::RngStream rng(seed, 0);
  for (const auto& f : data::load_features(features_path)) {
    if (!images.empty() && std::find(images.begin(), images.end(), f.image_id) == images.end()) {
      continue;
    }
    for (std::size_t d = 0; d < draws; ++d) {
      const auto g = decode::generate(f, *model->encoder, *model->lm, cfg, rng);
      std::cout << f.image_id << '\t' << data::render(g.paragraph, model->vocab.lm) << '\n';
    }
  }
  return 0;
}

int cmd_topics(const std::string& checkpoint, std::size_t top) {
  const auto model = train::load_bundle(data::load_checkpoint(checkpoint));
  topic::write_topic_table(std::cout, model->hierarchy, model->vocab.tm, top);
  return 0;
}

int cmd_eval(const std::string& cand_path, const std::string& ref_path,
             const std::string& per_image) {
  const auto cands = read_records(cand_path);
  const auto refs = read_records(ref_path);
  std::vector<std::string> ids;
  std::vector<decode::Sentence> c;
  std::vector<std::vector<decode::Sentence>> r;
  for (const auto& [id, texts] : cands) {
    auto it = refs.find(id);
    if (it == refs.end()) throw Error(ErrorKind::kMissing, "no reference for image '" + id + "'");
    ids.push_back(id);
    c.push_back(decode::tokenize(texts.front()));
    std::vector<decode::Sentence> rr;
    for (const auto& t : it->second) rr.push_back(decode::tokenize(t));
    r.push_back(std::move(rr));
  }
  const auto stats = decode::NgramStats::build(r);
  std::cout << std::fixed << std::setprecision(6) << "metric\tvalue\n";
  for (std::size_t n = 1; n <= 4; ++n) {
    std::cout << "BLEU-" << n << '\t' << decode::bleu_n(c, r, n) << '\n';
  }
  std::cout << "CIDEr-D\t" << decode::cider(c, r, stats) << '\n' << "METEOR\tn/a\n";
  if (!per_image.empty()) {
    std::ofstream out(per_image);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + per_image);
    out << std::fixed << std::setprecision(6) << "id\tBLEU-4\tCIDEr-D\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out << ids[i] << '\t' << decode::bleu_n({c[i]}, {r[i]}, 4) << '\t'
          << decode::cider_d(c[i], r[i], stats) << '\n';
    }
  }
  return 0;
}

int cmd_gradcheck() {
  bool ok = true;
  std::cout << "suite\tmax_rel_error\tthreshold\tresult\n";
  for (const auto& s : train::run_gradcheck_suites()) {
    ok &= s.passed();
    std::cout << s.name << '\t' << std::scientific << std::setprecision(3) << s.max_rel_error
              << '\t' << s.threshold << '\t' << (s.passed() ? "PASS" : "FAIL") << '\n';
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topic-guided visual paragraph captioning"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a synthetic corpus and feature file");
  std::string synth_out = "synth";
  std::size_t docs = 500, vocab = 30, length = 50;
  std::string widths = "5,3";
  std::uint64_t synth_seed = 1;
  data::FeatureMap map;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--docs", docs, "number of documents");
  synth->add_option("--vocab", vocab, "topic vocabulary size");
  synth->add_option("--widths", widths, "layer widths, comma separated");
  synth->add_option("--length", length, "words per document");
  synth->add_option("--seed", synth_seed, "random seed");
  synth->add_option("--regions", map.regions, "regions per image");
  synth->add_option("--dim", map.dim, "feature dimension");

  auto* trn = app.add_subcommand("train", "train from a config file");
  std::string config, corpus, features, out = "model.vtck", log, stopwords, resume;
  double trim = 0.0;
  trn->add_option("--config", config, "key = value config file");
  trn->add_option("--corpus", corpus, "corpus JSON lines")->required();
  trn->add_option("--features", features, "region feature file")->required();
  trn->add_option("--out", out, "checkpoint to write");
  trn->add_option("--log", log, "JSON-lines training log");
  trn->add_option("--stopwords", stopwords, "stopword list, one per line");
  trn->add_option("--trim", trim, "fraction of most frequent topic terms to drop");
  trn->add_option("--resume", resume, "checkpoint to continue from");

  auto* gen = app.add_subcommand("generate", "generate paragraphs");
  std::string gen_ckpt, gen_features, override_text, penalty = "2";
  std::vector<std::string> images;
  std::uint64_t gen_seed = 1;
  bool sample = false;
  double temperature = 1.0;
  std::size_t draws = 1;
  gen->add_option("--checkpoint", gen_ckpt, "trained checkpoint")->required();
  gen->add_option("--features", gen_features, "region feature file")->required();
  gen->add_option("--image", images, "image ids to caption (default: all)");
  gen->add_option("--topic-override", override_text,
                  "one-hot topic layer:topic (layer from 1, topic from 0)");
  gen->add_option("--seed", gen_seed, "random seed");
  gen->add_option("--penalty", penalty, "trigram penalty base, or inf to forbid repeats");
  gen->add_flag("--sample", sample, "sample words instead of greedy choice");
  gen->add_option("--temperature", temperature, "sampling temperature");
  gen->add_option("--draws", draws, "paragraphs per image, each with fresh noise");

  auto* top = app.add_subcommand("topics", "print the top words of every topic");
  std::string top_ckpt;
  std::size_t top_n = 10;
  top->add_option("--checkpoint", top_ckpt, "trained checkpoint")->required();
  top->add_option("--top", top_n, "words per topic");

  auto* ev = app.add_subcommand("eval", "BLEU and CIDEr-D of candidates against references");
  std::string cand_path, ref_path, per_image;
  ev->add_option("--candidates", cand_path, "id<TAB>text candidate file")->required();
  ev->add_option("--references", ref_path, "id<TAB>text reference file")->required();
  ev->add_option("--per-image", per_image, "per-image score file to write");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*synth) return cmd_synth(synth_out, docs, vocab, widths, length, synth_seed, map);
    if (*trn) {
      if (config.empty() && resume.empty()) {
        std::cerr << "train needs --config or --resume\n\n" << trn->help();
        return 2;
      }
      return cmd_train(config, corpus, features, out, log, stopwords, trim, resume);
    }
    if (*gen) {
      return cmd_generate(gen_ckpt, gen_features, images, override_text, gen_seed, penalty,
                          sample, temperature, draws);
    }
    if (*top) return cmd_topics(top_ckpt, top_n);
    if (*ev) return cmd_eval(cand_path, ref_path, per_image);
    if (*gc) return cmd_gradcheck();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
