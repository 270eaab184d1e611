#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "vtcm/decode/generate.hpp"
#include "vtcm/decode/metrics.hpp"
#include "vtcm/error.hpp"
#include "vtcm/lstm/lstm_lm.hpp"
#include "vtcm/numerics/ops.hpp"
#include "vtcm/transformer/transformer_lm.hpp"

using namespace vtcm;
using namespace vtcm::decode;
using num::RngStream;
using num::Tensor;

namespace {

Sentence S(const std::string& text) { return tokenize(text); }

// Brute-force CIDEr-D: enumerate every n-gram of the corpus into a fixed
// index, build dense TF-IDF vectors and take clipped cosines directly.
double brute_cider(const Sentence& cand, const std::vector<Sentence>& refs,
                   const std::vector<std::vector<Sentence>>& corpus) {
  double total = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    auto grams_of = [n](const Sentence& s) {
      std::vector<Sentence> g;
      for (std::size_t i = 0; i + n <= s.size(); ++i) g.emplace_back(s.begin() + i, s.begin() + i + n);
      return g;
    };
    std::vector<Sentence> index;
    auto id = [&](const Sentence& g) {
      auto it = std::find(index.begin(), index.end(), g);
      if (it != index.end()) return static_cast<std::size_t>(it - index.begin());
      index.push_back(g);
      return index.size() - 1;
    };
    for (const auto& doc : corpus)
      for (const auto& r : doc)
        for (const auto& g : grams_of(r)) id(g);
    for (const auto& g : grams_of(cand)) id(g);
    std::vector<double> idf(index.size());
    for (std::size_t j = 0; j < index.size(); ++j) {
      double df = 0;
      for (const auto& doc : corpus) {
        bool present = false;
        for (const auto& r : doc) {
          const auto g = grams_of(r);
          present |= std::find(g.begin(), g.end(), index[j]) != g.end();
        }
        df += present;
      }
      idf[j] = std::log(static_cast<double>(corpus.size()) / std::max(1.0, df));
    }
    auto vec = [&](const Sentence& s) {
      std::vector<double> v(index.size(), 0.0);
      for (const auto& g : grams_of(s)) v[id(g)] += 1.0;
      for (std::size_t j = 0; j < v.size(); ++j) v[j] *= idf[j];
      return v;
    };
    const auto c = vec(cand);
    double per = 0;
    for (const auto& r : refs) {
      const auto rv = vec(r);
      double num = 0, nc = 0, nr = 0;
      for (std::size_t j = 0; j < c.size(); ++j) {
        num += std::min(c[j], rv[j]) * rv[j];
        nc += c[j] * c[j];
        nr += rv[j] * rv[j];
      }
      double sim = nc > 0 && nr > 0 ? num / std::sqrt(nc * nr) : num;
      const double d = static_cast<double>(cand.size()) - static_cast<double>(r.size());
      per += sim * std::exp(-d * d / 72.0);
    }
    total += per / static_cast<double>(refs.size());
  }
  return 10.0 * total / 4.0;
}

lstm::LstmConfig toy_lstm() {
  lstm::LstmConfig c;
  c.vocab = 10;
  c.feature_dim = 4;
  c.hidden = c.embed = c.attention = 6;
  c.topic_widths = {3, 2};
  c.dropout = 0.0;
  return c;
}

struct Toy {
  num::ParameterStore enc_store;
  RngStream rng{21, 0};
  topic::TopicEncoder encoder{enc_store, "enc/", {4, 5, {3, 2}}, rng};
  lstm::LstmLm lm{toy_lstm(), rng};
  data::RegionFeatureSet features = data::RegionFeatureSet::create(
      "img", Tensor::from({2, 4}, {0.3, -0.2, 0.5, 0.1, -0.4, 0.6, 0.2, -0.1}));
};

// Unpenalized greedy decoding written independently of generate().
std::vector<std::vector<int>> reference_greedy(const lm::LanguageModel& lm,
                                               const data::RegionFeatureSet& f,
                                               const std::vector<std::vector<double>>& theta,
                                               std::size_t jmax, std::size_t tmax) {
  std::vector<Tensor> th;
  for (const auto& t : theta) th.push_back(Tensor::vector(t));
  auto session = lm.start(f, th);
  std::vector<std::vector<int>> out(1);
  while (true) {
    auto lp = session->next_log_probs();
    lp[data::kPad] = lp[data::kBos] = -INFINITY;
    if (out.back().empty()) lp[data::kEos] = -INFINITY;
    if (!out.back().empty() || out.size() == 1) lp[data::kEop] = -INFINITY;
    int tok = out.back().size() + 1 == tmax
                  ? data::kEos
                  : static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (tok == data::kEop) break;
    session->advance(tok);
    out.back().push_back(tok);
    if (tok == data::kEos) {
      if (out.size() == jmax) break;
      out.emplace_back();
    }
  }
  if (out.back().empty()) out.pop_back();
  return out;
}

}  // namespace

TEST_CASE("BLEU") {
  const std::vector<Sentence> c = {S("the cat sat on the mat")};
  CHECK(bleu_n(c, {{S("the cat sat on the mat")}}, 4) == 1.0);
  CHECK(bleu_n({S("a b c")}, {{S("d e f")}}, 1) == 0.0);

  // Clipping: "the" counts once, "cat" once, out of four candidate words;
  // the candidate is longer than the reference, so no brevity penalty.
  const std::vector<Sentence> cand = {S("the the the cat")};
  const std::vector<std::vector<Sentence>> ref = {{S("the cat sat")}};
  CHECK(bleu_n(cand, ref, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(bleu_n(cand, ref, 2) == doctest::Approx(std::sqrt(0.5 * (1.0 / 3.0))).epsilon(1e-12));
  CHECK(bleu_n(cand, ref, 3) == 0.0);

  // Short candidate: every word matches, penalty exp(1 - 4/2).
  CHECK(bleu_n({S("the cat")}, {{S("the cat sat down")}}, 1) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  // Closest reference length wins.
  CHECK(bleu_n({S("the cat")}, {{S("the cat sat down"), S("the cat sat")}}, 1) ==
        doctest::Approx(std::exp(1.0 - 3.0 / 2.0)).epsilon(1e-12));

  // Corpus-level pooling and order invariance.
  const std::vector<Sentence> cs = {S("a b c d"), S("e f g"), S("h i j k l")};
  const std::vector<std::vector<Sentence>> rs = {{S("a b x d")}, {S("e f g h")}, {S("h i j k")}};
  const double forward = bleu_n(cs, rs, 2);
  CHECK(bleu_n({cs[2], cs[0], cs[1]}, {rs[2], rs[0], rs[1]}, 2) == forward);
  // Unigrams 3+3+4 of 12, bigrams 1+2+3 of 9.
  CHECK(forward == doctest::Approx(std::sqrt((10.0 / 12.0) * (6.0 / 9.0))).epsilon(1e-12));

  CHECK_THROWS_AS(bleu_n({}, {}, 1), InvalidArgument);
  CHECK_THROWS_AS(bleu_n(c, {{S("x")}}, 5), InvalidArgument);
}

TEST_CASE("CIDEr-D") {
  const std::vector<std::vector<Sentence>> corpus = {{S("a cat sat")}, {S("a dog ran")}};
  SUBCASE("identical candidate in a two-document corpus") {
    const double s = cider_d(S("a cat sat"), corpus[0], NgramStats::build(corpus));
    // Orders 1-3 each give cosine 1; no 4-grams exist.
    CHECK(s == doctest::Approx(7.5).epsilon(1e-12));
    CHECK(std::abs(s - brute_cider(S("a cat sat"), corpus[0], corpus)) < 1e-6);
  }
  SUBCASE("n-grams in every document carry no weight") {
    const auto stats = NgramStats::build(corpus);
    CHECK(stats.idf(S("a")) == 0.0);
    CHECK(cider_d(S("a"), corpus[0], stats) == 0.0);
  }
  SUBCASE("nothing shared") {
    CHECK(cider_d(S("zebra yak"), corpus[0], NgramStats::build(corpus)) == 0.0);
  }
  SUBCASE("brute force on mixed fixtures") {
    const std::vector<std::vector<Sentence>> refs = {
        {S("the man rides a red bike down the street"), S("a man on a bike")},
        {S("two dogs play in the grass"), S("the dogs run on the grass near a tree")}};
    const std::vector<Sentence> cands = {S("a man rides a bike on the street"),
                                         S("the dogs play on the grass")};
    const auto stats = NgramStats::build(refs);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(std::abs(cider_d(cands[i], refs[i], stats) - brute_cider(cands[i], refs[i], refs)) <
            1e-6);
    }
    const double fwd = cider(cands, refs);
    CHECK(std::abs(cider({cands[1], cands[0]}, {refs[1], refs[0]}) - fwd) < 1e-12);
    CHECK(fwd > 0.0);
  }
  SUBCASE("length damping") {
    const std::vector<std::vector<Sentence>> c2 = {{S("p q r s t u v w x y z")}, {S("k")}};
    const auto stats = NgramStats::build(c2);
    const double full = cider_d(S("p q r s t u v w x y z"), c2[0], stats);
    CHECK(full == doctest::Approx(10.0).epsilon(1e-12));
    const double part = cider_d(S("p q r"), c2[0], stats);
    CHECK(std::abs(part - brute_cider(S("p q r"), c2[0], c2)) < 1e-6);
    CHECK(part < full);
  }
  CHECK_THROWS_AS(cider_d(S("a"), corpus[0], NgramStats{}), InvalidArgument);
}

TEST_CASE("trigram penalty") {
  const std::vector<int> words = {5, 6, 7, 5, 6, 8, 5, 6};
  std::vector<double> lp(10, std::log(0.1));
  SUBCASE("divides by beta per prior occurrence") {
    auto p = lp;
    REQUIRE(apply_trigram_penalty(p, words, 2.0));
    // (5, 6) was followed by 7 once and 8 once.
    double z = 0.8 + 0.05 + 0.05;
    CHECK(std::exp(p[7]) == doctest::Approx(0.05 / z).epsilon(1e-12));
    CHECK(std::exp(p[8]) == doctest::Approx(0.05 / z).epsilon(1e-12));
    CHECK(std::exp(p[9]) == doctest::Approx(0.1 / z).epsilon(1e-12));
    double s = 0;
    for (double x : p) s += std::exp(x);
    CHECK(std::abs(s - 1.0) <= 1e-10);
  }
  SUBCASE("repeat count raises the exponent") {
    auto p = lp;
    const std::vector<int> w2 = {5, 6, 7, 5, 6, 7, 5, 6};
    REQUIRE(apply_trigram_penalty(p, w2, 3.0));
    CHECK(p[7] - p[9] == doctest::Approx(-2.0 * std::log(3.0)).epsilon(1e-12));
  }
  SUBCASE("hard ban") {
    auto p = lp;
    REQUIRE(apply_trigram_penalty(p, words, kHardBan));
    CHECK(p[7] == -INFINITY);
    CHECK(p[8] == -INFINITY);
    CHECK(std::exp(p[0]) == doctest::Approx(0.125).epsilon(1e-12));
  }
  SUBCASE("no-ops") {
    auto p = lp;
    CHECK_FALSE(apply_trigram_penalty(p, words, 1.0));
    CHECK_FALSE(apply_trigram_penalty(p, {5, 9}, 2.0));
    CHECK(p == lp);
  }
  data::Paragraph para;
  para.sentences = {{5, 6, 7, data::kEos}, {5, 6, 7, data::kEos}};
  CHECK(has_repeated_trigram(para));
  para.sentences = {{5, 6, 7, data::kEos}, {6, 5, 7, data::kEos}};
  CHECK_FALSE(has_repeated_trigram(para));
}

TEST_CASE("topic override") {
  const auto t = override_theta({80, 50, 30}, 1, 64);
  REQUIRE(t.size() == 3);
  CHECK(t[0][64] == 1.0);
  double s = 0;
  for (const auto& l : t) s = std::accumulate(l.begin(), l.end(), s);
  CHECK(s == 1.0);
  CHECK(std::all_of(t[1].begin(), t[1].end(), [](double x) { return x == 0.0; }));
  CHECK(override_theta({3, 2}, 2, 1)[1][1] == 1.0);
  CHECK_THROWS_AS(override_theta({80, 50, 30}, 4, 0), InvalidArgument);
  CHECK_THROWS_AS(override_theta({80, 50, 30}, 0, 0), InvalidArgument);
  CHECK_THROWS_AS(override_theta({80, 50, 30}, 1, 80), InvalidArgument);
}

TEST_CASE("generation") {
  Toy toy;
  DecodeConfig cfg;
  cfg.max_sentences = 3;
  cfg.max_tokens = 6;

  SUBCASE("limits and terminators") {
    RngStream rng(1, 0);
    cfg.mode = SamplingMode::kSample;
    for (int i = 0; i < 20; ++i) {
      const auto g = generate(toy.features, toy.encoder, toy.lm, cfg, rng);
      REQUIRE(!g.paragraph.sentences.empty());
      CHECK(g.paragraph.sentences.size() <= 3);
      for (const auto& s : g.paragraph.sentences) {
        CHECK(s.size() >= 2);
        CHECK(s.size() <= 6);
        CHECK(s.back() == data::kEos);
        for (std::size_t j = 0; j + 1 < s.size(); ++j) CHECK(s[j] >= data::kUnk);
      }
    }
  }
  SUBCASE("hard ban removes every repeated trigram") {
    cfg.max_sentences = 6;
    cfg.max_tokens = 30;
    cfg.penalty = kHardBan;
    cfg.mode = SamplingMode::kSample;
    RngStream rng(2, 0);
    for (int i = 0; i < 100; ++i) {
      CHECK_FALSE(has_repeated_trigram(generate(toy.features, toy.encoder, toy.lm, cfg, rng).paragraph));
    }
  }
  SUBCASE("beta one is unpenalized decoding") {
    cfg.max_sentences = 6;
    cfg.max_tokens = 30;
    cfg.penalty = 1.0;
    cfg.theta_override = std::vector<std::vector<double>>{{0.2, 1.5, 0.7}, {0.4, 0.9}};
    RngStream rng(3, 0);
    const auto g = generate(toy.features, toy.encoder, toy.lm, cfg, rng);
    CHECK(g.paragraph.sentences ==
          reference_greedy(toy.lm, toy.features, *cfg.theta_override, 6, 30));
    CHECK(g.k.empty());
  }
  SUBCASE("greedy with a fixed override is deterministic") {
    cfg.theta_override = override_theta({3, 2}, 1, 2);
    RngStream a(4, 0), b(5, 0);
    CHECK(generate(toy.features, toy.encoder, toy.lm, cfg, a).paragraph.sentences ==
          generate(toy.features, toy.encoder, toy.lm, cfg, b).paragraph.sentences);
  }
  SUBCASE("two noise draws share one posterior") {
    RngStream rng(6, 0);
    const auto g1 = generate(toy.features, toy.encoder, toy.lm, cfg, rng);
    const auto g2 = generate(toy.features, toy.encoder, toy.lm, cfg, rng);
    CHECK(g1.k == g2.k);
    CHECK(g1.lambda == g2.lambda);
    CHECK(g1.theta != g2.theta);
  }
  SUBCASE("zero topic vectors are accepted by both models") {
    cfg.theta_override = std::vector<std::vector<double>>{{0, 0, 0}, {0, 0}};
    RngStream rng(7, 0);
    CHECK_NOTHROW(generate(toy.features, toy.encoder, toy.lm, cfg, rng));
    transformer::TransformerConfig tc;
    tc.vocab = 10;
    tc.feature_dim = 4;
    tc.model_dim = 8;
    tc.heads = 2;
    tc.memory_slots = 2;
    tc.topic_widths = {3, 2};
    tc.dropout = 0.0;
    transformer::TransformerLm tf(tc, toy.rng);
    CHECK_NOTHROW(generate(toy.features, toy.encoder, tf, cfg, rng));
  }
  SUBCASE("bad settings") {
    RngStream rng(8, 0);
    cfg.penalty = 0.5;
    CHECK_THROWS_AS(generate(toy.features, toy.encoder, toy.lm, cfg, rng), InvalidArgument);
    cfg.penalty = 2.0;
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(generate(toy.features, toy.encoder, toy.lm, cfg, rng), InvalidArgument);
    cfg.temperature = 1.0;
    cfg.theta_override = std::vector<std::vector<double>>{{1, 0, 0}};
    CHECK_THROWS_AS(generate(toy.features, toy.encoder, toy.lm, cfg, rng), ShapeError);
  }
}
