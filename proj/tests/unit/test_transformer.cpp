#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "vtcm/error.hpp"
#include "vtcm/numerics/gradcheck.hpp"
#include "vtcm/numerics/ops.hpp"
#include "vtcm/transformer/transformer_lm.hpp"

using namespace vtcm;
using namespace vtcm::transformer;
using num::RngStream;
using num::Tensor;

namespace {

TransformerConfig toy_config(std::vector<std::size_t> widths = {3, 2}, std::size_t memory = 2) {
  TransformerConfig c;
  c.vocab = 9;
  c.feature_dim = 3;
  c.model_dim = 8;
  c.heads = 2;
  c.memory_slots = memory;
  c.topic_widths = std::move(widths);
  c.max_length = 12;
  c.dropout = 0.0;
  return c;
}

Tensor random_tensor(RngStream& rng, num::Shape shape, double lo = -1, double hi = 1) {
  std::vector<double> v(num::shape_size(shape));
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor::from(std::move(shape), std::move(v));
}

data::RegionFeatureSet random_features(RngStream& rng, std::size_t m, std::size_t d) {
  return data::RegionFeatureSet::create("img", random_tensor(rng, {m, d}));
}

std::vector<Tensor> random_theta(RngStream& rng, const std::vector<std::size_t>& widths) {
  std::vector<Tensor> t;
  for (std::size_t k : widths) t.push_back(random_tensor(rng, {k}, 0.0, 2.0));
  return t;
}

void set(num::ParameterStore& store, const std::string& name, double value) {
  for (double& v : store.at(name).mutable_data()) v = value;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) { return a.to_vector() == b.to_vector(); }

// Plain multi-head attention written out independently of the model.
Tensor reference_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  const std::size_t d = q.cols(), dh = d / heads;
  Tensor out = Tensor::zeros({q.rows(), d});
  const auto o = out.mutable_data();
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < q.rows(); ++i) {
      std::vector<double> s(k.rows());
      for (std::size_t j = 0; j < k.rows(); ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < dh; ++c) acc += q.at(i, h * dh + c) * k.at(j, h * dh + c);
        s[j] = acc / std::sqrt(static_cast<double>(dh));
      }
      const auto p = num::softmax_values(s);
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0;
        for (std::size_t j = 0; j < k.rows(); ++j) acc += p[j] * v.at(j, h * dh + c);
        o[i * d + h * dh + c] = acc;
      }
    }
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Copies every parameter that both stores hold.
void copy_shared(const num::ParameterStore& from, num::ParameterStore& to) {
  for (auto& [name, t] : to.all()) {
    if (!from.contains(name)) continue;
    const auto src = from.at(name).to_vector();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

}  // namespace

TEST_CASE("memory attention") {
  RngStream rng(1, 0);
  SUBCASE("without memory slots it is plain self-attention") {
    TransformerLm model(toy_config({3, 2}, 0), rng);
    const Tensor x = random_tensor(rng, {4, 8});
    const auto& p = model.params();
    const Tensor q = num::matmul(x, p.at("tf/enc1/W_q"));
    const Tensor k = num::matmul(x, p.at("tf/enc1/W_k"));
    const Tensor v = num::matmul(x, p.at("tf/enc1/W_v"));
    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < 2; ++h) {
      const Tensor scores = num::scale(
          num::matmul(num::slice_cols(q, h * 4, 4), num::transpose(num::slice_cols(k, h * 4, 4))),
          1.0 / std::sqrt(4.0));
      heads.push_back(num::matmul(num::softmax(scores, 1), num::slice_cols(v, h * 4, 4)));
    }
    CHECK(bitwise_equal(model.mem_attention(x, 0), num::concat_cols(heads)));
    CHECK(max_abs_diff(model.mem_attention(x, 0), reference_attention(q, k, v, 2)) < 1e-12);
  }
  SUBCASE("a single region without memory returns its value") {
    TransformerLm model(toy_config({3, 2}, 0), rng);
    const Tensor x = random_tensor(rng, {1, 8});
    CHECK(bitwise_equal(model.mem_attention(x, 1),
                        num::matmul(x, model.params().at("tf/enc2/W_v"))));
  }
  SUBCASE("memory slots join keys and values") {
    TransformerLm model(toy_config({3, 2}, 3), rng);
    const Tensor x = random_tensor(rng, {4, 8});
    const auto& p = model.params();
    const Tensor keys = num::concat_rows(
        std::vector<Tensor>{num::matmul(x, p.at("tf/enc1/W_k")), p.at("tf/enc1/M_k")});
    const Tensor values = num::concat_rows(
        std::vector<Tensor>{num::matmul(x, p.at("tf/enc1/W_v")), p.at("tf/enc1/M_v")});
    const Tensor ref = reference_attention(num::matmul(x, p.at("tf/enc1/W_q")), keys, values, 2);
    AttentionProbe probe;
    CHECK(max_abs_diff(model.mem_attention(x, 0, &probe), ref) < 1e-12);
    REQUIRE(probe.maps.size() == 2);
    for (const Tensor& m : probe.maps) {
      CHECK(m.cols() == 7);
      for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += m.at(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-10);
      }
    }
  }
  SUBCASE("shape mismatch") {
    TransformerLm model(toy_config(), rng);
    CHECK_THROWS_AS(model.mem_attention(random_tensor(rng, {2, 5}), 0), ShapeError);
  }
}

TEST_CASE("configuration errors") {
  RngStream rng(2, 0);
  auto c = toy_config();
  c.heads = 3;
  CHECK_THROWS_AS(TransformerLm(c, rng), InvalidArgument);
  c = toy_config();
  c.model_dim = 0;
  CHECK_THROWS_AS(TransformerLm(c, rng), InvalidArgument);
}

TEST_CASE("encoder stack") {
  RngStream rng(3, 0);
  SUBCASE("one layer is one application") {
    TransformerLm model(toy_config({3}), rng);
    const auto f = random_features(rng, 3, 3);
    const auto enc = model.encode_stack(f);
    REQUIRE(enc.levels.size() == 1);
    const auto& p = model.params();
    const Tensor x0 = num::add_row(num::matmul(f.features, p.at("tf/in/W")), p.at("tf/in/b"));
    const Tensor z = num::layer_norm_rows(num::add(x0, model.mem_attention(x0, 0)),
                                          p.at("tf/enc1/norm1/gain"), p.at("tf/enc1/norm1/bias"),
                                          1e-10);
    const Tensor ff = num::add_row(
        num::matmul(num::relu(num::add_row(num::matmul(z, p.at("tf/enc1/ff/W1")),
                                           p.at("tf/enc1/ff/b1"))),
                    p.at("tf/enc1/ff/W2")),
        p.at("tf/enc1/ff/b2"));
    const Tensor x1 = num::layer_norm_rows(num::add(z, ff), p.at("tf/enc1/norm2/gain"),
                                           p.at("tf/enc1/norm2/bias"), 1e-10);
    CHECK(bitwise_equal(enc.levels[0], x1));
  }
  SUBCASE("outputs are normalized per region") {
    TransformerLm model(toy_config({3, 2, 2}), rng);
    const auto enc = model.encode_stack(random_features(rng, 5, 3));
    REQUIRE(enc.levels.size() == 3);
    for (const Tensor& level : enc.levels) {
      for (std::size_t i = 0; i < level.rows(); ++i) {
        double mean = 0, var = 0;
        for (std::size_t j = 0; j < level.cols(); ++j) mean += level.at(i, j);
        mean /= static_cast<double>(level.cols());
        for (std::size_t j = 0; j < level.cols(); ++j) var += std::pow(level.at(i, j) - mean, 2);
        var /= static_cast<double>(level.cols());
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-6);
      }
    }
  }
  SUBCASE("permuting regions permutes every level") {
    TransformerLm model(toy_config({3, 2}), rng);
    const Tensor x = random_tensor(rng, {4, 3});
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    const auto a = model.encode_stack(data::RegionFeatureSet::create("a", x));
    const auto b = model.encode_stack(data::RegionFeatureSet::create("b", num::gather_rows(x, perm)));
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK(max_abs_diff(num::gather_rows(a.levels[l], perm), b.levels[l]) < 1e-12);
    }
  }
}

TEST_CASE("meshed attention") {
  RngStream rng(4, 0);
  SUBCASE("saturated gate passes the cross-attention through") {
    TransformerLm model(toy_config({3}), rng);
    const auto enc = model.encode_stack(random_features(rng, 3, 3));
    const auto topics = model.project_topics(random_theta(rng, {3}));
    set(model.params(), "tf/dec1/mesh1/b_l", 1e6);
    const Tensor y = random_tensor(rng, {4, 8});
    const auto& p = model.params();
    const Tensor memory = num::add_row(enc.levels[0], topics[0]);
    const Tensor c = reference_attention(num::matmul(y, p.at("tf/dec1/cross/W_q")),
                                         num::matmul(memory, p.at("tf/dec1/cross/W_k")),
                                         num::matmul(memory, p.at("tf/dec1/cross/W_v")), 2);
    AttentionProbe probe;
    const Tensor out = model.meshed_attention(enc, topics, y, 0, &probe);
    CHECK(max_abs_diff(out, c) < 1e-12);
    REQUIRE(probe.gates.size() == 1);
    for (double a : probe.gates[0].to_vector()) CHECK(a == 1.0);
  }
  SUBCASE("gates lie strictly inside (0, 1)") {
    TransformerLm model(toy_config({3, 2, 2}), rng);
    const auto enc = model.encode_stack(random_features(rng, 3, 3));
    const auto topics = model.project_topics(random_theta(rng, {3, 2, 2}));
    AttentionProbe probe;
    model.meshed_attention(enc, topics, random_tensor(rng, {5, 8}), 1, &probe);
    REQUIRE(probe.gates.size() == 3);
    for (const Tensor& g : probe.gates)
      for (double a : g.to_vector()) CHECK((a > 0.0 && a < 1.0));
  }
  SUBCASE("zero topic vectors reduce to attention over the encoder levels") {
    TransformerLm model(toy_config({3, 2}), rng);
    const auto enc = model.encode_stack(random_features(rng, 3, 3));
    const std::vector<Tensor> zero = {Tensor::zeros({8}), Tensor::zeros({8})};
    const Tensor y = random_tensor(rng, {2, 8});
    const auto& p = model.params();
    Tensor expected = Tensor::zeros({2, 8});
    for (std::size_t l = 0; l < 2; ++l) {
      const Tensor c = reference_attention(num::matmul(y, p.at("tf/dec1/cross/W_q")),
                                           num::matmul(enc.levels[l], p.at("tf/dec1/cross/W_k")),
                                           num::matmul(enc.levels[l], p.at("tf/dec1/cross/W_v")), 2);
      const std::string g = "tf/dec1/mesh" + std::to_string(l + 1);
      const Tensor alpha = num::sigmoid(num::add_row(
          num::matmul(num::concat_cols(std::vector<Tensor>{y, c}), p.at(g + "/W_l")),
          p.at(g + "/b_l")));
      expected = num::add(expected, num::mul(alpha, c));
    }
    CHECK(max_abs_diff(model.meshed_attention(enc, zero, y, 0), expected) < 1e-12);
  }
}

TEST_CASE("decoder stack") {
  RngStream rng(5, 0);
  TransformerLm model(toy_config(), rng);
  const auto f = random_features(rng, 3, 3);
  const auto theta = random_theta(rng, {3, 2});
  const auto enc = model.encode_stack(f);

  SUBCASE("rows are log-distributions") {
    const Tensor out = model.decode_stack(enc, theta, {data::kBos, 5, 6, data::kEos});
    REQUIRE(out.rows() == 4);
    REQUIRE(out.cols() == 9);
    for (std::size_t i = 0; i < out.rows(); ++i) {
      double s = 0;
      for (std::size_t j = 0; j < out.cols(); ++j) s += std::exp(out.at(i, j));
      CHECK(std::abs(s - 1.0) < 1e-8);
    }
  }
  SUBCASE("future tokens never change past positions") {
    const std::vector<int> a = {data::kBos, 5, 6, 7, 8, 5};
    for (std::size_t t = 1; t < a.size(); ++t) {
      auto b = a;
      b[t] = b[t] == 6 ? 7 : 6;
      AttentionProbe probe_a, probe_b;
      const Tensor oa = model.decode_stack(enc, theta, a, nullptr, &probe_a);
      const Tensor ob = model.decode_stack(enc, theta, b, nullptr, &probe_b);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < 9; ++j) CHECK(oa.at(i, j) == ob.at(i, j));
      bool changed = false;
      for (std::size_t j = 0; j < 9; ++j) changed |= oa.at(t, j) != ob.at(t, j);
      CHECK(changed);
    }
  }
  SUBCASE("masked attention rows normalize over the visible prefix") {
    AttentionProbe probe;
    model.decode_stack(enc, theta, {data::kBos, 5, 6, 7}, nullptr, &probe);
    for (const Tensor& m : probe.maps) {
      for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += m.at(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-10);
        if (m.rows() == m.cols())
          for (std::size_t j = i + 1; j < m.cols(); ++j) CHECK(m.at(i, j) == 0.0);
      }
    }
  }
  SUBCASE("input errors") {
    CHECK_THROWS_AS(model.decode_stack(enc, theta, {5, 6}), InvalidArgument);
    CHECK_THROWS_AS(model.decode_stack(enc, theta, {data::kBos, 42}), InvalidArgument);
    CHECK_THROWS_AS(model.decode_stack(enc, theta, std::vector<int>(13, data::kBos)),
                    InvalidArgument);
    CHECK_THROWS_AS(model.decode_stack(enc, {theta[0]}, {data::kBos}), ShapeError);
  }
}

TEST_CASE("zero topic projection matches the untopiced baseline") {
  RngStream rng(6, 0);
  TransformerLm guided(toy_config(), rng);
  auto base_cfg = toy_config();
  base_cfg.topic_guided = false;
  TransformerLm baseline(base_cfg, rng);
  copy_shared(guided.params(), baseline.params());
  CHECK(baseline.params().all().size() + 2 == guided.params().all().size());

  const auto f = random_features(rng, 3, 3);
  const auto theta = random_theta(rng, {3, 2});
  const std::vector<int> tokens = {data::kBos, 5, 6, data::kEos, 7};
  const Tensor expected = baseline.decode_stack(baseline.encode_stack(f), theta, tokens);

  SUBCASE("zero theta") {
    const std::vector<Tensor> zero = {Tensor::zeros({3}), Tensor::zeros({2})};
    CHECK(bitwise_equal(guided.decode_stack(guided.encode_stack(f), zero, tokens), expected));
  }
  SUBCASE("zero projection matrices") {
    set(guided.params(), "tf/topic1", 0.0);
    set(guided.params(), "tf/topic2", 0.0);
    CHECK(bitwise_equal(guided.decode_stack(guided.encode_stack(f), theta, tokens), expected));
  }
  SUBCASE("nonzero topics do change the output") {
    CHECK_FALSE(bitwise_equal(guided.decode_stack(guided.encode_stack(f), theta, tokens), expected));
  }
}

TEST_CASE("teacher-forced likelihood") {
  RngStream rng(7, 0);
  TransformerLm model(toy_config(), rng);
  const auto f = random_features(rng, 3, 3);
  const auto theta = random_theta(rng, {3, 2});

  SUBCASE("one token gives one term") {
    const auto s = model.transformer_forward({6}, f, theta);
    REQUIRE(s.tokens == 1);
    const Tensor out = model.decode_stack(model.encode_stack(f), theta, {data::kBos});
    CHECK(s.log_likelihood.item() == out.at(0, 6));
    CHECK(s.log_likelihood.item() <= 0.0);
  }
  SUBCASE("paragraph score is the sum of shifted token log-probs") {
    data::Paragraph p;
    p.sentences = {{5, 6, data::kEos}, {7, data::kEos}};
    const auto s = model.score(p, f, theta);
    const std::vector<int> y = {5, 6, data::kEos, 7, data::kEos, data::kEop};
    REQUIRE(s.tokens == y.size());
    const Tensor out =
        model.decode_stack(model.encode_stack(f), theta, {data::kBos, 5, 6, data::kEos, 7, data::kEos});
    double total = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      total += out.at(i, static_cast<std::size_t>(y[i]));
      CHECK(s.token_log_probs[i] == out.at(i, static_cast<std::size_t>(y[i])));
    }
    CHECK(std::abs(s.log_likelihood.item() - total) < 1e-12);
    CHECK(s.log_likelihood.item() <= 0.0);
  }
  SUBCASE("region order does not matter") {
    data::Paragraph p;
    p.sentences = {{5, 6, data::kEos}};
    const std::vector<std::size_t> perm = {1, 2, 0};
    const auto g = data::RegionFeatureSet::create("p", num::gather_rows(f.features, perm));
    CHECK(std::abs(model.score(p, f, theta).log_likelihood.item() -
                   model.score(p, g, theta).log_likelihood.item()) <= 1e-10);
  }
  SUBCASE("sentences must be terminated") {
    data::Paragraph p;
    p.sentences = {{5, 6}};
    CHECK_THROWS_AS(model.score(p, f, theta), InvalidArgument);
  }
}

TEST_CASE("full gradient check on a toy model") {
  RngStream rng(8, 0);
  TransformerLm model(toy_config(), rng);
  const auto f = random_features(rng, 2, 3);
  const auto theta = random_theta(rng, {3, 2});
  std::vector<std::pair<std::string, Tensor>> params(model.params().all().begin(),
                                                     model.params().all().end());
  const std::vector<int> y = {5, 6, data::kEos};
  auto res = num::grad_check_params([&] { return model.transformer_forward(y, f, theta).log_likelihood; },
                                    params);
  CAPTURE(res.worst);
  CHECK(res.coordinates == model.params().scalar_count());
  CHECK(res.max_rel_error < 1e-4);

  auto res_theta = num::grad_check(
      [&](const Tensor& t) { return model.transformer_forward(y, f, {theta[0], t}).log_likelihood; },
      theta[1]);
  CHECK(res_theta.max_rel_error < 1e-4);
}

TEST_CASE("decode session matches teacher forcing") {
  RngStream rng(9, 0);
  TransformerLm model(toy_config(), rng);
  const auto f = random_features(rng, 3, 3);
  const auto theta = random_theta(rng, {3, 2});
  const std::vector<int> prefix = {data::kBos, 5, 7, data::kEos, 6};
  const Tensor out = model.decode_stack(model.encode_stack(f), theta, prefix);
  auto session = model.start(f, theta);
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const auto lp = session->next_log_probs();
    REQUIRE(lp.size() == 9);
    for (std::size_t j = 0; j < 9; ++j) CHECK(std::abs(lp[j] - out.at(i, j)) < 1e-12);
    if (i + 1 < prefix.size()) session->advance(prefix[i + 1]);
  }
}

TEST_CASE("dropout only with an rng") {
  RngStream rng(10, 0);
  auto c = toy_config();
  c.dropout = 0.5;
  TransformerLm model(c, rng);
  const auto f = random_features(rng, 3, 3);
  const auto theta = random_theta(rng, {3, 2});
  const double clean = model.transformer_forward({5, 6}, f, theta).log_likelihood.item();
  CHECK(clean == model.transformer_forward({5, 6}, f, theta).log_likelihood.item());
  RngStream drop(11, 3);
  CHECK(clean != model.transformer_forward({5, 6}, f, theta, &drop).log_likelihood.item());
}
