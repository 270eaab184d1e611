#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "vtcm/error.hpp"
#include "vtcm/numerics/gradcheck.hpp"
#include "vtcm/numerics/ops.hpp"
#include "vtcm/numerics/random.hpp"

using namespace vtcm;
using namespace vtcm::num;

namespace {

Tensor random_tensor(RngStream& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor::from(std::move(shape), std::move(v));
}

// Exact CRT pmf from unsigned Stirling numbers of the first kind:
// P(l = k) = |s(n,k)| r^k / (r)_n.
std::vector<double> crt_pmf(int n, double r) {
  std::vector<std::vector<double>> s(n + 1, std::vector<double>(n + 1, 0.0));
  s[0][0] = 1.0;
  for (int m = 0; m < n; ++m)
    for (int k = 0; k <= m; ++k) {
      s[m + 1][k + 1] += s[m][k];
      s[m + 1][k] += m * s[m][k];
    }
  double rising = 1.0;
  for (int i = 0; i < n; ++i) rising *= r + i;
  std::vector<double> pmf(n + 1);
  for (int k = 0; k <= n; ++k) pmf[k] = s[n][k] * std::pow(r, k) / rising;
  return pmf;
}

}  // namespace

TEST_CASE("elementwise basics") {
  CHECK(softplus(Tensor::vector({0.0}))[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  Tensor c = concat({Tensor::vector({1, 2}), Tensor::vector({3})});
  CHECK(c.to_vector() == std::vector<double>{1, 2, 3});

  Tensor x = Tensor::parameter({1}, {0.0});
  Tape tape;
  Tensor y = sum(tanh(x));
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST_CASE("non-finite results are surfaced") {
  CHECK_THROWS_AS(log(Tensor::vector({0.0})), NumericError);
  CHECK_THROWS_AS(div(Tensor::vector({1.0}), Tensor::vector({0.0})), NumericError);
}

TEST_CASE("softmax") {
  auto u = softmax(Tensor::vector({0, 0, 0}), 0).to_vector();
  for (double p : u) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto w = softmax(Tensor::vector({std::log(1.0), std::log(2.0), std::log(3.0)}), 0).to_vector();
  CHECK(w[0] == doctest::Approx(1.0 / 6).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(2.0 / 6).epsilon(1e-14));
  CHECK(w[2] == doctest::Approx(3.0 / 6).epsilon(1e-14));

  CHECK_THROWS_AS(softmax(Tensor::zeros({0}), 0), ShapeError);

  RngStream rng(7, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor v = random_tensor(rng, {static_cast<std::size_t>(2 + trial % 7)}, -5, 5);
    auto p = softmax(v, 0).to_vector();
    double s = std::accumulate(p.begin(), p.end(), 0.0);
    CHECK(std::fabs(s - 1.0) < 1e-12);
    for (double x : p) CHECK(x >= 0.0);
    auto shifted = softmax(add_scalar(v, 17.25), 0).to_vector();
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::fabs(p[i] - shifted[i]) < 1e-12);
  }

  Tensor m = random_tensor(rng, {3, 4});
  auto rows = softmax(m, 1).to_vector();
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int c = 0; c < 4; ++c) s += rows[r * 4 + c];
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
  auto cols = softmax(m, 0).to_vector();
  for (int c = 0; c < 4; ++c) {
    double s = 0;
    for (int r = 0; r < 3; ++r) s += cols[r * 4 + c];
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("causal softmax masks the future exactly") {
  RngStream rng(3, 0);
  Tensor s = random_tensor(rng, {4, 4});
  auto p = causal_softmax_rows(s).to_vector();
  for (int i = 0; i < 4; ++i) {
    double total = 0;
    for (int j = 0; j < 4; ++j) {
      if (j > i) CHECK(p[i * 4 + j] == 0.0);
      total += p[i * 4 + j];
    }
    CHECK(std::fabs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("layer norm rows") {
  RngStream rng(11, 0);
  Tensor x = random_tensor(rng, {3, 6}, -4, 4);
  auto y = layer_norm_rows(x, Tensor::filled({6}, 1.0), Tensor::zeros({6}), 0.0).to_vector();
  for (int r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (int c = 0; c < 6; ++c) mean += y[r * 6 + c];
    mean /= 6;
    for (int c = 0; c < 6; ++c) var += (y[r * 6 + c] - mean) * (y[r * 6 + c] - mean);
    var /= 6;
    CHECK(std::fabs(mean) < 1e-12);
    CHECK(std::fabs(var - 1.0) < 1e-12);
  }
}

TEST_CASE("grad_check analytic cases") {
  auto sq = [](const Tensor& x) { return sum(square(x)); };
  Tensor x = Tensor::vector({1.0, 2.0});
  GradCheckResult r = grad_check(sq, x);
  CHECK(r.max_rel_error < 1e-8);

  Tensor leaf = x.clone_parameter();
  {
    Tape tape;
    tape.backward(sq(leaf));
  }
  CHECK(leaf.grad()[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(leaf.grad()[1] == doctest::Approx(4.0).epsilon(1e-14));

  auto constant = [](const Tensor& v) { return add_scalar(scale(sum(v), 0.0), 3.0); };
  Tensor c = x.clone_parameter();
  {
    Tape tape;
    tape.backward(constant(c));
  }
  for (double g : c.grad_or_zero()) CHECK(g == 0.0);
  CHECK(grad_check(constant, x).max_rel_error == 0.0);

  CHECK_THROWS_AS(grad_check([](const Tensor& v) { return v; }, x), ShapeError);
}

TEST_CASE("every differentiable op passes grad_check at 1e-6") {
  RngStream rng(2024, 1);
  using Fn = std::function<Tensor(const Tensor&)>;
  const Tensor w34 = random_tensor(rng, {3, 4});
  const Tensor w4 = random_tensor(rng, {4});
  const Tensor w3 = random_tensor(rng, {3});
  const Tensor m43 = random_tensor(rng, {4, 3});
  const Tensor pos34 = random_tensor(rng, {3, 4}, 0.5, 2.0);
  const Tensor w44 = random_tensor(rng, {4, 4});
  const Tensor w9 = random_tensor(rng, {9});
  auto weighted = [](const Tensor& t, const Tensor& w) { return sum(mul(t, w)); };

  std::map<std::string, std::pair<Fn, Tensor>> cases;
  const Tensor x34 = random_tensor(rng, {3, 4});
  const Tensor p34 = random_tensor(rng, {3, 4}, 0.3, 3.0);
  cases["matmul_left"] = {[&](const Tensor& x) { return weighted(matmul(x, m43), Tensor::filled({3, 3}, 0.7)); }, x34};
  cases["matmul_right"] = {[&](const Tensor& x) { return weighted(matmul(w34, x), Tensor::filled({3, 3}, -0.4)); }, m43};
  cases["matvec"] = {[&](const Tensor& x) { return weighted(matmul(w34, x), w3); }, w4};
  cases["vecmat"] = {[&](const Tensor& x) { return weighted(vecmat(x, w34), w4); }, w3};
  cases["transpose"] = {[&](const Tensor& x) { return weighted(transpose(x), m43); }, x34};
  cases["add"] = {[&](const Tensor& x) { return weighted(add(x, w34), x); }, x34};
  cases["sub"] = {[&](const Tensor& x) { return weighted(sub(w34, x), x); }, x34};
  cases["mul"] = {[&](const Tensor& x) { return weighted(mul(x, x), w34); }, x34};
  cases["div"] = {[&](const Tensor& x) { return weighted(div(w34, x), pos34); }, p34};
  cases["add_row"] = {[&](const Tensor& x) { return weighted(add_row(w34, x), pos34); }, w4};
  cases["scale"] = {[&](const Tensor& x) { return weighted(scale(x, -2.5), w34); }, x34};
  cases["tanh"] = {[&](const Tensor& x) { return weighted(tanh(x), w34); }, x34};
  cases["sigmoid"] = {[&](const Tensor& x) { return weighted(sigmoid(x), w34); }, x34};
  cases["softplus"] = {[&](const Tensor& x) { return weighted(softplus(x), w34); }, x34};
  cases["exp"] = {[&](const Tensor& x) { return weighted(exp(x), w34); }, x34};
  cases["log"] = {[&](const Tensor& x) { return weighted(log(x), w34); }, p34};
  cases["lgamma"] = {[&](const Tensor& x) { return weighted(lgamma(x), w34); }, p34};
  cases["square"] = {[&](const Tensor& x) { return weighted(square(x), w34); }, x34};
  cases["relu"] = {[&](const Tensor& x) { return weighted(relu(add_scalar(x, -1.6)), w34); }, p34};
  cases["clamp_min"] = {[&](const Tensor& x) { return weighted(clamp_min(x, 1.4), w34); }, p34};
  cases["mean_rows"] = {[&](const Tensor& x) { return weighted(mean_rows(x), w4); }, x34};
  cases["concat"] = {[&](const Tensor& x) { return weighted(concat({x, w3, x}), w9); }, w3};
  cases["concat_cols"] = {[&](const Tensor& x) {
    std::vector<Tensor> parts{x, w34};
    return weighted(concat_cols(parts), Tensor::filled({3, 8}, 0.3));
  }, x34};
  cases["concat_rows"] = {[&](const Tensor& x) {
    std::vector<Tensor> parts{w34, x};
    return weighted(concat_rows(parts), Tensor::filled({6, 4}, -0.6));
  }, x34};
  cases["slice"] = {[&](const Tensor& x) { return weighted(slice(x, 1, 2), Tensor::vector({0.3, -1.2})); }, w4};
  cases["slice_cols"] = {[&](const Tensor& x) { return weighted(slice_cols(x, 1, 2), Tensor::filled({3, 2}, 1.1)); }, x34};
  cases["gather_rows"] = {[&](const Tensor& x) {
    const std::size_t ids[] = {2, 0, 2};
    return weighted(gather_rows(x, ids), w34);
  }, x34};
  cases["softmax_axis1"] = {[&](const Tensor& x) { return weighted(softmax(x, 1), w34); }, x34};
  cases["softmax_axis0"] = {[&](const Tensor& x) { return weighted(softmax(x, 0), w34); }, x34};
  cases["log_softmax"] = {[&](const Tensor& x) { return weighted(log_softmax(x, 1), w34); }, x34};
  cases["causal_softmax"] = {[&](const Tensor& x) { return weighted(causal_softmax_rows(x), w44); }, random_tensor(rng, {4, 4})};
  cases["layer_norm_input"] = {[&](const Tensor& x) { return weighted(layer_norm_rows(x, w4, w4), w34); }, x34};
  cases["layer_norm_gain"] = {[&](const Tensor& x) { return weighted(layer_norm_rows(x34, x, w4), w34); }, w4};
  cases["pick"] = {[&](const Tensor& x) {
    const std::size_t ids[] = {3, 0, 1};
    return pick(log_softmax(x, 1), ids);
  }, x34};
  cases["pick_rows"] = {[&](const Tensor& x) {
    const std::size_t ids[] = {3, 0, 1};
    return weighted(pick_rows(x, ids), w3);
  }, x34};
  cases["reshape"] = {[&](const Tensor& x) { return weighted(reshape(x, {4, 3}), m43); }, x34};

  for (const auto& [name, c] : cases) {
    CAPTURE(name);
    GradCheckResult r = grad_check(c.first, c.second);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("tape only records when a gradient is needed") {
  Tensor p = Tensor::parameter({2}, {1.0, 2.0});
  Tensor plain = Tensor::vector({1.0, 2.0});
  Tape tape;
  Tensor a = tanh(plain);
  CHECK_FALSE(a.requires_grad());
  CHECK(tape.size() == 0);
  Tensor b = tanh(p);
  CHECK(b.requires_grad());
  {
    NoGradGuard guard;
    CHECK_FALSE(tanh(p).requires_grad());
  }
  CHECK(tape.size() == 1);
}

TEST_CASE("sampler validation") {
  RngStream rng(1, 0);
  CHECK_THROWS_AS(sample_gamma(rng, 0.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(sample_gamma(rng, 1.0, -1.0), InvalidArgument);
  CHECK_THROWS_AS(sample_poisson(rng, 0.0), InvalidArgument);
  CHECK_THROWS_AS(sample_crt(rng, 3, 0.0), InvalidArgument);
  const double bad[] = {0.5, -0.1};
  CHECK_THROWS_AS(sample_multinomial(rng, 3, bad), InvalidArgument);

  const double degenerate[] = {1.0, 0.0, 0.0};
  auto m = sample_multinomial(rng, 5, degenerate);
  CHECK(m == std::vector<std::int64_t>{5, 0, 0});
}

TEST_CASE("gamma Monte Carlo mean") {
  RngStream rng(42, 3);
  const int n = 1000000;
  double s = 0;
  for (int i = 0; i < n; ++i) s += sample_gamma(rng, 2.0, 3.0);
  CHECK(std::fabs(s / n - 6.0) < 0.02);

  // Shape below one goes through the boost path.
  double s2 = 0, sq = 0;
  for (int i = 0; i < 200000; ++i) {
    double g = sample_gamma(rng, 0.3, 2.0);
    s2 += g;
    sq += g * g;
  }
  const double mean = s2 / 200000, var = sq / 200000 - mean * mean;
  CHECK(std::fabs(mean - 0.6) < 0.01);
  CHECK(std::fabs(var - 1.2) < 0.05);
}

TEST_CASE("dirichlet and poisson moments") {
  RngStream rng(5, 9);
  const double eta[] = {1.0, 1.0};
  double s0 = 0, s1 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    auto d = sample_dirichlet(rng, eta);
    CHECK(std::fabs(d[0] + d[1] - 1.0) < 1e-12);
    s0 += d[0];
    s1 += d[1];
  }
  CHECK(std::fabs(s0 / n - 0.5) < 0.005);
  CHECK(std::fabs(s1 / n - 0.5) < 0.005);

  for (double rate : {0.7, 4.0, 25.0, 300.0}) {
    double s = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
      double k = static_cast<double>(sample_poisson(rng, rate));
      s += k;
      sq += k * k;
    }
    const double mean = s / n, var = sq / n - mean * mean;
    CAPTURE(rate);
    CHECK(std::fabs(mean - rate) < 5 * std::sqrt(rate / n));
    CHECK(std::fabs(var / rate - 1.0) < 0.03);
  }
}

TEST_CASE("multinomial totals are exact") {
  RngStream rng(8, 8);
  const double p[] = {0.1, 0.2, 0.3, 0.4};
  for (int n = 0; n < 50; ++n) {
    auto draw = sample_multinomial(rng, n, p);
    CHECK(std::accumulate(draw.begin(), draw.end(), std::int64_t{0}) == n);
  }
}

TEST_CASE("CRT edge cases and exact pmf") {
  RngStream rng(17, 4);
  for (int i = 0; i < 100; ++i) {
    CHECK(sample_crt(rng, 0, 0.7) == 0);
    CHECK(sample_crt(rng, 1, 0.7) == 1);
    auto l = sample_crt(rng, 5, 2.0);
    CHECK(l >= 1);
    CHECK(l <= 5);
  }

  const int draws = 100000;
  auto pmf = crt_pmf(4, 1.0);
  std::vector<double> hist(5, 0.0);
  for (int i = 0; i < draws; ++i) hist[sample_crt(rng, 4, 1.0)] += 1.0 / draws;
  double tv = 0;
  for (int k = 0; k <= 4; ++k) tv += 0.5 * std::fabs(hist[k] - pmf[k]);
  CHECK(tv < 5e-3);
}

TEST_CASE("CRT mean within three standard errors") {
  RngStream rng(99, 1);
  for (double r : {0.5, 1.0, 3.0}) {
    const int n = 8;
    double mean = 0, var = 0;
    for (int i = 1; i <= n; ++i) {
      const double p = r / (r + i - 1);
      mean += p;
      var += p * (1 - p);
    }
    const int draws = 100000;
    double s = 0;
    for (int i = 0; i < draws; ++i) s += static_cast<double>(sample_crt(rng, n, r));
    CAPTURE(r);
    CHECK(std::fabs(s / draws - mean) < 3 * std::sqrt(var / draws));
  }
}

TEST_CASE("seeded determinism of integer samplers") {
  auto trace = [](std::uint64_t seed) {
    RngStream rng(seed, 2);
    std::vector<std::int64_t> out;
    const double p[] = {0.2, 0.5, 0.3};
    for (int i = 0; i < 200; ++i) {
      out.push_back(sample_crt(rng, i % 9, 1.5));
      out.push_back(sample_poisson(rng, 3.5 + i % 20));
      for (auto c : sample_multinomial(rng, i % 7, p)) out.push_back(c);
    }
    return out;
  };
  CHECK(trace(12345) == trace(12345));
  CHECK(trace(12345) != trace(12346));

  RngStream a(1, 1), b(1, 2);
  CHECK(a.next_u64() != b.next_u64());
}

TEST_CASE("stream state round trip") {
  RngStream rng(4, 4);
  for (int i = 0; i < 10; ++i) rng.uniform();
  const std::string s = rng.state();
  RngStream other(0, 0);
  other.restore(s);
  for (int i = 0; i < 10; ++i) CHECK(rng.next_u64() == other.next_u64());
}
