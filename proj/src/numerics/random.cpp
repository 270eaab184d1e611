#include "vtcm/numerics/random.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "vtcm/error.hpp"

namespace vtcm::num {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Poisson by multiplying uniforms; used for small rates.
std::int64_t poisson_small(RngStream& rng, double rate) {
  const double limit = std::exp(-rate);
  std::int64_t k = 0;
  double prod = rng.uniform();
  while (prod > limit) {
    ++k;
    prod *= rng.uniform();
  }
  return k;
}

// Hormann's transformed rejection with squeeze (PTRS), rate >= 10.
std::int64_t poisson_ptrs(RngStream& rng, double rate) {
  const double slam = std::sqrt(rate);
  const double loglam = std::log(rate);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2);
  while (true) {
    const double u = rng.uniform() - 0.5;
    const double v = rng.uniform();
    const double us = 0.5 - std::fabs(u);
    const double k = std::floor((2 * a / us + b) * u + rate + 0.43);
    if (us >= 0.07 && v <= vr) return static_cast<std::int64_t>(k);
    if (k < 0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
        -rate + k * loglam - std::lgamma(k + 1)) {
      return static_cast<std::int64_t>(k);
    }
  }
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(splitmix64(seed ^ splitmix64(stream + 1))) {}

double RngStream::uniform() {
  // 53 random bits, offset by half a step so 0 and 1 are never returned.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw InvalidArgument("below(0)");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

std::string RngStream::state() const {
  std::ostringstream os;
  os << seed_ << ' ' << stream_ << ' ' << engine_;
  return os.str();
}

void RngStream::restore(const std::string& state) {
  std::istringstream is(state);
  std::uint64_t seed = 0, stream = 0;
  std::mt19937_64 engine;
  is >> seed >> stream >> engine;
  if (!is) throw FormatError("malformed random stream state");
  seed_ = seed;
  stream_ = stream;
  engine_ = engine;
}

double sample_uniform(RngStream& rng) { return rng.uniform(); }

double sample_normal(RngStream& rng) {
  // Marsaglia polar method; the second variate is discarded so the stream
  // position alone determines the next draw.
  while (true) {
    const double u = 2.0 * rng.uniform() - 1.0;
    const double v = 2.0 * rng.uniform() - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

double sample_gamma(RngStream& rng, double shape, double scale) {
  if (!(shape > 0.0) || !(scale > 0.0) || !std::isfinite(shape) || !std::isfinite(scale)) {
    throw InvalidArgument("gamma needs positive finite shape and scale");
  }
  if (shape < 1.0) {
    // Shape boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
    const double u = rng.uniform();
    return sample_gamma(rng, shape + 1.0, scale) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia and Tsang.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = sample_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v * scale;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v * scale;
  }
}

std::vector<double> sample_dirichlet(RngStream& rng, std::span<const double> eta) {
  if (eta.empty()) throw InvalidArgument("dirichlet needs at least one component");
  std::vector<double> out(eta.size());
  double total = 0.0;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    out[i] = sample_gamma(rng, eta[i], 1.0);
    total += out[i];
  }
  if (total <= 0.0) {
    // All components underflowed; fall back to the most likely vertex.
    std::fill(out.begin(), out.end(), 0.0);
    out[0] = 1.0;
    return out;
  }
  for (double& v : out) v /= total;
  return out;
}

std::int64_t sample_poisson(RngStream& rng, double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) {
    throw InvalidArgument("poisson needs a positive finite rate");
  }
  return rate < 10.0 ? poisson_small(rng, rate) : poisson_ptrs(rng, rate);
}

std::size_t sample_categorical(RngStream& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw InvalidArgument("categorical weight is invalid");
    total += w;
  }
  if (!(total > 0.0)) throw InvalidArgument("categorical weights are all zero");
  const double target = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (target < acc) return i;
  }
  return last_positive;
}

std::vector<std::int64_t> sample_multinomial(RngStream& rng, std::int64_t n,
                                             std::span<const double> p) {
  if (n < 0) throw InvalidArgument("multinomial needs n >= 0");
  if (p.empty()) throw InvalidArgument("multinomial needs at least one category");
  std::vector<std::int64_t> out(p.size(), 0);
  if (n == 0) {
    for (double w : p) {
      if (w < 0.0 || !std::isfinite(w)) throw InvalidArgument("multinomial weight is invalid");
    }
    return out;
  }
  for (std::int64_t i = 0; i < n; ++i) ++out[sample_categorical(rng, p)];
  return out;
}

std::int64_t sample_crt(RngStream& rng, std::int64_t n, double r) {
  if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("CRT needs r > 0");
  if (n < 0) throw InvalidArgument("CRT needs n >= 0");
  std::int64_t tables = 0;
  for (std::int64_t i = 1; i <= n; ++i) {
    if (rng.uniform() < r / (r + static_cast<double>(i - 1))) ++tables;
  }
  return tables;
}

}  // namespace vtcm::num
