#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace vtcm::num {

// Seeded generator identified by (seed, stream). The engine is mt19937_64,
// whose output sequence is fixed by the standard, and every distribution
// below is implemented here rather than taken from <random>, so integer
// draws reproduce across platforms.
//
// A stream must not be shared between threads.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on the open interval (0, 1).
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Engine position, for checkpointing.
  std::string state() const;
  void restore(const std::string& state);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

double sample_uniform(RngStream& rng);
double sample_normal(RngStream& rng);
// Gamma with shape `shape` and scale `scale` (mean shape*scale).
double sample_gamma(RngStream& rng, double shape, double scale);
std::vector<double> sample_dirichlet(RngStream& rng, std::span<const double> eta);
std::int64_t sample_poisson(RngStream& rng, double rate);
// Index drawn with probability proportional to weights (need not sum to 1).
std::size_t sample_categorical(RngStream& rng, std::span<const double> weights);
std::vector<std::int64_t> sample_multinomial(RngStream& rng, std::int64_t n,
                                             std::span<const double> p);
// Chinese restaurant table count: sum over i = 1..n of Bernoulli(r / (r + i - 1)).
std::int64_t sample_crt(RngStream& rng, std::int64_t n, double r);

template <typename T>
void shuffle(RngStream& rng, std::vector<T>& items) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace vtcm::num
