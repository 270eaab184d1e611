#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vtcm/error.hpp"
#include "vtcm/numerics/random.hpp"
#include "vtcm/numerics/tensor.hpp"

namespace vtcm::topic {

inline constexpr double kSimplexTolerance = 1e-10;

// Global topics of the gamma belief network.
//
// phi[l - 1] holds Phi^l with shape K_{l-1} x K_l (K_0 = V_c); each column
// is a topic on the simplex. tau[l - 1] is the gamma scale of the prior on
// theta^l (often indexed tau^{l+1}), eta[l - 1] the Dirichlet concentration for
// the columns of Phi^l.
struct TopicHierarchy {
  std::vector<num::Tensor> phi;
  std::vector<double> r;
  std::vector<double> tau;
  std::vector<double> eta;

  std::size_t layers() const { return phi.size(); }
  std::size_t vocab_size() const { return phi.empty() ? 0 : phi.front().rows(); }
  // K_l; width(0) is the vocabulary size.
  std::size_t width(std::size_t l) const { return l == 0 ? vocab_size() : phi.at(l - 1).cols(); }
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> out;
    for (const auto& p : phi) out.push_back(p.cols());
    return out;
  }

  void validate(double tol = kSimplexTolerance) const {
    if (phi.empty()) throw InvalidArgument("topic hierarchy has no layers");
    if (tau.size() != phi.size() || eta.size() != phi.size()) {
      throw InvalidArgument("topic hierarchy needs one tau and one eta per layer");
    }
    for (std::size_t l = 0; l < phi.size(); ++l) {
      const num::Tensor& p = phi[l];
      if (p.ndim() != 2 || p.rows() == 0 || p.cols() == 0) {
        throw ShapeError("Phi^" + std::to_string(l + 1) + " must be a nonempty matrix");
      }
      if (l > 0 && p.rows() != phi[l - 1].cols()) {
        throw ShapeError("Phi^" + std::to_string(l + 1) + " has " + std::to_string(p.rows()) +
                         " rows but layer " + std::to_string(l) + " has " +
                         std::to_string(phi[l - 1].cols()) + " topics");
      }
      for (std::size_t k = 0; k < p.cols(); ++k) {
        double s = 0.0;
        for (std::size_t v = 0; v < p.rows(); ++v) {
          const double x = p.at(v, k);
          if (!(x >= 0.0 && x <= 1.0)) {
            throw InvalidArgument("Phi^" + std::to_string(l + 1) + " entry outside [0, 1]");
          }
          s += x;
        }
        if (std::abs(s - 1.0) > tol) {
          throw InvalidArgument("column " + std::to_string(k) + " of Phi^" +
                                std::to_string(l + 1) + " sums to " + std::to_string(s));
        }
      }
      if (!(tau[l] > 0.0) || !(eta[l] > 0.0)) {
        throw InvalidArgument("tau and eta must be positive");
      }
    }
    if (r.size() != phi.back().cols()) {
      throw ShapeError("r needs one entry per top-layer topic");
    }
    for (double x : r) {
      if (!(x > 0.0)) throw InvalidArgument("r must be positive");
    }
  }

  // Columns drawn uniformly on [0.2, 1] and normalized.
  static TopicHierarchy random(std::size_t vocab, const std::vector<std::size_t>& widths,
                               num::RngStream& rng, double eta = 0.1, double tau = 1.0,
                               double r = 1.0) {
    if (vocab == 0 || widths.empty()) throw InvalidArgument("empty hierarchy dimensions");
    TopicHierarchy h;
    std::size_t rows = vocab;
    for (std::size_t k : widths) {
      if (k == 0) throw InvalidArgument("layer width must be positive");
      std::vector<double> v(rows * k);
      for (double& x : v) x = 0.2 + 0.8 * rng.uniform();
      for (std::size_t c = 0; c < k; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s += v[i * k + c];
        for (std::size_t i = 0; i < rows; ++i) v[i * k + c] /= s;
      }
      h.phi.push_back(num::Tensor::from({rows, k}, std::move(v)));
      h.tau.push_back(tau);
      h.eta.push_back(eta);
      rows = k;
    }
    h.r.assign(widths.back(), r);
    return h;
  }
};

}  // namespace vtcm::topic
