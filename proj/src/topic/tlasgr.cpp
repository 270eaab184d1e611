#include "vtcm/topic/tlasgr.hpp"

#include <cmath>

#include "vtcm/error.hpp"

namespace vtcm::topic {

AugmentedCounts augment_counts(const std::vector<std::int64_t>& counts, const TopicHierarchy& h,
                               const std::vector<std::vector<double>>& theta,
                               num::RngStream& rng) {
  if (theta.size() != h.layers()) throw ShapeError("one theta vector per layer required");
  AugmentedCounts out;
  std::vector<std::int64_t> x = counts;
  for (std::size_t l = 0; l < h.layers(); ++l) {
    const num::Tensor& phi = h.phi[l];
    const std::size_t rows = phi.rows(), cols = phi.cols();
    if (x.size() != rows || theta[l].size() != cols) {
      throw ShapeError("augment_counts: layer " + std::to_string(l + 1) + " expects " +
                       std::to_string(rows) + " counts and " + std::to_string(cols) +
                       " topic weights");
    }
    std::vector<double> t(cols);
    for (std::size_t k = 0; k < cols; ++k) t[k] = std::max(theta[l][k], kAugmentThetaFloor);
    std::vector<std::int64_t> a(rows * cols, 0);
    std::vector<std::int64_t> m(cols, 0);
    std::vector<double> p(cols);
    for (std::size_t v = 0; v < rows; ++v) {
      if (x[v] < 0) throw InvalidArgument("negative count in augment_counts");
      if (x[v] == 0) continue;
      double total = 0.0;
      for (std::size_t k = 0; k < cols; ++k) {
        p[k] = phi.at(v, k) * t[k];
        total += p[k];
      }
      if (!(total > 0.0)) {
        throw NumericError("augment_counts: row " + std::to_string(v) + " of layer " +
                           std::to_string(l + 1) + " has count " + std::to_string(x[v]) +
                           " but zero probability everywhere");
      }
      if (cols == 1) {
        a[v] = x[v];
        m[0] += x[v];
        continue;
      }
      const auto draw = num::sample_multinomial(rng, x[v], p);
      for (std::size_t k = 0; k < cols; ++k) {
        a[v * cols + k] = draw[k];
        m[k] += draw[k];
      }
    }
    std::vector<std::int64_t> next(cols, 0);
    for (std::size_t k = 0; k < cols; ++k) {
      double r;
      if (l + 1 < h.layers()) {
        r = 0.0;
        const num::Tensor& up = h.phi[l + 1];
        for (std::size_t j = 0; j < up.cols(); ++j) {
          r += up.at(k, j) * std::max(theta[l + 1][j], kAugmentThetaFloor);
        }
        r = std::max(r, kAugmentThetaFloor);
      } else {
        r = h.r[k];
      }
      next[k] = num::sample_crt(rng, m[k], r);
    }
    out.a.push_back(std::move(a));
    out.m.push_back(m);
    out.x_next.push_back(next);
    x = std::move(next);
  }
  return out;
}

std::vector<std::vector<double>> aggregate(const std::vector<AugmentedCounts>& batch,
                                           const TopicHierarchy& h) {
  std::vector<std::vector<double>> out;
  for (std::size_t l = 0; l < h.layers(); ++l) {
    out.emplace_back(h.phi[l].size(), 0.0);
  }
  for (const auto& doc : batch) {
    for (std::size_t l = 0; l < h.layers(); ++l) {
      for (std::size_t i = 0; i < out[l].size(); ++i) out[l][i] += static_cast<double>(doc.a[l][i]);
    }
  }
  return out;
}

TlasgrState TlasgrState::create(const TopicHierarchy& h) {
  TlasgrState s;
  for (std::size_t l = 0; l < h.layers(); ++l) s.precond.emplace_back(h.width(l + 1), 1.0);
  return s;
}

double TlasgrState::step_size() const {
  return a * std::pow(1.0 + static_cast<double>(step) / b, -c);
}

void project_simplex(std::vector<double>& column) {
  double s = 0.0;
  for (double& x : column) {
    if (!(x >= kProjectionFloor)) x = kProjectionFloor;
    s += x;
  }
  for (double& x : column) x /= s;
}

void tlasgr_update(TopicHierarchy& h, const std::vector<std::vector<double>>& stats,
                   TlasgrState& state, num::RngStream& rng, TlasgrOptions options) {
  if (stats.size() != h.layers() || state.precond.size() != h.layers()) {
    throw ShapeError("tlasgr_update: statistics or state do not match the hierarchy depth");
  }
  if (!(state.rho >= 1.0)) throw InvalidArgument("minibatch ratio rho must be >= 1");
  const double eps = state.step_size();
  for (std::size_t l = 0; l < h.layers(); ++l) {
    num::Tensor& phi = h.phi[l];
    const std::size_t rows = phi.rows(), cols = phi.cols();
    if (stats[l].size() != rows * cols) throw ShapeError("statistics of the wrong size");
    const double eta = h.eta[l];
    auto values = phi.mutable_data();
    std::vector<double> col(rows), g(rows);
    for (std::size_t k = 0; k < cols; ++k) {
      double total = 0.0;
      for (std::size_t v = 0; v < rows; ++v) total += stats[l][v * cols + k];
      const double mass = state.rho * total + static_cast<double>(rows) * eta;
      double& p = state.precond[l][k];
      if (!options.freeze_preconditioner) p = state.decay * p + (1.0 - state.decay) * mass;
      if (!(p > 0.0)) {
        throw InvalidArgument("preconditioner of topic " + std::to_string(k) + " at layer " +
                              std::to_string(l + 1) + " is not positive");
      }
      const double step = eps / p;
      for (std::size_t v = 0; v < rows; ++v) {
        const double phi_v = values[v * cols + k];
        col[v] = phi_v + step * ((state.rho * stats[l][v * cols + k] + eta) - mass * phi_v);
      }
      if (options.noise) {
        // sqrt(phi) * g - phi * <sqrt(phi), g> has covariance diag(phi) - phi phi^T.
        const double amp = std::sqrt(2.0 * step);
        double proj = 0.0;
        for (std::size_t v = 0; v < rows; ++v) {
          g[v] = num::sample_normal(rng);
          proj += std::sqrt(values[v * cols + k]) * g[v];
        }
        for (std::size_t v = 0; v < rows; ++v) {
          const double phi_v = values[v * cols + k];
          col[v] += amp * (std::sqrt(phi_v) * g[v] - phi_v * proj);
        }
      }
      project_simplex(col);
      for (std::size_t v = 0; v < rows; ++v) values[v * cols + k] = col[v];
    }
  }
  ++state.step;
}

}  // namespace vtcm::topic
