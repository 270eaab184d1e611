#include "vtcm/train/adam.hpp"

#include <cmath>

#include "vtcm/error.hpp"

namespace vtcm::train {

StepReport adaptive_step(std::vector<std::pair<std::string, num::Tensor>>& params,
                         AdamState& state, double lr, double clip) {
  if (!(clip > 0.0)) throw InvalidArgument("clip norm must be positive");
  StepReport report;
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    for (double g : t.grad()) sq += g * g;
  }
  report.grad_norm = std::sqrt(sq);
  if (!std::isfinite(report.grad_norm)) {
    report.skipped = true;
    ++state.skipped;
    return report;
  }
  if (report.grad_norm > clip) report.scale = clip / report.grad_norm;

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, tensor] : params) {
    const auto grad = tensor.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    m.resize(tensor.size(), 0.0);
    v.resize(tensor.size(), 0.0);
    auto data = tensor.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i] * report.scale;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
  return report;
}

}  // namespace vtcm::train
