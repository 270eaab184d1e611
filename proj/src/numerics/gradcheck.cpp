#include "vtcm/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vtcm/error.hpp"

namespace vtcm::num {

namespace {

double scalar_value(const Tensor& t) {
  if (!t.defined() || t.size() != 1 || t.ndim() != 0) {
    throw ShapeError("grad_check needs a scalar-valued function, got " +
                     (t.defined() ? to_string(t.shape()) : std::string("undefined")));
  }
  return t.item();
}

double coordinate_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h, double floor) {
  Tensor leaf = x.clone_parameter();
  return grad_check_params([&] { return f(leaf); }, {{"x", leaf}}, h, 0, floor);
}

GradCheckResult grad_check_params(const std::function<Tensor()>& f,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double h, std::size_t max_coords, double floor) {
  std::vector<Tensor> leaves;
  for (const auto& [name, p] : params) {
    if (!p.requires_grad()) throw InvalidArgument("grad_check: " + name + " is not a parameter");
    leaves.push_back(p);
    leaves.back().zero_grad();
  }
  {
    Tape tape;
    Tensor out = f();
    scalar_value(out);
    tape.backward(out);
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    Tensor& p = leaves[t];
    const std::vector<double> analytic = p.grad_or_zero();
    const std::size_t n = p.size();
    const std::size_t probes = max_coords == 0 ? n : std::min(n, max_coords);
    for (std::size_t s = 0; s < probes; ++s) {
      const std::size_t i = probes == n ? s : (s * n) / probes;
      auto values = p.mutable_data();
      const double saved = values[i];
      values[i] = saved + h;
      const double up = scalar_value(f());
      values[i] = saved - h;
      const double down = scalar_value(f());
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = coordinate_error(analytic[i], numeric, floor);
      ++result.coordinates;
      if (err > result.max_rel_error || result.worst.empty()) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst = params[t].first + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  return result;
}

}  // namespace vtcm::num
