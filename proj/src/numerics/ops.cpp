#include "vtcm/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/math/special_functions/digamma.hpp>

#include "vtcm/error.hpp"
#include "vtcm/numerics/random.hpp"

namespace vtcm::num {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

void check_finite(const char* op, const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) +
                   " and " + to_string(b.shape()));
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

std::vector<double>& grad_of(const ImplPtr& impl) {
  impl->ensure_grad();
  return impl->grad;
}

Tensor finish(const char* op, Shape shape, std::vector<double> values) {
  check_finite(op, values);
  return make_result(std::move(shape), std::move(values));
}

template <typename Forward, typename Derivative>
Tensor unary(const char* op, const Tensor& a, Forward f, Derivative df) {
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Tensor result = finish(op, a.shape(), std::move(out));
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, oi, df]() {
      if (!ai->requires_grad) return;
      auto& g = grad_of(ai);
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += oi->grad[i] * df(ai->data[i], oi->data[i]);
      }
    });
  }
  return result;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// out[m,n] += a[m,k] * b[k,n]
void gemm_acc(const double* a, const double* b, double* out, std::size_t m,
              std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m,k] += g[m,n] * b[k,n]^T
void gemm_acc_bt(const double* g, const double* b, double* out, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* orow = out + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      orow[p] += s;
    }
  }
}

// out[k,n] += a[m,k]^T * g[m,n]
void gemm_acc_at(const double* a, const double* g, double* out, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

std::size_t require_matrix(const char* op, const Tensor& a) {
  if (a.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
  }
  return a.rows();
}

std::size_t require_vector(const char* op, const Tensor& a) {
  if (a.ndim() != 1) {
    throw ShapeError(std::string(op) + ": expected a vector, got " + to_string(a.shape()));
  }
  return a.size();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || (b.ndim() != 1 && b.ndim() != 2) || a.cols() != b.dim(0)) {
    shape_mismatch("matmul", a, b);
  }
  const std::size_t m = a.rows(), k = a.cols();
  const std::size_t n = b.ndim() == 2 ? b.cols() : 1;
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  Shape shape = b.ndim() == 2 ? Shape{m, n} : Shape{m};
  Tensor result = finish("matmul", std::move(shape), std::move(out));
  if (tracking({&a, &b})) {
    ImplPtr ai = a.impl(), bi = b.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, bi, oi, m, k, n]() {
      if (ai->requires_grad) {
        gemm_acc_bt(oi->grad.data(), bi->data.data(), grad_of(ai).data(), m, k, n);
      }
      if (bi->requires_grad) {
        gemm_acc_at(ai->data.data(), oi->grad.data(), grad_of(bi).data(), m, k, n);
      }
    });
  }
  return result;
}

Tensor vecmat(const Tensor& v, const Tensor& mat) {
  if (v.ndim() != 1 || mat.ndim() != 2 || v.size() != mat.rows()) {
    shape_mismatch("vecmat", v, mat);
  }
  const std::size_t k = mat.rows(), n = mat.cols();
  std::vector<double> out(n, 0.0);
  gemm_acc(v.data().data(), mat.data().data(), out.data(), 1, k, n);
  Tensor result = finish("vecmat", {n}, std::move(out));
  if (tracking({&v, &mat})) {
    ImplPtr vi = v.impl(), mi = mat.impl(), oi = result.impl();
    Tape::active()->record(oi, [vi, mi, oi, k, n]() {
      if (vi->requires_grad) {
        gemm_acc_bt(oi->grad.data(), mi->data.data(), grad_of(vi).data(), 1, k, n);
      }
      if (mi->requires_grad) {
        gemm_acc_at(vi->data.data(), oi->grad.data(), grad_of(mi).data(), 1, k, n);
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = require_matrix("transpose", a), n = a.cols();
  std::vector<double> out(m * n);
  auto in = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  Tensor result = make_result({n, m}, std::move(out));
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, oi, m, n]() {
      auto& g = grad_of(ai);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += oi->grad[j * m + i];
    });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " +
                     to_string(shape));
  }
  Tensor result = make_result(std::move(shape), a.to_vector());
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, oi]() {
      auto& g = grad_of(ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
    });
  }
  return result;
}

namespace {

template <typename Forward, typename GradA, typename GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Forward f, GradA ga,
              GradB gb) {
  if (a.shape() != b.shape()) shape_mismatch(op, a, b);
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  Tensor result = finish(op, a.shape(), std::move(out));
  if (tracking({&a, &b})) {
    ImplPtr ai = a.impl(), bi = b.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, bi, oi, ga, gb]() {
      const std::size_t n = oi->data.size();
      if (ai->requires_grad) {
        auto& g = grad_of(ai);
        for (std::size_t i = 0; i < n; ++i)
          g[i] += oi->grad[i] * ga(ai->data[i], bi->data[i]);
      }
      if (bi->requires_grad) {
        auto& g = grad_of(bi);
        for (std::size_t i = 0; i < n; ++i)
          g[i] += oi->grad[i] * gb(ai->data[i], bi->data[i]);
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add_row(const Tensor& a, const Tensor& r) {
  if (a.ndim() != 2 || r.ndim() != 1 || a.cols() != r.size()) shape_mismatch("add_row", a, r);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.to_vector());
  auto rv = r.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  Tensor result = finish("add_row", a.shape(), std::move(out));
  if (tracking({&a, &r})) {
    ImplPtr ai = a.impl(), ri = r.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, ri, oi, m, n]() {
      if (ai->requires_grad) {
        auto& g = grad_of(ai);
        for (std::size_t i = 0; i < m * n; ++i) g[i] += oi->grad[i];
      }
      if (ri->requires_grad) {
        auto& g = grad_of(ri);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += oi->grad[i * n + j];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      "add_scalar", a, [value](double x) { return x + value; },
      [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, stable_sigmoid,
               [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary("softplus", a, stable_softplus,
               [](double x, double) { return stable_sigmoid(x); });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor lgamma(const Tensor& a) {
  return unary(
      "lgamma", a, [](double x) { return std::lgamma(x); },
      [](double x, double) { return boost::math::digamma(x); });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor clamp_min(const Tensor& a, double floor, std::size_t* hits) {
  if (hits) {
    for (double v : a.data()) *hits += v < floor ? 1 : 0;
  }
  return unary(
      "clamp_min", a, [floor](double x) { return x < floor ? floor : x; },
      [floor](double x, double) { return x < floor ? 0.0 : 1.0; });
}

Tensor clamp_max(const Tensor& a, double ceiling, std::size_t* hits) {
  if (hits) {
    for (double v : a.data()) *hits += v > ceiling ? 1 : 0;
  }
  return unary(
      "clamp_max", a, [ceiling](double x) { return x > ceiling ? ceiling : x; },
      [ceiling](double x, double) { return x > ceiling ? 0.0 : 1.0; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor result = finish("sum", {}, {s});
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, oi]() {
      auto& g = grad_of(ai);
      const double go = oi->grad[0];
      for (double& x : g) x += go;
    });
  }
  return result;
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

Tensor mean_rows(const Tensor& a) {
  const std::size_t m = require_matrix("mean_rows", a), n = a.cols();
  if (m == 0) throw ShapeError("mean_rows: empty matrix");
  std::vector<double> out(n, 0.0);
  auto in = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += in[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  Tensor result = finish("mean_rows", {n}, std::move(out));
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, oi, m, n]() {
      auto& g = grad_of(ai);
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += oi->grad[j] * inv;
    });
  }
  return result;
}

Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat(std::span<const Tensor> parts) {
  std::vector<double> out;
  bool track = false;
  for (const Tensor& p : parts) {
    require_vector("concat", p);
    out.insert(out.end(), p.data().begin(), p.data().end());
    track = track || p.requires_grad();
  }
  const std::size_t n = out.size();
  Tensor result = make_result({n}, std::move(out));
  if (track && Tape::active()) {
    std::vector<ImplPtr> impls;
    for (const Tensor& p : parts) impls.push_back(p.impl());
    ImplPtr oi = result.impl();
    Tape::active()->record(oi, [impls, oi]() {
      std::size_t offset = 0;
      for (const ImplPtr& p : impls) {
        if (p->requires_grad) {
          auto& g = grad_of(p);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[offset + i];
        }
        offset += p->data.size();
      }
    });
  }
  return result;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = require_matrix("concat_cols", parts[0]);
  std::size_t total = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    if (require_matrix("concat_cols", p) != m) shape_mismatch("concat_cols", parts[0], p);
    total += p.cols();
    track = track || p.requires_grad();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.cols();
    auto in = p.data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(in.data() + i * c, c, out.data() + i * total + offset);
    offset += c;
  }
  Tensor result = make_result({m, total}, std::move(out));
  if (track && Tape::active()) {
    std::vector<ImplPtr> impls;
    for (const Tensor& p : parts) impls.push_back(p.impl());
    ImplPtr oi = result.impl();
    Tape::active()->record(oi, [impls, oi, m, total]() {
      std::size_t off = 0;
      for (const ImplPtr& p : impls) {
        const std::size_t c = p->shape[1];
        if (p->requires_grad) {
          auto& g = grad_of(p);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += oi->grad[i * total + off + j];
        }
        off += c;
      }
    });
  }
  return result;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  require_matrix("concat_rows", parts[0]);
  const std::size_t n = parts[0].cols();
  std::size_t rows = 0;
  bool track = false;
  std::vector<double> out;
  for (const Tensor& p : parts) {
    require_matrix("concat_rows", p);
    if (p.cols() != n) shape_mismatch("concat_rows", parts[0], p);
    rows += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
    track = track || p.requires_grad();
  }
  Tensor result = make_result({rows, n}, std::move(out));
  if (track && Tape::active()) {
    std::vector<ImplPtr> impls;
    for (const Tensor& p : parts) impls.push_back(p.impl());
    ImplPtr oi = result.impl();
    Tape::active()->record(oi, [impls, oi]() {
      std::size_t offset = 0;
      for (const ImplPtr& p : impls) {
        if (p->requires_grad) {
          auto& g = grad_of(p);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[offset + i];
        }
        offset += p->data.size();
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t length) {
  const std::size_t n = require_vector("slice", a);
  if (begin + length > n) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + length) + ") exceeds " + to_string(a.shape()));
  }
  std::vector<double> out(a.data().begin() + begin, a.data().begin() + begin + length);
  Tensor result = make_result({length}, std::move(out));
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, oi, begin, length]() {
      auto& g = grad_of(ai);
      for (std::size_t i = 0; i < length; ++i) g[begin + i] += oi->grad[i];
    });
  }
  return result;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t length) {
  const std::size_t m = require_matrix("slice_cols", a), n = a.cols();
  if (begin + length > n) {
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                     std::to_string(begin + length) + ") exceed " + to_string(a.shape()));
  }
  std::vector<double> out(m * length);
  auto in = a.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(in.data() + i * n + begin, length, out.data() + i * length);
  Tensor result = make_result({m, length}, std::move(out));
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, oi, m, n, begin, length]() {
      auto& g = grad_of(ai);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < length; ++j)
          g[i * n + begin + j] += oi->grad[i * length + j];
    });
  }
  return result;
}

Tensor row(const Tensor& a, std::size_t index) {
  const std::size_t ids[] = {index};
  return reshape(gather_rows(a, ids), {a.cols()});
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> ids) {
  const std::size_t m = require_matrix("gather_rows", a), n = a.cols();
  std::vector<double> out(ids.size() * n);
  auto in = a.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= m) {
      throw ShapeError("gather_rows: row " + std::to_string(ids[r]) + " out of range for " +
                       to_string(a.shape()));
    }
    std::copy_n(in.data() + ids[r] * n, n, out.data() + r * n);
  }
  Tensor result = make_result({ids.size(), n}, std::move(out));
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    Tape::active()->record(oi, [ai, oi, idv, n]() {
      auto& g = grad_of(ai);
      for (std::size_t r = 0; r < idv.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) g[idv[r] * n + j] += oi->grad[r * n + j];
    });
  }
  return result;
}

namespace {

struct AxisLayout {
  std::size_t outer, len, inner;
};

AxisLayout axis_layout(const char* op, const Tensor& a, std::size_t axis) {
  if (a.ndim() == 1 && axis == 0) return {1, a.size(), 1};
  if (a.ndim() == 2 && axis == 0) return {1, a.rows(), a.cols()};
  if (a.ndim() == 2 && axis == 1) return {a.rows(), a.cols(), 1};
  throw ShapeError(std::string(op) + ": unsupported axis " + std::to_string(axis) +
                   " for shape " + to_string(a.shape()));
}

}  // namespace

Tensor softmax(const Tensor& a, std::size_t axis) {
  const AxisLayout L = axis_layout("softmax", a, axis);
  if (L.len == 0) throw ShapeError("softmax: empty axis in " + to_string(a.shape()));
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t o = 0; o < L.outer; ++o) {
    for (std::size_t c = 0; c < L.inner; ++c) {
      const std::size_t base = o * L.len * L.inner + c;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < L.len; ++i) mx = std::max(mx, in[base + i * L.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < L.len; ++i) {
        const double e = std::exp(in[base + i * L.inner] - mx);
        out[base + i * L.inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < L.len; ++i) out[base + i * L.inner] /= z;
    }
  }
  Tensor result = finish("softmax", a.shape(), std::move(out));
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, oi, L]() {
      auto& g = grad_of(ai);
      const auto& y = oi->data;
      const auto& gy = oi->grad;
      for (std::size_t o = 0; o < L.outer; ++o) {
        for (std::size_t c = 0; c < L.inner; ++c) {
          const std::size_t base = o * L.len * L.inner + c;
          double s = 0.0;
          for (std::size_t i = 0; i < L.len; ++i) {
            const std::size_t idx = base + i * L.inner;
            s += gy[idx] * y[idx];
          }
          for (std::size_t i = 0; i < L.len; ++i) {
            const std::size_t idx = base + i * L.inner;
            g[idx] += y[idx] * (gy[idx] - s);
          }
        }
      }
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  const AxisLayout L = axis_layout("log_softmax", a, axis);
  if (L.len == 0) throw ShapeError("log_softmax: empty axis in " + to_string(a.shape()));
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t o = 0; o < L.outer; ++o) {
    for (std::size_t c = 0; c < L.inner; ++c) {
      const std::size_t base = o * L.len * L.inner + c;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < L.len; ++i) mx = std::max(mx, in[base + i * L.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < L.len; ++i) z += std::exp(in[base + i * L.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t i = 0; i < L.len; ++i)
        out[base + i * L.inner] = in[base + i * L.inner] - lse;
    }
  }
  Tensor result = finish("log_softmax", a.shape(), std::move(out));
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, oi, L]() {
      auto& g = grad_of(ai);
      const auto& y = oi->data;
      const auto& gy = oi->grad;
      for (std::size_t o = 0; o < L.outer; ++o) {
        for (std::size_t c = 0; c < L.inner; ++c) {
          const std::size_t base = o * L.len * L.inner + c;
          double s = 0.0;
          for (std::size_t i = 0; i < L.len; ++i) s += gy[base + i * L.inner];
          for (std::size_t i = 0; i < L.len; ++i) {
            const std::size_t idx = base + i * L.inner;
            g[idx] += gy[idx] - std::exp(y[idx]) * s;
          }
        }
      }
    });
  }
  return result;
}

Tensor causal_softmax_rows(const Tensor& scores) {
  const std::size_t m = require_matrix("causal_softmax_rows", scores), n = scores.cols();
  if (m != n) {
    throw ShapeError("causal_softmax_rows: expected a square matrix, got " +
                     to_string(scores.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto in = scores.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = in.data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= i; ++j) mx = std::max(mx, r[j]);
    double z = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      out[i * n + j] = std::exp(r[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j <= i; ++j) out[i * n + j] /= z;
  }
  Tensor result = finish("causal_softmax_rows", scores.shape(), std::move(out));
  if (tracking({&scores})) {
    ImplPtr ai = scores.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, oi, n]() {
      auto& g = grad_of(ai);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j <= i; ++j) s += oi->grad[i * n + j] * oi->data[i * n + j];
        for (std::size_t j = 0; j <= i; ++j) {
          const std::size_t idx = i * n + j;
          g[idx] += oi->data[idx] * (oi->grad[idx] - s);
        }
      }
    });
  }
  return result;
}

Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias,
                       double eps) {
  const std::size_t m = require_matrix("layer_norm_rows", a), n = a.cols();
  if (gain.ndim() != 1 || gain.size() != n) shape_mismatch("layer_norm_rows", a, gain);
  if (bias.ndim() != 1 || bias.size() != n) shape_mismatch("layer_norm_rows", a, bias);
  std::vector<double> normed(m * n), out(m * n), inv_std(m);
  auto in = a.data();
  auto gv = gain.data(), bv = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = in.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += r[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      normed[i * n + j] = (r[j] - mean) * inv_std[i];
      out[i * n + j] = normed[i * n + j] * gv[j] + bv[j];
    }
  }
  Tensor result = finish("layer_norm_rows", a.shape(), std::move(out));
  if (tracking({&a, &gain, &bias})) {
    ImplPtr ai = a.impl(), gi = gain.impl(), bi = bias.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, gi, bi, oi, normed = std::move(normed),
                                inv_std = std::move(inv_std), m, n]() {
      const auto& gy = oi->grad;
      if (gi->requires_grad) {
        auto& g = grad_of(gi);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += gy[i * n + j] * normed[i * n + j];
      }
      if (bi->requires_grad) {
        auto& g = grad_of(bi);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += gy[i * n + j];
      }
      if (ai->requires_grad) {
        auto& g = grad_of(ai);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dn = gy[i * n + j] * gi->data[j];
            s1 += dn;
            s2 += dn * normed[i * n + j];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const double dn = gy[i * n + j] * gi->data[j];
            g[i * n + j] +=
                inv_std[i] * (dn - inv_n * s1 - normed[i * n + j] * inv_n * s2);
          }
        }
      }
    });
  }
  return result;
}

Tensor pick(const Tensor& a, std::span<const std::size_t> ids) {
  double s = 0.0;
  std::vector<std::size_t> flat;
  flat.reserve(ids.size());
  if (a.ndim() == 1) {
    for (std::size_t id : ids) {
      if (id >= a.size()) throw ShapeError("pick: index out of range for " + to_string(a.shape()));
      flat.push_back(id);
    }
  } else if (a.ndim() == 2) {
    if (ids.size() != a.rows()) {
      throw ShapeError("pick: " + std::to_string(ids.size()) + " ids for " +
                       to_string(a.shape()));
    }
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] >= a.cols()) {
        throw ShapeError("pick: column out of range for " + to_string(a.shape()));
      }
      flat.push_back(r * a.cols() + ids[r]);
    }
  } else {
    throw ShapeError("pick: unsupported shape " + to_string(a.shape()));
  }
  auto in = a.data();
  for (std::size_t f : flat) s += in[f];
  Tensor result = finish("pick", {}, {s});
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::active()->record(oi, [ai, oi, flat = std::move(flat)]() {
      auto& g = grad_of(ai);
      for (std::size_t f : flat) g[f] += oi->grad[0];
    });
  }
  return result;
}

Tensor pick_rows(const Tensor& a, std::span<const std::size_t> ids) {
  const std::size_t m = require_matrix("pick_rows", a), n = a.cols();
  if (ids.size() != m) throw ShapeError("pick_rows: id count does not match rows");
  std::vector<double> out(m);
  auto in = a.data();
  for (std::size_t r = 0; r < m; ++r) {
    if (ids[r] >= n) throw ShapeError("pick_rows: column out of range");
    out[r] = in[r * n + ids[r]];
  }
  Tensor result = make_result({m}, std::move(out));
  if (tracking({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    Tape::active()->record(oi, [ai, oi, idv, n]() {
      auto& g = grad_of(ai);
      for (std::size_t r = 0; r < idv.size(); ++r) g[r * n + idv[r]] += oi->grad[r];
    });
  }
  return result;
}

Tensor dropout(const Tensor& a, double rate, RngStream& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw InvalidArgument("dropout rate must be below 1");
  std::vector<double> mask(a.size());
  const double keep = 1.0 - rate;
  for (double& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mul(a, Tensor::from(a.shape(), std::move(mask)));
}

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  const double lse = log_sum_exp(logits);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(logits[i] - lse);
  return out;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw ShapeError("log_sum_exp: empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : values) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double z = 0.0;
  for (double v : values) z += std::exp(v - mx);
  return mx + std::log(z);
}

}  // namespace vtcm::num
