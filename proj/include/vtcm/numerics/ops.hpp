#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vtcm/numerics/tensor.hpp"

namespace vtcm::num {

class RngStream;

// Every op checks conformability (ShapeError naming both shapes) and that its
// output is finite (NumericError naming the op). Outputs are recorded on the
// active tape when any input requires a gradient.

// (m,k)x(k,n) -> (m,n) and (m,k)x(k) -> (m).
Tensor matmul(const Tensor& a, const Tensor& b);
// (k)x(k,n) -> (n); row vector times matrix.
Tensor vecmat(const Tensor& v, const Tensor& m);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
// (m,n) + (n): adds the vector to every row.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor lgamma(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
// Elementwise max(a, floor); gradient is zero where the floor is active.
// `hits` (optional) receives the number of clamped entries.
Tensor clamp_min(const Tensor& a, double floor, std::size_t* hits = nullptr);
Tensor clamp_max(const Tensor& a, double ceiling, std::size_t* hits = nullptr);

Tensor sum(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
// Column means of a matrix: (m,n) -> (n).
Tensor mean_rows(const Tensor& a);

// 1-D tensors end to end.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
// Matrices with equal row counts side by side.
Tensor concat_cols(std::span<const Tensor> parts);
// Matrices with equal column counts stacked.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice(const Tensor& a, std::size_t begin, std::size_t length);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t length);
// Row `index` of a matrix as a vector.
Tensor row(const Tensor& a, std::size_t index);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> ids);

// Normalizes along `axis` (1-D: axis 0; 2-D: axis 0 or 1).
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
// Row-wise softmax of a square score matrix where row i only sees columns
// j <= i. Masked entries are exactly zero.
Tensor causal_softmax_rows(const Tensor& scores);

// Per-row normalization to zero mean / unit variance, then gain and bias.
Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);

// Sum of a[i] over ids (1-D) or a[i, ids[i]] over rows (2-D).
Tensor pick(const Tensor& a, std::span<const std::size_t> ids);
// Entrywise values a[i, ids[i]] as a vector.
Tensor pick_rows(const Tensor& a, std::span<const std::size_t> ids);

// Inverted dropout; identity when rate is 0.
Tensor dropout(const Tensor& a, double rate, RngStream& rng);

// Non-differentiable helpers.
std::vector<double> softmax_values(std::span<const double> logits);
double log_sum_exp(std::span<const double> values);

}  // namespace vtcm::num
