#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>

#include "twoch/tensor.hpp"

namespace twoch::ad {

// Additive mask value standing in for -inf. exp() of anything this negative
// underflows to exactly zero.
inline constexpr double kMaskSentinel = -1e9;

enum class ElementwiseKind { add, sub, mul, scale, relu };

// c[i,j] = sum_r a[i,r] * b[r,j]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b);
// Scalar form: scale multiplies, relu ignores the scalar.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, double s);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);

// x[r, :] + bias for every row r. bias has shape [cols].
Tensor add_rowwise(const Tensor& x, const Tensor& bias);

// Row-wise softmax of scores + mask. Mask entries must be 0 or kMaskSentinel;
// masked entries come out exactly 0.
Tensor softmax_masked(const Tensor& scores, const std::optional<Tensor>& mask = std::nullopt);

// Normalizes each row of the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// Horizontal concatenation of matrices with equal row counts.
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& x);
// Mean of squared differences; b is usually a constant target.
Tensor mse(const Tensor& a, const Tensor& b);

// Inverted dropout: zeroes entries with probability p and rescales the rest.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

}  // namespace twoch::ad
