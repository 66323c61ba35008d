#pragma once

#include <cstddef>
#include <vector>

#include "ctxscale/numerics/random.hpp"
#include "ctxscale/numerics/tensor.hpp"

namespace ctxscale::numerics {

// Element-wise binary ops with NumPy-style broadcasting (rank <= 4).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

/// a * factor + offset
template <typename T> Tensor<T> affine(const Tensor<T>& a, T factor, T offset);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor) { return affine(a, factor, T(0)); }

// Unary.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);

/// Matrix product over the last two axes; leading axes broadcast.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Layout.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> transpose(const Tensor<T>& a, std::size_t axis0, std::size_t axis1);
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// Max-subtracted softmax along `axis`. Throws NumericError on NaN input.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);

/// Normalizes over the last axis, then applies per-feature gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Inverted dropout; identity when `training` is false or p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& a, double p, Rng& rng, bool training);

// Reductions.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a, std::size_t axis, bool keepdim);

/// Mean squared error over all entries, as a scalar.
template <typename T> Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Sets entries above the diagonal of the last two axes to -inf.
template <typename T> Tensor<T> causal_mask(const Tensor<T>& scores);

/// (M, L) -> (M, N, P): pads each row on the right with S copies of its last
/// value, then cuts length-P windows every S steps. N = (L + S - P) / S + 1.
template <typename T> Tensor<T> unfold_patches(const Tensor<T>& x, std::size_t patch_len, std::size_t stride);

std::size_t patch_count(std::size_t length, std::size_t patch_len, std::size_t stride);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

}  // namespace ctxscale::numerics
