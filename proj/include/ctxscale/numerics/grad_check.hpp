#pragma once

#include <functional>

#include "ctxscale/numerics/tensor.hpp"

namespace ctxscale::numerics {

/// Compares reverse-mode gradients with central differences.
///
/// Returns max over coordinates of |analytic - numeric| /
/// max(|analytic|, |numeric|, 1e-8). `f` must return a scalar tensor.
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double eps);

/// Same check for a leaf `param` that `loss` closes over. The parameter is
/// perturbed in place and restored; its gradient buffer is cleared.
template <typename T>
double grad_check_leaf(const std::function<Tensor<T>()>& loss, Tensor<T>& param, double eps);

}  // namespace ctxscale::numerics
