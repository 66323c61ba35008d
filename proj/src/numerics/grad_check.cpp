#include "ctxscale/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ctxscale::numerics {

namespace {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

template <typename T>
T scalar_of(const Tensor<T>& y) {
  if (y.numel() != 1) throw ContractError("grad_check: function output has shape " + to_string(y.shape()));
  return y.item();
}

}  // namespace

template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double eps) {
  auto leaf = x.clone(true);
  auto y = f(leaf);
  scalar_of(y);
  y.backward();
  std::vector<T> analytic(leaf.grad().begin(), leaf.grad().end());

  NoGradGuard guard;
  auto probe = x.clone(false);
  auto values = probe.mutable_values();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = saved + static_cast<T>(eps);
    const double up = scalar_of(f(probe));
    values[i] = saved - static_cast<T>(eps);
    const double down = scalar_of(f(probe));
    values[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

template <typename T>
double grad_check_leaf(const std::function<Tensor<T>()>& loss, Tensor<T>& param, double eps) {
  param.zero_grad();
  auto y = loss();
  scalar_of(y);
  y.backward();
  std::vector<T> analytic(param.grad().begin(), param.grad().end());
  param.zero_grad();

  NoGradGuard guard;
  auto values = param.mutable_values();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = saved + static_cast<T>(eps);
    const double up = scalar_of(loss());
    values[i] = saved - static_cast<T>(eps);
    const double down = scalar_of(loss());
    values[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

template double grad_check(const std::function<Tensor<float>(const Tensor<float>&)>&, const Tensor<float>&, double);
template double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>&, const Tensor<double>&,
                           double);
template double grad_check_leaf(const std::function<Tensor<float>()>&, Tensor<float>&, double);
template double grad_check_leaf(const std::function<Tensor<double>()>&, Tensor<double>&, double);

}  // namespace ctxscale::numerics
