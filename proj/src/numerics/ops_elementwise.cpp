#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "ctxscale/numerics/ops.hpp"

namespace ctxscale::numerics {

namespace {

using detail::make_result;
using detail::Node;

// Index mapping from a broadcast output position to each operand's offset.
struct BroadcastPlan {
  enum class Kind { kSame, kScalarA, kScalarB, kSuffixA, kSuffixB, kGeneral };
  Kind kind = Kind::kSame;
  Shape out;
  std::size_t na = 0;
  std::size_t nb = 0;
  std::vector<std::size_t> a_offset;
  std::vector<std::size_t> b_offset;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

BroadcastPlan plan_broadcast(const Shape& sa, const Shape& sb, const char* op) {
  BroadcastPlan plan;
  plan.na = numel(sa);
  plan.nb = numel(sb);
  if (sa == sb) {
    plan.out = sa;
    return plan;
  }
  std::size_t rank = std::max(sa.size(), sb.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(sa.begin(), sa.end(), pa.begin() + (rank - sa.size()));
  std::copy(sb.begin(), sb.end(), pb.begin() + (rank - sb.size()));
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast shapes " + to_string(sa) +
                           " and " + to_string(sb));
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  if (plan.nb == 1 && plan.out == sa) {
    plan.kind = BroadcastPlan::Kind::kScalarB;
  } else if (plan.na == 1 && plan.out == sb) {
    plan.kind = BroadcastPlan::Kind::kScalarA;
  } else if (plan.out == sa && is_suffix(sb, sa)) {
    plan.kind = BroadcastPlan::Kind::kSuffixB;
  } else if (plan.out == sb && is_suffix(sa, sb)) {
    plan.kind = BroadcastPlan::Kind::kSuffixA;
  } else {
    plan.kind = BroadcastPlan::Kind::kGeneral;
    std::array<std::size_t, kMaxRank> stride_a{}, stride_b{};
    std::size_t ra = 1, rb = 1;
    for (std::size_t i = rank; i-- > 0;) {
      stride_a[i] = pa[i] == 1 ? 0 : ra;
      stride_b[i] = pb[i] == 1 ? 0 : rb;
      ra *= pa[i];
      rb *= pb[i];
    }
    std::size_t total = numel(plan.out);
    plan.a_offset.resize(total);
    plan.b_offset.resize(total);
    std::array<std::size_t, kMaxRank> idx{};
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < total; ++i) {
      plan.a_offset[i] = oa;
      plan.b_offset[i] = ob;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        oa += stride_a[d];
        ob += stride_b[d];
        if (idx[d] < plan.out[d]) break;
        oa -= stride_a[d] * idx[d];
        ob -= stride_b[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  return plan;
}

template <typename F>
void for_each_pair(const BroadcastPlan& plan, F&& f) {
  std::size_t total = numel(plan.out);
  switch (plan.kind) {
    case BroadcastPlan::Kind::kSame:
      for (std::size_t i = 0; i < total; ++i) f(i, i, i);
      break;
    case BroadcastPlan::Kind::kScalarA:
      for (std::size_t i = 0; i < total; ++i) f(i, std::size_t{0}, i);
      break;
    case BroadcastPlan::Kind::kScalarB:
      for (std::size_t i = 0; i < total; ++i) f(i, i, std::size_t{0});
      break;
    case BroadcastPlan::Kind::kSuffixA:
      for (std::size_t i = 0; i < total; ++i) f(i, i % plan.na, i);
      break;
    case BroadcastPlan::Kind::kSuffixB:
      for (std::size_t i = 0; i < total; ++i) f(i, i, i % plan.nb);
      break;
    case BroadcastPlan::Kind::kGeneral:
      for (std::size_t i = 0; i < total; ++i) f(i, plan.a_offset[i], plan.b_offset[i]);
      break;
  }
}

// Fwd(a, b) -> out; DA(a, b, g) and DB(a, b, g) -> operand contributions.
template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, DA da, DB db) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), name));
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(numel(plan->out));
  for_each_pair(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(av[ia], bv[ib]); });
  return make_result<T>(plan->out, std::move(out), {a.node(), b.node()}, [plan, da, db](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    const bool want_a = pa.requires_grad;
    const bool want_b = pb.requires_grad;
    for_each_pair(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (want_a) pa.grad[ia] += da(pa.value[ia], pb.value[ib], g[i]);
      if (want_b) pb.grad[ib] += db(pa.value[ia], pb.value[ib], g[i]);
    });
  });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [deriv](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      p.grad[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
      [](T x, T, T g) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T g) { return g / y; },
      [](T x, T y, T g) { return -g * x / (y * y); });
}

template <typename T>
Tensor<T> affine(const Tensor<T>& a, T factor, T offset) {
  return unary_op(
      a, [=](T x) { return x * factor + offset; }, [=](T, T) { return factor; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary_op(
      a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op(
      a,
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary_op(
      a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary_op(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  auto av = a.values();
  T total = T(0);
  for (auto v : av) total += v;
  return make_result<T>(Shape{}, {total}, {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  auto n = a.numel();
  if (n == 0) throw ContractError("mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis, bool keepdim) {
  const auto& s = a.shape();
  if (axis >= s.size()) {
    throw DimensionError("mean: axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  std::size_t outer = 1, inner = 1, len = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  auto av = a.values();
  std::vector<T> out(outer * inner, T(0));
  const T inv = T(1) / static_cast<T>(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < len; ++k) {
      const T* row = av.data() + (o * len + k) * inner;
      T* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += row[i];
    }
  }
  for (auto& v : out) v *= inv;
  return make_result<T>(std::move(out_shape), std::move(out), {a.node()},
                        [outer, inner, len, inv](Node<T>& self) {
                          auto& p = *self.parents[0];
                          p.ensure_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            const T* g = self.grad.data() + o * inner;
                            for (std::size_t k = 0; k < len; ++k) {
                              T* dst = p.grad.data() + (o * len + k) * inner;
                              for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i] * inv;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + to_string(pred.shape()) + " vs target " +
                         to_string(target.shape()));
  }
  auto pv = pred.values();
  auto tv = target.values();
  const std::size_t n = pv.size();
  if (n == 0) throw ContractError("mse_loss of empty tensors");
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    T d = pv[i] - tv[i];
    total += d * d;
  }
  return make_result<T>(Shape{}, {total / static_cast<T>(n)}, {pred.node(), target.node()}, [n](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& t = *self.parents[1];
    const T coef = T(2) * self.grad[0] / static_cast<T>(n);
    if (p.requires_grad) {
      p.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) p.grad[i] += coef * (p.value[i] - t.value[i]);
    }
    if (t.requires_grad) {
      t.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) t.grad[i] -= coef * (p.value[i] - t.value[i]);
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout probability must lie in [0, 1)");
  if (!training || p == 0.0) return a;
  auto av = a.values();
  const T keep_scale = T(1) / static_cast<T>(1.0 - p);
  auto mask = std::make_shared<std::vector<T>>(av.size());
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? T(0) : keep_scale;
    out[i] = av[i] * (*mask)[i];
  }
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [mask](Node<T>& self) {
    auto& parent = *self.parents[0];
    parent.ensure_grad();
    for (std::size_t i = 0; i < parent.grad.size(); ++i) parent.grad[i] += self.grad[i] * (*mask)[i];
  });
}

template <typename T>
Tensor<T> causal_mask(const Tensor<T>& scores) {
  const auto& s = scores.shape();
  if (s.size() < 2) throw DimensionError("causal_mask needs rank >= 2, got " + to_string(s));
  const std::size_t rows = s[s.size() - 2];
  const std::size_t cols = s[s.size() - 1];
  const std::size_t mats = numel(s) / (rows * cols);
  auto sv = scores.values();
  std::vector<T> out(sv.begin(), sv.end());
  for (std::size_t m = 0; m < mats; ++m) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = r + 1; c < cols; ++c) out[(m * rows + r) * cols + c] = -std::numeric_limits<T>::infinity();
    }
  }
  return make_result<T>(s, std::move(out), {scores.node()}, [mats, rows, cols](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t m = 0; m < mats; ++m) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c <= r && c < cols; ++c) {
          std::size_t i = (m * rows + r) * cols + c;
          p.grad[i] += self.grad[i];
        }
      }
    }
  });
}

#define CTXSCALE_INSTANTIATE_ELEMENTWISE(T)                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> affine(const Tensor<T>&, T, T);                                  \
  template Tensor<T> gelu(const Tensor<T>&);                                          \
  template Tensor<T> sigmoid(const Tensor<T>&);                                       \
  template Tensor<T> sqrt(const Tensor<T>&);                                          \
  template Tensor<T> square(const Tensor<T>&);                                        \
  template Tensor<T> sum(const Tensor<T>&);                                           \
  template Tensor<T> mean(const Tensor<T>&);                                          \
  template Tensor<T> mean(const Tensor<T>&, std::size_t, bool);                       \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&, bool);                   \
  template Tensor<T> causal_mask(const Tensor<T>&);

CTXSCALE_INSTANTIATE_ELEMENTWISE(float)
CTXSCALE_INSTANTIATE_ELEMENTWISE(double)

}  // namespace ctxscale::numerics
