#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>

#include "ctxscale/numerics/ops.hpp"

namespace ctxscale::numerics {

namespace {

using detail::make_result;
using detail::Node;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

struct BatchPairs {
  Shape batch;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

// Pairs each output batch slot with an (a, b) batch slot under broadcasting.
BatchPairs plan_batches(const Shape& sa, const Shape& sb, const Shape& full_a, const Shape& full_b) {
  const std::size_t rank = std::max(sa.size(), sb.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(sa.begin(), sa.end(), pa.begin() + (rank - sa.size()));
  std::copy(sb.begin(), sb.end(), pb.begin() + (rank - sb.size()));
  BatchPairs out;
  out.batch.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError("matmul: batch dimensions of " + to_string(full_a) + " and " + to_string(full_b) +
                           " do not broadcast");
    }
    out.batch[i] = std::max(pa[i], pb[i]);
  }
  const std::size_t total = numel(out.batch);
  std::array<std::size_t, kMaxRank> idx{};
  for (std::size_t t = 0; t < total; ++t) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      ia = ia * pa[d] + (pa[d] == 1 ? 0 : idx[d]);
      ib = ib * pb[d] + (pb[d] == 1 ? 0 : idx[d]);
    }
    out.a_index.push_back(ia);
    out.b_index.push_back(ib);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out.batch[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(sa) + " and " + to_string(sb));
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb[sb.size() - 1];
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions differ for " + to_string(sa) + " and " + to_string(sb));
  }
  const auto em = static_cast<Eigen::Index>(m);
  const auto ek = static_cast<Eigen::Index>(k);
  const auto en = static_cast<Eigen::Index>(n);

  // Shared right operand: fold a's batch into rows and do one product.
  if (sb.size() == 2) {
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    const auto rows = static_cast<Eigen::Index>(numel(sa) / k);
    std::vector<T> out(static_cast<std::size_t>(rows) * n);
    MutMap<T>(out.data(), rows, en).noalias() = ConstMap<T>(a.values().data(), rows, ek) *
                                                ConstMap<T>(b.values().data(), ek, en);
    return make_result<T>(std::move(out_shape), std::move(out), {a.node(), b.node()},
                          [rows, ek, en](Node<T>& self) {
                            auto& pa = *self.parents[0];
                            auto& pb = *self.parents[1];
                            ConstMap<T> g(self.grad.data(), rows, en);
                            if (pa.requires_grad) {
                              pa.ensure_grad();
                              MutMap<T>(pa.grad.data(), rows, ek).noalias() +=
                                  g * ConstMap<T>(pb.value.data(), ek, en).transpose();
                            }
                            if (pb.requires_grad) {
                              pb.ensure_grad();
                              MutMap<T>(pb.grad.data(), ek, en).noalias() +=
                                  ConstMap<T>(pa.value.data(), rows, ek).transpose() * g;
                            }
                          });
  }

  auto pairs = std::make_shared<BatchPairs>(plan_batches(Shape(sa.begin(), sa.end() - 2),
                                                         Shape(sb.begin(), sb.end() - 2), sa, sb));
  Shape out_shape = pairs->batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  const std::size_t batches = pairs->a_index.size();
  std::vector<T> out(batches * m * n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t t = 0; t < batches; ++t) {
    MutMap<T>(out.data() + t * m * n, em, en).noalias() =
        ConstMap<T>(av.data() + pairs->a_index[t] * m * k, em, ek) *
        ConstMap<T>(bv.data() + pairs->b_index[t] * k * n, ek, en);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {a.node(), b.node()},
                        [pairs, m, k, n, em, ek, en](Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad) pa.ensure_grad();
                          if (pb.requires_grad) pb.ensure_grad();
                          for (std::size_t t = 0; t < pairs->a_index.size(); ++t) {
                            ConstMap<T> g(self.grad.data() + t * m * n, em, en);
                            const std::size_t oa = pairs->a_index[t] * m * k;
                            const std::size_t ob = pairs->b_index[t] * k * n;
                            if (pa.requires_grad) {
                              MutMap<T>(pa.grad.data() + oa, em, ek).noalias() +=
                                  g * ConstMap<T>(pb.value.data() + ob, ek, en).transpose();
                            }
                            if (pb.requires_grad) {
                              MutMap<T>(pb.grad.data() + ob, ek, en).noalias() +=
                                  ConstMap<T>(pa.value.data() + oa, em, ek).transpose() * g;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const auto& s = a.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  const std::size_t len = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T hi = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < len; ++k) {
        T v = av[base + k * inner];
        if (std::isnan(v)) throw NumericError("softmax: NaN input");
        hi = std::max(hi, v);
      }
      if (!std::isfinite(hi)) throw NumericError("softmax: no finite entry along axis");
      T total = T(0);
      for (std::size_t k = 0; k < len; ++k) {
        T e = std::exp(av[base + k * inner] - hi);
        out[base + k * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] *= inv;
    }
  }
  return make_result<T>(s, std::move(out), {a.node()}, [outer, inner, len](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = T(0);
        for (std::size_t k = 0; k < len; ++k) dot += self.grad[base + k * inner] * self.value[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = base + k * inner;
          p.grad[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const auto& s = x.shape();
  if (s.empty()) throw DimensionError("layer_norm needs rank >= 1");
  const std::size_t d = s.back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain " + to_string(gamma.shape()) + " / bias " + to_string(beta.shape()) +
                         " do not match feature size of " + to_string(s));
  }
  const std::size_t rows = numel(s) / d;
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<T> out(xv.size());
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<T>(s, std::move(out), {x.node(), gamma.node(), beta.node()},
                        [xhat, rstd, rows, d](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pg = *self.parents[1];
                          auto& pb = *self.parents[2];
                          if (px.requires_grad) px.ensure_grad();
                          if (pg.requires_grad) pg.ensure_grad();
                          if (pb.requires_grad) pb.ensure_grad();
                          const T inv_d = T(1) / static_cast<T>(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* g = self.grad.data() + r * d;
                            const T* h = xhat->data() + r * d;
                            if (pg.requires_grad || pb.requires_grad) {
                              for (std::size_t j = 0; j < d; ++j) {
                                if (pg.requires_grad) pg.grad[j] += g[j] * h[j];
                                if (pb.requires_grad) pb.grad[j] += g[j];
                              }
                            }
                            if (!px.requires_grad) continue;
                            T sum_dh = T(0), sum_dh_h = T(0);
                            for (std::size_t j = 0; j < d; ++j) {
                              const T dh = g[j] * pg.value[j];
                              sum_dh += dh;
                              sum_dh_h += dh * h[j];
                            }
                            const T rs = (*rstd)[r];
                            for (std::size_t j = 0; j < d; ++j) {
                              const T dh = g[j] * pg.value[j];
                              px.grad[r * d + j] += rs * (dh - inv_d * sum_dh - h[j] * inv_d * sum_dh_h);
                            }
                          }
                        });
}

#define CTXSCALE_INSTANTIATE_LINALG(T)                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);               \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);

CTXSCALE_INSTANTIATE_LINALG(float)
CTXSCALE_INSTANTIATE_LINALG(double)

}  // namespace ctxscale::numerics
