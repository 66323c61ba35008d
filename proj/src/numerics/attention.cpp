#include "ctxscale/numerics/attention.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <memory>

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

struct Dims {
  std::size_t slices, queries, keys, head_dim, value_dim;
};

}  // namespace

// Fused kernel: only the softmax weights are kept for the backward pass.
template <typename T>
AttentionOutput<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        const AttentionOptions& options) {
  const auto& sq = q.shape();
  const auto& sk = k.shape();
  const auto& sv = v.shape();
  const std::size_t rank = sq.size();
  if (rank < 3 || rank > 4 || sk.size() != rank || sv.size() != rank) {
    throw DimensionError("attention expects matching rank 3 or 4 inputs, got q " + to_string(sq) + ", k " +
                         to_string(sk) + ", v " + to_string(sv));
  }
  if (sq.back() != sk.back()) {
    throw DimensionError("attention head dimension mismatch: q " + to_string(sq) + " vs k " + to_string(sk));
  }
  if (sk[rank - 2] != sv[rank - 2]) {
    throw DimensionError("attention key/value length mismatch: k " + to_string(sk) + " vs v " + to_string(sv));
  }
  for (std::size_t i = 0; i + 2 < rank; ++i) {
    if (sq[i] != sk[i] || sq[i] != sv[i]) {
      throw DimensionError("attention batch/head dimensions differ: q " + to_string(sq) + ", k " + to_string(sk) +
                           ", v " + to_string(sv));
    }
  }
  Dims dims{1, sq[rank - 2], sk[rank - 2], sq.back(), sv.back()};
  for (std::size_t i = 0; i + 2 < rank; ++i) dims.slices *= sq[i];

  T factor = T(1) / std::sqrt(static_cast<T>(dims.head_dim));
  if (std::isinf(options.temperature)) {
    factor = T(0);
  } else {
    factor /= static_cast<T>(options.temperature);
  }

  const auto lq = static_cast<Eigen::Index>(dims.queries);
  const auto lk = static_cast<Eigen::Index>(dims.keys);
  const auto hd = static_cast<Eigen::Index>(dims.head_dim);
  const auto vd = static_cast<Eigen::Index>(dims.value_dim);
  const std::size_t per_p = dims.queries * dims.keys;
  auto probs = std::make_shared<std::vector<T>>(dims.slices * per_p);
  std::vector<T> out(dims.slices * dims.queries * dims.value_dim);
  auto qv = q.values();
  auto kv = k.values();
  auto vv = v.values();
  for (std::size_t s = 0; s < dims.slices; ++s) {
    MutMap<T> p(probs->data() + s * per_p, lq, lk);
    p.noalias() = ConstMap<T>(qv.data() + s * dims.queries * dims.head_dim, lq, hd) *
                  ConstMap<T>(kv.data() + s * dims.keys * dims.head_dim, lk, hd).transpose();
    for (Eigen::Index i = 0; i < lq; ++i) {
      T* row = p.row(i).data();
      const Eigen::Index allowed = options.causal ? std::min<Eigen::Index>(i + 1, lk) : lk;
      T hi = -std::numeric_limits<T>::infinity();
      for (Eigen::Index j = 0; j < allowed; ++j) {
        row[j] *= factor;
        if (std::isnan(row[j])) throw NumericError("attention: NaN score");
        hi = std::max(hi, row[j]);
      }
      if (!std::isfinite(hi)) throw NumericError("attention: no finite score in row");
      T total = T(0);
      for (Eigen::Index j = 0; j < allowed; ++j) {
        row[j] = std::exp(row[j] - hi);
        total += row[j];
      }
      const T inv = T(1) / total;
      for (Eigen::Index j = 0; j < allowed; ++j) row[j] *= inv;
      for (Eigen::Index j = allowed; j < lk; ++j) row[j] = T(0);
    }
    MutMap<T>(out.data() + s * dims.queries * dims.value_dim, lq, vd).noalias() =
        p * ConstMap<T>(vv.data() + s * dims.keys * dims.value_dim, lk, vd);
  }

  AttentionOutput<T> result;
  if (options.record) {
    const std::size_t batch = rank == 4 ? sq[0] : 1;
    const std::size_t heads = sq[rank - 3];
    const std::size_t per = heads * per_p;
    for (std::size_t b = 0; b < batch; ++b) {
      AttentionMap map;
      map.layer_index = options.layer_index;
      map.heads = heads;
      map.queries = dims.queries;
      map.keys = dims.keys;
      map.weights.assign(probs->begin() + static_cast<std::ptrdiff_t>(b * per),
                         probs->begin() + static_cast<std::ptrdiff_t>((b + 1) * per));
      result.maps.push_back(std::move(map));
    }
  }

  Shape out_shape(sq.begin(), sq.end() - 1);
  out_shape.push_back(dims.value_dim);
  result.output = make_result<T>(
      std::move(out_shape), std::move(out), {q.node(), k.node(), v.node()},
      [probs, dims, factor, lq, lk, hd, vd](Node<T>& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pv = *self.parents[2];
        if (pq.requires_grad) pq.ensure_grad();
        if (pk.requires_grad) pk.ensure_grad();
        if (pv.requires_grad) pv.ensure_grad();
        const std::size_t per_p = dims.queries * dims.keys;
        RowMat<T> dp(lq, lk);
        for (std::size_t s = 0; s < dims.slices; ++s) {
          ConstMap<T> p(probs->data() + s * per_p, lq, lk);
          ConstMap<T> g(self.grad.data() + s * dims.queries * dims.value_dim, lq, vd);
          const std::size_t oq = s * dims.queries * dims.head_dim;
          const std::size_t ok = s * dims.keys * dims.head_dim;
          const std::size_t ov = s * dims.keys * dims.value_dim;
          if (pv.requires_grad) MutMap<T>(pv.grad.data() + ov, lk, vd).noalias() += p.transpose() * g;
          if (!pq.requires_grad && !pk.requires_grad) continue;
          dp.noalias() = g * ConstMap<T>(pv.value.data() + ov, lk, vd).transpose();
          for (Eigen::Index i = 0; i < lq; ++i) {
            const T dot = dp.row(i).dot(p.row(i));
            dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix() * factor;
          }
          if (pq.requires_grad) {
            MutMap<T>(pq.grad.data() + oq, lq, hd).noalias() += dp * ConstMap<T>(pk.value.data() + ok, lk, hd);
          }
          if (pk.requires_grad) {
            MutMap<T>(pk.grad.data() + ok, lk, hd).noalias() +=
                dp.transpose() * ConstMap<T>(pq.value.data() + oq, lq, hd);
          }
        }
      });
  return result;
}

template AttentionOutput<float> scaled_dot_attention(const Tensor<float>&, const Tensor<float>&,
                                                     const Tensor<float>&, const AttentionOptions&);
template AttentionOutput<double> scaled_dot_attention(const Tensor<double>&, const Tensor<double>&,
                                                      const Tensor<double>&, const AttentionOptions&);

}  // namespace ctxscale::numerics
