#include <algorithm>
#include <array>
#include <memory>
#include <numeric>

#include "ctxscale/numerics/ops.hpp"

namespace ctxscale::numerics {

namespace {

using detail::make_result;
using detail::Node;

// outer x len x inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit out;
  for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
  out.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
  return out;
}

}  // namespace

std::size_t patch_count(std::size_t length, std::size_t patch_len, std::size_t stride) {
  if (patch_len == 0 || stride == 0) throw ContractError("patch length and stride must be positive");
  if (patch_len > length + stride) {
    throw ContractError("patch length " + std::to_string(patch_len) + " exceeds padded length " +
                        std::to_string(length + stride));
  }
  return (length + stride - patch_len) / stride + 1;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  auto av = a.values();
  return make_result<T>(std::move(shape), std::vector<T>(av.begin(), av.end()), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order) {
  const auto& s = a.shape();
  const std::size_t rank = s.size();
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(rank);
  std::iota(iota.begin(), iota.end(), 0);
  if (sorted != iota) throw DimensionError("permute: order is not a permutation of the axes of " + to_string(s));

  std::array<std::size_t, kMaxRank> in_stride{};
  std::size_t st = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_stride[i] = st;
    st *= s[i];
  }
  Shape out_shape(rank);
  std::array<std::size_t, kMaxRank> step{};
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = s[order[i]];
    step[i] = in_stride[order[i]];
  }
  const std::size_t total = numel(s);
  auto source = std::make_shared<std::vector<std::size_t>>(total);
  std::array<std::size_t, kMaxRank> idx{};
  std::size_t offset = 0;
  for (std::size_t i = 0; i < total; ++i) {
    (*source)[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      offset += step[d];
      if (++idx[d] < out_shape[d]) break;
      offset -= step[d] * idx[d];
      idx[d] = 0;
    }
  }
  auto av = a.values();
  std::vector<T> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = av[(*source)[i]];
  return make_result<T>(std::move(out_shape), std::move(out), {a.node()}, [source](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < source->size(); ++i) p.grad[(*source)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t axis0, std::size_t axis1) {
  std::vector<std::size_t> order(a.rank());
  std::iota(order.begin(), order.end(), 0);
  if (axis0 >= order.size() || axis1 >= order.size()) {
    throw DimensionError("transpose: axes out of range for " + to_string(a.shape()));
  }
  std::swap(order[axis0], order[axis1]);
  return permute(a, order);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " invalid for " + to_string(s));
  }
  const auto sp = split_at(s, axis);
  const std::size_t width = end - begin;
  Shape out_shape = s;
  out_shape[axis] = width;
  auto av = a.values();
  std::vector<T> out(sp.outer * width * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const T* src = av.data() + (o * sp.len + begin) * sp.inner;
    std::copy(src, src + width * sp.inner, out.begin() + static_cast<std::ptrdiff_t>(o * width * sp.inner));
  }
  return make_result<T>(std::move(out_shape), std::move(out), {a.node()}, [sp, begin, width](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      T* dst = p.grad.data() + (o * sp.len + begin) * sp.inner;
      const T* g = self.grad.data() + o * width * sp.inner;
      for (std::size_t i = 0; i < width * sp.inner; ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + to_string(first));
  std::vector<std::size_t> widths;
  std::size_t total_len = 0;
  for (const auto& part : parts) {
    Shape s = part.shape();
    if (s.size() != first.size()) {
      throw DimensionError("concat: rank mismatch " + to_string(first) + " vs " + to_string(s));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw DimensionError("concat: shape mismatch " + to_string(first) + " vs " + to_string(s));
      }
    }
    widths.push_back(s[axis]);
    total_len += s[axis];
  }
  auto sp = split_at(first, axis);
  Shape out_shape = first;
  out_shape[axis] = total_len;
  std::vector<T> out(sp.outer * total_len * sp.inner);
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::size_t at = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    const std::size_t w = widths[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(pv.begin() + static_cast<std::ptrdiff_t>(o * w), pv.begin() + static_cast<std::ptrdiff_t>((o + 1) * w),
                out.begin() + static_cast<std::ptrdiff_t>((o * total_len + at) * sp.inner));
    }
    at += widths[k];
    parents.push_back(parts[k].node());
  }
  return make_result<T>(std::move(out_shape), std::move(out), std::move(parents),
                        [sp, widths, total_len](Node<T>& self) {
                          std::size_t offset = 0;
                          for (std::size_t k = 0; k < self.parents.size(); ++k) {
                            auto& p = *self.parents[k];
                            const std::size_t w = widths[k] * sp.inner;
                            if (p.requires_grad) {
                              p.ensure_grad();
                              for (std::size_t o = 0; o < sp.outer; ++o) {
                                const T* g = self.grad.data() + (o * total_len + offset) * sp.inner;
                                T* dst = p.grad.data() + o * w;
                                for (std::size_t i = 0; i < w; ++i) dst[i] += g[i];
                              }
                            }
                            offset += widths[k];
                          }
                        });
}

template <typename T>
Tensor<T> unfold_patches(const Tensor<T>& x, std::size_t patch_len, std::size_t stride) {
  const auto& s = x.shape();
  if (s.size() != 2) throw DimensionError("unfold_patches expects (rows, length), got " + to_string(s));
  const std::size_t rows = s[0];
  const std::size_t length = s[1];
  if (length == 0) throw DimensionError("unfold_patches on empty sequence");
  const std::size_t count = patch_count(length, patch_len, stride);
  auto xv = x.values();
  std::vector<T> out(rows * count * patch_len);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * length;
    for (std::size_t n = 0; n < count; ++n) {
      for (std::size_t p = 0; p < patch_len; ++p) {
        out[(r * count + n) * patch_len + p] = row[std::min(n * stride + p, length - 1)];
      }
    }
  }
  return make_result<T>(Shape{rows, count, patch_len}, std::move(out), {x.node()},
                        [rows, length, count, patch_len, stride](Node<T>& self) {
                          auto& p = *self.parents[0];
                          p.ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t n = 0; n < count; ++n) {
                              for (std::size_t q = 0; q < patch_len; ++q) {
                                p.grad[r * length + std::min(n * stride + q, length - 1)] +=
                                    self.grad[(r * count + n) * patch_len + q];
                              }
                            }
                          }
                        });
}

#define CTXSCALE_INSTANTIATE_LAYOUT(T)                                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                   \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);         \
  template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);              \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);     \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                 \
  template Tensor<T> unfold_patches(const Tensor<T>&, std::size_t, std::size_t);

CTXSCALE_INSTANTIATE_LAYOUT(float)
CTXSCALE_INSTANTIATE_LAYOUT(double)

}  // namespace ctxscale::numerics
