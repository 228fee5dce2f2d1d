#pragma once

#include <cmath>
#include <vector>

#include "micshift/tensor/diff_tensor.hpp"

namespace micshift::tensor {

/// Which elements of an [N, C, H, W] tensor share statistics. H is the
/// frequency axis for spectrogram feature maps.
enum class NormAxes {
  kInstance,             // per (n, c) over H×W
  kBatch,                // per c over N×H×W
  kFrequency,            // per (n, h) over C×W
  kFrequencyPerChannel,  // per (n, c, h) over W
};

/// Statistics groups of a rank-4 tensor. Every contiguous W-row belongs to
/// exactly one group, so traversal is a sequence of (group, row) runs.
struct NormGroups {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  NormAxes axes = NormAxes::kInstance;
  std::size_t n_groups = 0;
  std::size_t group_size = 0;

  std::size_t group_of_row(std::size_t in, std::size_t ic, std::size_t ih) const {
    switch (axes) {
      case NormAxes::kInstance: return in * c + ic;
      case NormAxes::kBatch: return ic;
      case NormAxes::kFrequency: return in * h + ih;
      case NormAxes::kFrequencyPerChannel: return (in * c + ic) * h + ih;
    }
    return 0;
  }

  /// fn(group, offset) for every W-row, in memory order.
  template <typename Fn>
  void for_each_row(Fn&& fn) const {
    std::size_t off = 0;
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t ic = 0; ic < c; ++ic) {
        for (std::size_t ih = 0; ih < h; ++ih, off += w) fn(group_of_row(in, ic, ih), off);
      }
    }
  }
};

inline NormGroups norm_groups(const Shape& s, NormAxes axes) {
  require(s.size() == 4, "ShapeMismatch", "normalization expects rank-4 input, got " + shape_str(s));
  NormGroups g;
  g.n = s[0], g.c = s[1], g.h = s[2], g.w = s[3];
  g.axes = axes;
  switch (axes) {
    case NormAxes::kInstance: g.n_groups = g.n * g.c; break;
    case NormAxes::kBatch: g.n_groups = g.c; break;
    case NormAxes::kFrequency: g.n_groups = g.n * g.h; break;
    case NormAxes::kFrequencyPerChannel: g.n_groups = g.n * g.c * g.h; break;
  }
  g.group_size = g.n_groups ? numel(s) / g.n_groups : 0;
  return g;
}

template <typename T>
struct GroupStats {
  std::vector<T> mean, var;
};

template <typename T>
GroupStats<T> group_stats(const std::vector<T>& x, const NormGroups& g) {
  GroupStats<T> st{std::vector<T>(g.n_groups, T(0)), std::vector<T>(g.n_groups, T(0))};
  g.for_each_row([&](std::size_t k, std::size_t off) {
    T acc = 0;
    for (std::size_t i = 0; i < g.w; ++i) acc += x[off + i];
    st.mean[k] += acc;
  });
  for (auto& m : st.mean) m /= static_cast<T>(g.group_size);
  g.for_each_row([&](std::size_t k, std::size_t off) {
    const T m = st.mean[k];
    T acc = 0;
    for (std::size_t i = 0; i < g.w; ++i) acc += (x[off + i] - m) * (x[off + i] - m);
    st.var[k] += acc;
  });
  for (auto& v : st.var) v /= static_cast<T>(g.group_size);
  return st;
}

/// (x − mean) / sqrt(var + eps) with biased variance over each group.
/// If `stats_out` is given, the batch statistics are written there.
template <typename T>
DiffTensor<T> standardize(const DiffTensor<T>& x, NormAxes axes, T eps, GroupStats<T>* stats_out = nullptr) {
  const NormGroups groups = norm_groups(x.shape(), axes);
  require(!(groups.group_size <= 1 && eps == T(0)), "DegenerateNorm",
          "normalization over a single element with eps = 0 is undefined");
  auto st = group_stats(x.storage(), groups);
  std::vector<T> inv_std(groups.n_groups);
  for (std::size_t k = 0; k < inv_std.size(); ++k) {
    require(st.var[k] + eps > T(0), "DegenerateNorm", "zero-variance group with eps = 0");
    inv_std[k] = T(1) / std::sqrt(st.var[k] + eps);
  }
  std::vector<T> y(x.size());
  groups.for_each_row([&](std::size_t k, std::size_t off) {
    const T m = st.mean[k], is = inv_std[k];
    for (std::size_t i = 0; i < groups.w; ++i) y[off + i] = (x.storage()[off + i] - m) * is;
  });
  if (stats_out) *stats_out = st;
  return detail::make_result<T>(
      "standardize", x.shape(), std::move(y), {&x}, [x, groups, inv_std = std::move(inv_std)](Node<T>* o) {
        return [o, xn = x.node(), groups, inv_std] {
          // dx = inv_std · (dy − mean(dy) − y · mean(dy · y)) per group
          const auto& y = o->data;
          const auto& dy = o->grad;
          std::vector<T> m_dy(groups.n_groups, T(0)), m_dyy(groups.n_groups, T(0));
          groups.for_each_row([&](std::size_t k, std::size_t off) {
            T a = 0, b = 0;
            for (std::size_t i = 0; i < groups.w; ++i) {
              a += dy[off + i];
              b += dy[off + i] * y[off + i];
            }
            m_dy[k] += a;
            m_dyy[k] += b;
          });
          const T inv_n = T(1) / static_cast<T>(groups.group_size);
          auto& g = xn->ensure_grad();
          groups.for_each_row([&](std::size_t k, std::size_t off) {
            const T is = inv_std[k], a = m_dy[k] * inv_n, b = m_dyy[k] * inv_n;
            for (std::size_t i = 0; i < groups.w; ++i) g[off + i] += is * (dy[off + i] - a - y[off + i] * b);
          });
        };
      });
}

/// y[n, c, ...] = x[n, c, ...] · gamma[c] + beta[c]. Either parameter may be
/// undefined (treated as 1 / 0).
template <typename T>
DiffTensor<T> channel_affine(const DiffTensor<T>& x, const DiffTensor<T>& gamma, const DiffTensor<T>& beta) {
  require(x.rank() >= 2, "ShapeMismatch", "channel_affine expects rank >= 2");
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
  require(!gamma.defined() || gamma.size() == c, "ShapeMismatch", "channel_affine: gamma size");
  require(!beta.defined() || beta.size() == c, "ShapeMismatch", "channel_affine: beta size");
  std::vector<T> y(x.size());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T ga = gamma.defined() ? gamma.storage()[ch] : T(1);
      const T be = beta.defined() ? beta.storage()[ch] : T(0);
      const std::size_t base = (s * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) y[base + i] = x.storage()[base + i] * ga + be;
    }
  }
  return detail::make_result<T>(
      "channel_affine", x.shape(), std::move(y), {&x, &gamma, &beta}, [x, gamma, beta, n, c, inner](Node<T>* o) {
        return [o, xn = x.node(), gn = gamma.defined() ? gamma.node() : nullptr,
                bn = beta.defined() ? beta.node() : nullptr, n, c, inner] {
          for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t base = (s * c + ch) * inner;
              const T ga = gn ? gn->data[ch] : T(1);
              T sg = 0, sgx = 0;
              for (std::size_t i = 0; i < inner; ++i) {
                sg += o->grad[base + i];
                sgx += o->grad[base + i] * xn->data[base + i];
              }
              if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                for (std::size_t i = 0; i < inner; ++i) gx[base + i] += o->grad[base + i] * ga;
              }
              if (gn && gn->requires_grad) gn->ensure_grad()[ch] += sgx;
              if (bn && bn->requires_grad) bn->ensure_grad()[ch] += sg;
            }
          }
        };
      });
}

/// Blend a·x + (1 − a)·y of two same-shape tensors.
template <typename T>
DiffTensor<T> lerp(const DiffTensor<T>& x, const DiffTensor<T>& y, T a) {
  require_same_shape(x, y, "lerp");
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.storage()[i] + (T(1) - a) * y.storage()[i];
  return detail::make_result<T>("lerp", x.shape(), std::move(out), {&x, &y}, [x, y, a](Node<T>* o) {
    return [o, xn = x.node(), yn = y.node(), a] {
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += a * o->grad[i];
      }
      if (yn->requires_grad) {
        auto& g = yn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (T(1) - a) * o->grad[i];
      }
    };
  });
}

}  // namespace micshift::tensor
