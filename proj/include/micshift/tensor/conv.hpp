#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "micshift/core/parallel.hpp"
#include "micshift/tensor/diff_tensor.hpp"

namespace micshift::tensor {

enum class PadMode { kZero, kReflect };

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
};

namespace detail {

/// Separable source-coordinate maps: for kernel offset k and output position
/// o, the input coordinate along one axis (or -1 for a zero-padded tap).
struct AxisMap {
  std::vector<long> src;  // [k * out + o]
  std::vector<std::size_t> lo, hi;  // per k: outputs in [lo, hi) map to o*stride + k - pad directly
};

struct ConvTable {
  AxisMap rows, cols;
};

inline AxisMap axis_map(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
                        PadMode mode) {
  AxisMap m;
  m.src.resize(k * out);
  m.lo.resize(k);
  m.hi.resize(k);
  const long n = static_cast<long>(in);
  auto reflect = [n](long i) {
    if (n == 1) return 0L;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  for (std::size_t kk = 0; kk < k; ++kk) {
    std::size_t lo = out, hi = 0;
    for (std::size_t o = 0; o < out; ++o) {
      const long c = static_cast<long>(o * stride + kk) - static_cast<long>(pad);
      const bool inside = c >= 0 && c < n;
      m.src[kk * out + o] = inside ? c : (mode == PadMode::kReflect ? reflect(c) : -1);
      if (inside) {
        lo = std::min(lo, o);
        hi = std::max(hi, o + 1);
      }
    }
    m.lo[kk] = lo < hi ? lo : 0;
    m.hi[kk] = lo < hi ? hi : 0;
  }
  return m;
}

inline ConvTable conv_table(const ConvGeometry& g, PadMode mode) {
  return {axis_map(g.h, g.ho, g.kh, g.stride, g.pad, mode), axis_map(g.w, g.wo, g.kw, g.stride, g.pad, mode)};
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, const ConvTable& t, T* col) {
  const std::size_t hw_out = g.ho * g.wo, hw_in = g.h * g.w;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * hw_in;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* dst = col + ((c * g.kh + ki) * g.kw + kj) * hw_out;
        const long* cmap = t.cols.src.data() + kj * g.wo;
        const std::size_t lo = t.cols.lo[kj], hi = t.cols.hi[kj];
        const long base = static_cast<long>(lo * g.stride + kj) - static_cast<long>(g.pad);
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          T* d = dst + oi * g.wo;
          const long y = t.rows.src[ki * g.ho + oi];
          if (y < 0) {
            std::fill(d, d + g.wo, T(0));
            continue;
          }
          const T* row = xc + y * static_cast<long>(g.w);
          for (std::size_t oj = 0; oj < lo; ++oj) d[oj] = cmap[oj] >= 0 ? row[cmap[oj]] : T(0);
          if (g.stride == 1) {
            std::copy(row + base, row + base + static_cast<long>(hi - lo), d + lo);
          } else {
            const T* r = row + base;
            for (std::size_t oj = lo; oj < hi; ++oj, r += g.stride) d[oj] = *r;
          }
          for (std::size_t oj = hi; oj < g.wo; ++oj) d[oj] = cmap[oj] >= 0 ? row[cmap[oj]] : T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, const ConvTable& t, T* dx) {
  const std::size_t hw_out = g.ho * g.wo, hw_in = g.h * g.w;
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* dxc = dx + c * hw_in;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* src = col + ((c * g.kh + ki) * g.kw + kj) * hw_out;
        const long* cmap = t.cols.src.data() + kj * g.wo;
        const std::size_t lo = t.cols.lo[kj], hi = t.cols.hi[kj];
        const long base = static_cast<long>(lo * g.stride + kj) - static_cast<long>(g.pad);
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long y = t.rows.src[ki * g.ho + oi];
          if (y < 0) continue;
          const T* s = src + oi * g.wo;
          T* row = dxc + y * static_cast<long>(g.w);
          for (std::size_t oj = 0; oj < lo; ++oj) {
            if (cmap[oj] >= 0) row[cmap[oj]] += s[oj];
          }
          if (g.stride == 1) {
            T* __restrict r = row + base;
            const T* __restrict q = s + lo;
            const std::size_t len = hi - lo;
            for (std::size_t i = 0; i < len; ++i) r[i] += q[i];
          } else {
            T* r = row + base;
            for (std::size_t oj = lo; oj < hi; ++oj, r += g.stride) *r += s[oj];
          }
          for (std::size_t oj = hi; oj < g.wo; ++oj) {
            if (cmap[oj] >= 0) row[cmap[oj]] += s[oj];
          }
        }
      }
    }
  }
}

/// Visits every (output row, input row) pair of one kernel tap and calls
/// fn(out_offset, in_offset, len, stride) for contiguous interior runs and
/// fn(out_offset, in_offset, 1, 1) for padded edge taps.
template <typename Fn>
void for_each_tap_run(const ConvGeometry& g, const ConvTable& t, std::size_t ki, std::size_t kj, Fn&& fn) {
  const long* cmap = t.cols.src.data() + kj * g.wo;
  const std::size_t lo = t.cols.lo[kj], hi = t.cols.hi[kj];
  const long base = static_cast<long>(lo * g.stride + kj) - static_cast<long>(g.pad);
  for (std::size_t oi = 0; oi < g.ho; ++oi) {
    const long y = t.rows.src[ki * g.ho + oi];
    if (y < 0) continue;
    const std::size_t orow = oi * g.wo;
    const std::size_t irow = static_cast<std::size_t>(y) * g.w;
    for (std::size_t oj = 0; oj < lo; ++oj) {
      if (cmap[oj] >= 0) fn(orow + oj, irow + static_cast<std::size_t>(cmap[oj]), 1, 1);
    }
    if (hi > lo) fn(orow + lo, irow + static_cast<std::size_t>(base), hi - lo, g.stride);
    for (std::size_t oj = hi; oj < g.wo; ++oj) {
      if (cmap[oj] >= 0) fn(orow + oj, irow + static_cast<std::size_t>(cmap[oj]), 1, 1);
    }
  }
}

/// Direct (im2col-free) convolution of one sample; used when there are few
/// output channels and the GEMM would degenerate to a matrix-vector product.
template <typename T>
void direct_forward(const T* x, const T* w, const ConvGeometry& g, const ConvTable& t, T* out) {
  const std::size_t hw_in = g.h * g.w, hw_out = g.ho * g.wo;
  for (std::size_t co = 0; co < g.cout; ++co) {
    T* __restrict o = out + co * hw_out;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const T* __restrict xc = x + ci * hw_in;
      for (std::size_t ki = 0; ki < g.kh; ++ki) {
        for (std::size_t kj = 0; kj < g.kw; ++kj) {
          const T wv = w[((co * g.cin + ci) * g.kh + ki) * g.kw + kj];
          for_each_tap_run(g, t, ki, kj, [&](std::size_t oo, std::size_t io, std::size_t len, std::size_t st) {
            if (st == 1) {
              for (std::size_t i = 0; i < len; ++i) o[oo + i] += wv * xc[io + i];
            } else {
              for (std::size_t i = 0; i < len; ++i) o[oo + i] += wv * xc[io + i * st];
            }
          });
        }
      }
    }
  }
}

template <typename T>
void direct_backward(const T* x, const T* w, const T* dy, const ConvGeometry& g, const ConvTable& t, T* dx, T* dw) {
  const std::size_t hw_in = g.h * g.w, hw_out = g.ho * g.wo;
  for (std::size_t co = 0; co < g.cout; ++co) {
    const T* __restrict d = dy + co * hw_out;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const T* __restrict xc = x + ci * hw_in;
      T* __restrict gx = dx ? dx + ci * hw_in : nullptr;
      for (std::size_t ki = 0; ki < g.kh; ++ki) {
        for (std::size_t kj = 0; kj < g.kw; ++kj) {
          const std::size_t widx = ((co * g.cin + ci) * g.kh + ki) * g.kw + kj;
          const T wv = w[widx];
          T acc = 0;
          for_each_tap_run(g, t, ki, kj, [&](std::size_t oo, std::size_t io, std::size_t len, std::size_t st) {
            if (st == 1) {
              acc += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(d + oo, static_cast<Eigen::Index>(len))
                         .dot(Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(xc + io, static_cast<Eigen::Index>(len)));
              if (gx) {
                for (std::size_t i = 0; i < len; ++i) gx[io + i] += wv * d[oo + i];
              }
            } else {
              for (std::size_t i = 0; i < len; ++i) acc += d[oo + i] * xc[io + i * st];
              if (gx) {
                for (std::size_t i = 0; i < len; ++i) gx[io + i * st] += wv * d[oo + i];
              }
            }
          });
          if (dw) dw[widx] += acc;
        }
      }
    }
  }
}

inline constexpr std::size_t kDirectMaxCout = 4;

/// Per-thread scratch buffer reused across calls.
template <typename T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[2];
  return buffers[slot];
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  require(in + 2 * pad >= k, "ShapeMismatch", "kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

/// Cross-correlation of x[N, Cin, H, W] with w[Cout, Cin, kh, kw], optional
/// bias[Cout]. Reflect padding requires pad < H and pad < W.
template <typename T>
DiffTensor<T> conv2d(const DiffTensor<T>& x, const DiffTensor<T>& w, const DiffTensor<T>& b, std::size_t stride,
                     std::size_t pad, PadMode mode = PadMode::kZero) {
  require(x.rank() == 4 && w.rank() == 4, "ShapeMismatch", "conv2d expects rank-4 input and kernel");
  require(x.dim(1) == w.dim(1), "ShapeMismatch",
          "conv2d: input channels " + shape_str(x.shape()) + " vs kernel " + shape_str(w.shape()));
  require(stride >= 1, "InvalidArgument", "conv2d: stride must be >= 1");
  require(!b.defined() || (b.rank() == 1 && b.dim(0) == w.dim(0)), "ShapeMismatch", "conv2d: bad bias shape");
  require(mode == PadMode::kZero || (pad < x.dim(2) && pad < x.dim(3)), "ShapeMismatch",
          "conv2d: reflect padding must be smaller than the input");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, pad, 0, 0};
  g.ho = conv_out_size(g.h, g.kh, stride, pad);
  g.wo = conv_out_size(g.w, g.kw, stride, pad);
  auto table = std::make_shared<const detail::ConvTable>(detail::conv_table(g, mode));

  const std::size_t kdim = g.cin * g.kh * g.kw, hw_out = g.ho * g.wo;
  std::vector<T> out(g.n * g.cout * hw_out);
  {
    Eigen::Map<const detail::RowMat<T>> wm(w.storage().data(), g.cout, kdim);
    parallel_for(g.n, [&](std::size_t s) {
      if (g.cout <= detail::kDirectMaxCout) {
        T* o = out.data() + s * g.cout * hw_out;
        for (std::size_t c = 0; c < g.cout; ++c) std::fill(o + c * hw_out, o + (c + 1) * hw_out, b.defined() ? b.storage()[c] : T(0));
        detail::direct_forward(x.storage().data() + s * g.cin * g.h * g.w, w.storage().data(), g, *table, o);
        return;
      }
      auto& col = detail::scratch<T>(0);
      col.resize(kdim * hw_out);
      detail::im2col(x.storage().data() + s * g.cin * g.h * g.w, g, *table, col.data());
      Eigen::Map<const detail::RowMat<T>> cm(col.data(), kdim, hw_out);
      Eigen::Map<detail::RowMat<T>> om(out.data() + s * g.cout * hw_out, g.cout, hw_out);
      om.noalias() = wm * cm;
      if (b.defined()) {
        for (std::size_t c = 0; c < g.cout; ++c) om.row(c).array() += b.storage()[c];
      }
    });
  }

  return detail::make_result<T>(
      "conv2d", Shape{g.n, g.cout, g.ho, g.wo}, std::move(out), {&x, &w, &b}, [x, w, b, g, table](Node<T>* o) {
        return [o, xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, g, table] {
          const std::size_t kdim = g.cin * g.kh * g.kw, hw_out = g.ho * g.wo, in_sz = g.cin * g.h * g.w;
          const bool need_x = xn->requires_grad, need_w = wn->requires_grad;
          Eigen::Map<const detail::RowMat<T>> wm(wn->data.data(), g.cout, kdim);
          std::vector<T> dw_parts(need_w ? g.n * g.cout * kdim : 0);
          if (need_x) xn->ensure_grad();
          parallel_for(g.n, [&](std::size_t s) {
            if (g.cout <= detail::kDirectMaxCout) {
              if (need_w) std::fill(dw_parts.begin() + s * g.cout * kdim, dw_parts.begin() + (s + 1) * g.cout * kdim, T(0));
              detail::direct_backward(xn->data.data() + s * in_sz, wn->data.data(), o->grad.data() + s * g.cout * hw_out,
                                      g, *table, need_x ? xn->grad.data() + s * in_sz : nullptr,
                                      need_w ? dw_parts.data() + s * g.cout * kdim : nullptr);
              return;
            }
            Eigen::Map<const detail::RowMat<T>> gm(o->grad.data() + s * g.cout * hw_out, g.cout, hw_out);
            if (need_w) {
              auto& col = detail::scratch<T>(0);
              col.resize(kdim * hw_out);
              detail::im2col(xn->data.data() + s * in_sz, g, *table, col.data());
              Eigen::Map<const detail::RowMat<T>> cm(col.data(), kdim, hw_out);
              Eigen::Map<detail::RowMat<T>> dwm(dw_parts.data() + s * g.cout * kdim, g.cout, kdim);
              dwm.noalias() = gm * cm.transpose();
            }
            if (need_x) {
              auto& dcol = detail::scratch<T>(1);
              dcol.resize(kdim * hw_out);
              Eigen::Map<detail::RowMat<T>> dm(dcol.data(), kdim, hw_out);
              dm.noalias() = wm.transpose() * gm;
              detail::col2im(dcol.data(), g, *table, xn->grad.data() + s * in_sz);
            }
          });
          if (need_w) {
            auto& gw = wn->ensure_grad();
            for (std::size_t s = 0; s < g.n; ++s) {
              const T* part = dw_parts.data() + s * g.cout * kdim;
              for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += part[i];
            }
          }
          if (bn && bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::size_t s = 0; s < g.n; ++s) {
              for (std::size_t c = 0; c < g.cout; ++c) {
                const T* go = o->grad.data() + (s * g.cout + c) * hw_out;
                T acc = 0;
                for (std::size_t p = 0; p < hw_out; ++p) acc += go[p];
                gb[c] += acc;
              }
            }
          }
        };
      });
}

template <typename T>
DiffTensor<T> conv2d(const DiffTensor<T>& x, const DiffTensor<T>& w, std::size_t stride, std::size_t pad,
                     PadMode mode = PadMode::kZero) {
  return conv2d(x, w, DiffTensor<T>(), stride, pad, mode);
}

}  // namespace micshift::tensor
