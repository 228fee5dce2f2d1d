#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "micshift/tensor/diff_tensor.hpp"

namespace micshift::tensor {

template <typename T>
DiffTensor<T> add(const DiffTensor<T>& a, const DiffTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  const auto& x = a.storage();
  const auto& y = b.storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [a, b](Node<T>* o) {
    return [o, an = a.node(), bn = b.node()] {
      for (auto* n : {an.get(), bn.get()}) {
        if (!n->requires_grad) continue;
        auto& g = n->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
    };
  });
}

template <typename T>
DiffTensor<T> sub(const DiffTensor<T>& a, const DiffTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.storage()[i] - b.storage()[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [a, b](Node<T>* o) {
    return [o, an = a.node(), bn = b.node()] {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o->grad[i];
      }
    };
  });
}

template <typename T>
DiffTensor<T> mul(const DiffTensor<T>& a, const DiffTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.storage()[i] * b.storage()[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [a, b](Node<T>* o) {
    return [o, an = a.node(), bn = b.node()] {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * an->data[i];
      }
    };
  });
}

template <typename T>
DiffTensor<T> scale(const DiffTensor<T>& a, T s) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.storage()[i] * s;
  return detail::make_result<T>("scale", a.shape(), std::move(out), {&a}, [a, s](Node<T>* o) {
    return [o, an = a.node(), s] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * s;
    };
  });
}

template <typename T>
DiffTensor<T> add_scalar(const DiffTensor<T>& a, T s) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.storage()[i] + s;
  return detail::make_result<T>("add_scalar", a.shape(), std::move(out), {&a}, [a](Node<T>* o) {
    return [o, an = a.node()] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    };
  });
}

template <typename T>
DiffTensor<T> sum(const DiffTensor<T>& a) {
  T acc = 0;
  for (T v : a.storage()) acc += v;
  return detail::make_result<T>("sum", Shape{}, {acc}, {&a}, [a](Node<T>* o) {
    return [o, an = a.node()] {
      auto& g = an->ensure_grad();
      for (auto& v : g) v += o->grad[0];
    };
  });
}

template <typename T>
DiffTensor<T> mean(const DiffTensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
DiffTensor<T> reshape(const DiffTensor<T>& a, Shape shape) {
  require(numel(shape) == a.size(), "ShapeMismatch", "reshape to " + shape_str(shape) + " changes element count");
  return detail::make_result<T>("reshape", std::move(shape), a.storage(), {&a}, [a](Node<T>* o) {
    return [o, an = a.node()] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    };
  });
}

/// max(x, 0); the subgradient at 0 is 0.
template <typename T>
DiffTensor<T> relu(const DiffTensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.storage()[i] > T(0) ? a.storage()[i] : T(0);
  if (auto* k = detail::kink_recorder) {
    for (T v : a.storage()) k->record(v > T(0));
  }
  return detail::make_result<T>("relu", a.shape(), std::move(out), {&a}, [a](Node<T>* o) {
    return [o, an = a.node()] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += an->data[i] > T(0) ? o->grad[i] : T(0);
    };
  });
}

template <typename T>
DiffTensor<T> leaky_relu(const DiffTensor<T>& a, T slope = T(0.2)) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = a.storage()[i];
    out[i] = v > T(0) ? v : slope * v;
  }
  if (auto* k = detail::kink_recorder) {
    for (T v : a.storage()) k->record(v > T(0));
  }
  return detail::make_result<T>("leaky_relu", a.shape(), std::move(out), {&a}, [a, slope](Node<T>* o) {
    return [o, an = a.node(), slope] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * (an->data[i] > T(0) ? T(1) : slope);
    };
  });
}

/// mean |x - y|.
template <typename T>
DiffTensor<T> l1_loss(const DiffTensor<T>& x, const DiffTensor<T>& y) {
  require_same_shape(x, y, "l1_loss");
  T acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x.storage()[i] - y.storage()[i]);
  if (auto* k = detail::kink_recorder) {
    for (std::size_t i = 0; i < x.size(); ++i) k->record(x.storage()[i] > y.storage()[i]);
  }
  const T inv_n = T(1) / static_cast<T>(x.size());
  return detail::make_result<T>("l1_loss", Shape{}, {acc * inv_n}, {&x, &y}, [x, y, inv_n](Node<T>* o) {
    return [o, xn = x.node(), yn = y.node(), inv_n] {
      const T go = o->grad[0] * inv_n;
      for (std::size_t i = 0; i < xn->data.size(); ++i) {
        const T d = xn->data[i] - yn->data[i];
        const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
        if (xn->requires_grad) xn->ensure_grad()[i] += go * s;
        if (yn->requires_grad) yn->ensure_grad()[i] -= go * s;
      }
    };
  });
}

/// mean (x - y)^2.
template <typename T>
DiffTensor<T> mse_loss(const DiffTensor<T>& x, const DiffTensor<T>& y) {
  require_same_shape(x, y, "mse_loss");
  T acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T d = x.storage()[i] - y.storage()[i];
    acc += d * d;
  }
  const T inv_n = T(1) / static_cast<T>(x.size());
  return detail::make_result<T>("mse_loss", Shape{}, {acc * inv_n}, {&x, &y}, [x, y, inv_n](Node<T>* o) {
    return [o, xn = x.node(), yn = y.node(), inv_n] {
      const T go = T(2) * o->grad[0] * inv_n;
      for (std::size_t i = 0; i < xn->data.size(); ++i) {
        const T d = xn->data[i] - yn->data[i];
        if (xn->requires_grad) xn->ensure_grad()[i] += go * d;
        if (yn->requires_grad) yn->ensure_grad()[i] -= go * d;
      }
    };
  });
}

/// mean (x - c)^2 against a constant target.
template <typename T>
DiffTensor<T> mse_to(const DiffTensor<T>& x, T target) {
  return mse_loss(x, DiffTensor<T>(x.shape(), target));
}

/// x[N, C, H, W] -> [N, C, 2H, 2W] by pixel replication.
template <typename T>
DiffTensor<T> upsample_nearest2x(const DiffTensor<T>& x) {
  require(x.rank() == 4, "ShapeMismatch", "upsample expects rank-4 input");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(nc * 4 * h * w);
  for (std::size_t p = 0; p < nc; ++p) {
    const T* src = x.storage().data() + p * h * w;
    T* dst = out.data() + p * 4 * h * w;
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  return detail::make_result<T>("upsample_nearest2x", Shape{x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {&x},
                                [x, nc, h, w](Node<T>* o) {
                                  return [o, xn = x.node(), nc, h, w] {
                                    auto& g = xn->ensure_grad();
                                    for (std::size_t p = 0; p < nc; ++p) {
                                      const T* go = o->grad.data() + p * 4 * h * w;
                                      T* gi = g.data() + p * h * w;
                                      for (std::size_t i = 0; i < 2 * h; ++i) {
                                        for (std::size_t j = 0; j < 2 * w; ++j) gi[(i / 2) * w + j / 2] += go[i * 2 * w + j];
                                      }
                                    }
                                  };
                                });
}

/// [N, C, H, W] -> [N, C] spatial mean.
template <typename T>
DiffTensor<T> global_avg_pool(const DiffTensor<T>& x) {
  require(x.rank() == 4, "ShapeMismatch", "global_avg_pool expects rank-4 input");
  const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(nc);
  for (std::size_t p = 0; p < nc; ++p) {
    T acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += x.storage()[p * hw + i];
    out[p] = acc / static_cast<T>(hw);
  }
  return detail::make_result<T>("global_avg_pool", Shape{x.dim(0), x.dim(1)}, std::move(out), {&x},
                                [x, nc, hw](Node<T>* o) {
                                  return [o, xn = x.node(), nc, hw] {
                                    auto& g = xn->ensure_grad();
                                    for (std::size_t p = 0; p < nc; ++p) {
                                      const T v = o->grad[p] / static_cast<T>(hw);
                                      for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += v;
                                    }
                                  };
                                });
}

/// x[N, D] * W[K, D]^T + b[K].
template <typename T>
DiffTensor<T> linear(const DiffTensor<T>& x, const DiffTensor<T>& w, const DiffTensor<T>& b) {
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1), "ShapeMismatch",
          "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  require(!b.defined() || (b.rank() == 1 && b.dim(0) == w.dim(0)), "ShapeMismatch", "linear: bad bias shape");
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(0);
  std::vector<T> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      T acc = b.defined() ? b.storage()[j] : T(0);
      for (std::size_t t = 0; t < d; ++t) acc += x.storage()[i * d + t] * w.storage()[j * d + t];
      out[i * k + j] = acc;
    }
  }
  return detail::make_result<T>("linear", Shape{n, k}, std::move(out), {&x, &w, &b}, [x, w, b, n, d, k](Node<T>* o) {
    return [o, xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, n, d, k] {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const T go = o->grad[i * k + j];
          if (go == T(0)) continue;
          if (xn->requires_grad) {
            auto& gx = xn->ensure_grad();
            for (std::size_t t = 0; t < d; ++t) gx[i * d + t] += go * wn->data[j * d + t];
          }
          if (wn->requires_grad) {
            auto& gw = wn->ensure_grad();
            for (std::size_t t = 0; t < d; ++t) gw[j * d + t] += go * xn->data[i * d + t];
          }
          if (bn && bn->requires_grad) bn->ensure_grad()[j] += go;
        }
      }
    };
  });
}

/// Mean over the batch of -sum_k target_k * log softmax(logits)_k.
/// Targets are constants (one-hot or mixed); rows must sum to 1.
template <typename T>
DiffTensor<T> softmax_cross_entropy(const DiffTensor<T>& logits, const std::vector<T>& targets) {
  require(logits.rank() == 2 && targets.size() == logits.size(), "ShapeMismatch",
          "softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs targets of size " +
              std::to_string(targets.size()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<T> probs(n * k);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.storage().data() + i * k;
    const T zmax = *std::max_element(z, z + k);
    T denom = 0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    const T log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) {
      const T logp = z[j] - zmax - log_denom;
      probs[i * k + j] = std::exp(logp);
      loss -= targets[i * k + j] * logp;
    }
  }
  loss /= static_cast<T>(n);
  return detail::make_result<T>("softmax_cross_entropy", Shape{}, {loss}, {&logits},
                                [logits, probs = std::move(probs), targets, n, k](Node<T>* o) {
                                  return [o, ln = logits.node(), probs, targets, n, k] {
                                    auto& g = ln->ensure_grad();
                                    const T go = o->grad[0] / static_cast<T>(n);
                                    for (std::size_t i = 0; i < n * k; ++i) {
                                      // d/dz = p * sum(t) - t
                                      T row_sum = 0;
                                      for (std::size_t j = 0; j < k; ++j) row_sum += targets[(i / k) * k + j];
                                      g[i] += go * (probs[i] * row_sum - targets[i]);
                                    }
                                  };
                                });
}

}  // namespace micshift::tensor
