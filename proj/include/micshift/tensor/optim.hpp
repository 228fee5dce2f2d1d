#pragma once

#include <cmath>
#include <vector>

#include "micshift/tensor/diff_tensor.hpp"

namespace micshift::tensor {

/// Adam moments and hyperparameters. weight_decay > 0 selects the decoupled
/// (AdamW) variant.
template <typename T>
struct AdamState {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t t = 0;
  std::vector<std::vector<T>> m, v;
};

template <typename T>
AdamState<T> make_adam(double lr, double beta1, double beta2, double weight_decay = 0.0, double eps = 1e-8) {
  AdamState<T> s;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.weight_decay = weight_decay;
  s.eps = eps;
  return s;
}

/// One bias-corrected Adam step over the trainable parameters. Parameters
/// without a gradient are skipped; if none has one, the step is an error.
template <typename T>
void adam_step(ParamList<T>& params, AdamState<T>& st) {
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.tensor.size(), T(0));
      st.v.emplace_back(p.tensor.size(), T(0));
    }
  }
  require(st.m.size() == params.size(), "ShapeMismatch", "adam_step: optimizer state does not match parameters");
  bool any = false;
  for (const auto& p : params) any = any || (p.trainable && p.tensor.has_grad());
  require(any, "EmptyGrad", "adam_step called before any gradient was populated");

  ++st.t;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  const double step = st.lr / bc1;
  const double decay = 1.0 - st.lr * st.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable || !p.tensor.has_grad()) continue;
    auto& w = p.tensor.storage();
    auto g = p.tensor.grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    require(m.size() == w.size(), "ShapeMismatch", "adam_step: state size mismatch for " + p.name);
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      m[k] = static_cast<T>(st.beta1 * m[k] + (1.0 - st.beta1) * gk);
      v[k] = static_cast<T>(st.beta2 * v[k] + (1.0 - st.beta2) * gk * gk);
      double wk = static_cast<double>(w[k]);
      if (st.weight_decay > 0.0) wk *= decay;
      const double denom = std::sqrt(static_cast<double>(v[k]) / bc2) + st.eps;
      w[k] = static_cast<T>(wk - step * static_cast<double>(m[k]) / denom);
    }
  }
}

}  // namespace micshift::tensor
