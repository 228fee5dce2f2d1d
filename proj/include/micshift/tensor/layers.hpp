#pragma once

#include <cmath>
#include <string>

#include "micshift/core/rng.hpp"
#include "micshift/tensor/conv.hpp"
#include "micshift/tensor/norm.hpp"
#include "micshift/tensor/ops.hpp"

namespace micshift::tensor {

enum class Init { kNormal002, kKaiming };

template <typename T>
DiffTensor<T> init_tensor(Shape shape, Init init, std::size_t fan_in, Rng& rng) {
  const double std = init == Init::kNormal002 ? 0.02 : std::sqrt(2.0 / static_cast<double>(fan_in));
  DiffTensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal(0.0, std));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
DiffTensor<T> constant_param(Shape shape, T value) {
  DiffTensor<T> t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <typename T>
struct Conv2d {
  DiffTensor<T> weight, bias;
  std::size_t stride = 1, pad = 0;
  PadMode mode = PadMode::kZero;

  Conv2d() = default;
  Conv2d(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride_, std::size_t pad_, PadMode mode_,
         bool with_bias, Init init, Rng& rng)
      : stride(stride_), pad(pad_), mode(mode_) {
    weight = init_tensor<T>({cout, cin, k, k}, init, cin * k * k, rng);
    if (with_bias) bias = constant_param<T>({cout}, T(0));
  }

  DiffTensor<T> operator()(const DiffTensor<T>& x) const { return conv2d(x, weight, bias, stride, pad, mode); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "weight"), weight, true});
    if (bias.defined()) out.push_back({join_name(prefix, "bias"), bias, true});
  }
};

template <typename T>
struct InstanceNorm2d {
  DiffTensor<T> gamma, beta;
  T eps = T(1e-5);

  InstanceNorm2d() = default;
  explicit InstanceNorm2d(std::size_t channels, bool affine = true, T eps_ = T(1e-5)) : eps(eps_) {
    if (affine) {
      gamma = constant_param<T>({channels}, T(1));
      beta = constant_param<T>({channels}, T(0));
    }
  }

  DiffTensor<T> operator()(const DiffTensor<T>& x) const {
    auto y = standardize(x, NormAxes::kInstance, eps);
    return gamma.defined() ? channel_affine(y, gamma, beta) : y;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    if (!gamma.defined()) return;
    out.push_back({join_name(prefix, "gamma"), gamma, true});
    out.push_back({join_name(prefix, "beta"), beta, true});
  }
};

template <typename T>
struct BatchNorm2d {
  DiffTensor<T> gamma, beta, running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels)
      : gamma(constant_param<T>({channels}, T(1))),
        beta(constant_param<T>({channels}, T(0))),
        running_mean(Shape{channels}, T(0)),
        running_var(Shape{channels}, T(1)) {}

  /// Training mode normalizes with batch statistics and updates the running
  /// estimates; eval mode applies the running estimates as a fixed affine map.
  DiffTensor<T> operator()(const DiffTensor<T>& x, bool training) {
    const std::size_t c = gamma.size();
    if (training) {
      GroupStats<T> st;
      auto y = standardize(x, NormAxes::kBatch, eps, &st);
      const T count = static_cast<T>(x.size() / c);
      const T unbias = count > T(1) ? count / (count - T(1)) : T(1);
      for (std::size_t k = 0; k < c; ++k) {
        running_mean.storage()[k] = (T(1) - momentum) * running_mean.storage()[k] + momentum * st.mean[k];
        running_var.storage()[k] = (T(1) - momentum) * running_var.storage()[k] + momentum * st.var[k] * unbias;
      }
      return channel_affine(y, gamma, beta);
    }
    DiffTensor<T> scale_t(Shape{c}), shift_t(Shape{c});
    for (std::size_t k = 0; k < c; ++k) {
      const T s = gamma.storage()[k] / std::sqrt(running_var.storage()[k] + eps);
      scale_t.storage()[k] = s;
      shift_t.storage()[k] = beta.storage()[k] - running_mean.storage()[k] * s;
    }
    return channel_affine(x, scale_t, shift_t);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "gamma"), gamma, true});
    out.push_back({join_name(prefix, "beta"), beta, true});
    out.push_back({join_name(prefix, "running_mean"), running_mean, false});
    out.push_back({join_name(prefix, "running_var"), running_var, false});
  }
};

template <typename T>
struct Linear {
  DiffTensor<T> weight, bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Init init, Rng& rng)
      : weight(init_tensor<T>({out, in}, init, in, rng)), bias(constant_param<T>({out}, T(0))) {}

  DiffTensor<T> operator()(const DiffTensor<T>& x) const { return linear(x, weight, bias); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "weight"), weight, true});
    out.push_back({join_name(prefix, "bias"), bias, true});
  }
};

template <typename T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.trainable ? p.tensor.size() : 0;
  return n;
}

template <typename T>
void zero_grads(ParamList<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

/// Copies values between parameter lists of identical structure (any precision).
template <typename To, typename From>
void copy_values(const ParamList<From>& src, ParamList<To>& dst) {
  require(src.size() == dst.size(), "ShapeMismatch", "copy_values: parameter count differs");
  for (std::size_t i = 0; i < src.size(); ++i) {
    require(src[i].name == dst[i].name && src[i].tensor.shape() == dst[i].tensor.shape(), "ShapeMismatch",
            "copy_values: parameter '" + src[i].name + "' does not match '" + dst[i].name + "'");
    auto& d = dst[i].tensor.storage();
    const auto& s = src[i].tensor.storage();
    for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<To>(s[k]);
  }
}

}  // namespace micshift::tensor
