#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "micshift/core/rng.hpp"
#include "micshift/tensor/diff_tensor.hpp"

namespace micshift::tensor {

struct GradCheckOptions {
  double eps = 1e-5;
  /// rel = |a − n| / max(|a|, |n|, floor · max(1, |f|)). The difference
  /// quotient carries round-off of a few ulp(f) / eps (~1e-10·|f| at eps 1e-5),
  /// so gradients below floor·|f| are compared on an absolute scale instead.
  double floor = 1e-5;
  /// Elements checked per parameter (0 = all); a seeded subset otherwise.
  std::size_t max_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double floor = 0.0;  // denominator floor actually used
};

/// Compares tape gradients of `loss_fn` (a scalar) against central finite
/// differences. Stencils whose ±eps evaluations change the sign pattern of any
/// kinked op (relu, leaky relu, |·|) are excluded as non-differentiable points.
inline GradCheckResult grad_check(const std::function<DiffTensor<double>()>& loss_fn, ParamList<double>& params,
                                  const GradCheckOptions& opt = {}) {
  for (auto& p : params) p.tensor.zero_grad();
  detail::KinkRecorder base_kinks;
  double f0 = 0.0;
  {
    detail::kink_recorder = &base_kinks;
    auto loss = loss_fn();
    detail::kink_recorder = nullptr;
    f0 = loss.item();
    loss.backward();
  }
  const double floor =
      opt.floor * std::max(1.0, std::abs(f0));
  auto eval = [&](std::uint64_t& hash) {
    NoGradGuard guard;
    detail::KinkRecorder rec;
    detail::kink_recorder = &rec;
    const double v = loss_fn().item();
    detail::kink_recorder = nullptr;
    hash = rec.hash;
    return v;
  };

  GradCheckResult res;
  res.floor = floor;
  Rng rng(opt.seed);
  for (auto& p : params) {
    if (!p.trainable) continue;
    auto& w = p.tensor.storage();
    std::vector<double> analytic(w.size(), 0.0);
    if (p.tensor.has_grad()) {
      auto g = p.tensor.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    std::vector<std::size_t> idx(w.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opt.max_per_param > 0 && idx.size() > opt.max_per_param) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(opt.max_per_param);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double orig = w[i];
      std::uint64_t hp = 0, hm = 0;
      w[i] = orig + opt.eps;
      const double fp = eval(hp);
      w[i] = orig - opt.eps;
      const double fm = eval(hm);
      w[i] = orig;
      if (hp != base_kinks.hash || hm != base_kinks.hash) {
        ++res.skipped_kinks;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p.name;
        res.worst_index = i;
      }
    }
  }
  for (auto& p : params) p.tensor.zero_grad();
  return res;
}

}  // namespace micshift::tensor
