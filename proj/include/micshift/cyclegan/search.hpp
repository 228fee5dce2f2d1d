#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "micshift/core/rng.hpp"
#include "micshift/cyclegan/train.hpp"

namespace micshift::cyclegan {

enum class SearchStrategy { kRandom, kQuantileSplit };

inline SearchStrategy search_strategy_from_name(const std::string& s) {
  if (s == "random") return SearchStrategy::kRandom;
  if (s == "tpe" || s == "quantile_split") return SearchStrategy::kQuantileSplit;
  throw Error("InvalidConfig", "unknown search strategy '" + s + "'");
}

struct SearchTrial {
  double lr_init = 0.0;
  std::size_t halve_interval = 0;
  double score = 0.0;
};

struct SearchResult {
  McTrainConfig best;
  double best_score = 0.0;
  std::vector<SearchTrial> trials;
};

inline constexpr double kLrMin = 2e-5, kLrMax = 2e-3;
inline constexpr std::size_t kIntervalMin = 10, kIntervalMax = 50;

namespace detail {

inline double gauss_kde(double x, const std::vector<double>& centers, double bw) {
  double s = 0.0;
  for (double c : centers) s += std::exp(-0.5 * std::pow((x - c) / bw, 2));
  return s / (static_cast<double>(centers.size()) * bw) + 1e-12;
}

/// Sequential density-ratio proposal: observations are split at the score
/// quantile `gamma` into good/bad sets; candidates are drawn around good points
/// (in log-lr × interval space) and the one maximizing l(x)/g(x) is returned.
inline SearchTrial propose_quantile_split(const std::vector<SearchTrial>& hist, Rng& rng, double gamma = 0.25,
                                          std::size_t n_candidates = 24) {
  auto sorted = hist;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  const std::size_t n_good = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(gamma * sorted.size())));
  std::vector<double> good_lr, good_iv, bad_lr, bad_iv;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    auto& lr = i < n_good ? good_lr : bad_lr;
    auto& iv = i < n_good ? good_iv : bad_iv;
    lr.push_back(std::log(sorted[i].lr_init));
    iv.push_back(static_cast<double>(sorted[i].halve_interval));
  }
  const double lo = std::log(kLrMin), hi = std::log(kLrMax);
  const double bw_lr = (hi - lo) / 5.0, bw_iv = (kIntervalMax - kIntervalMin) / 5.0;
  SearchTrial best;
  double best_ratio = -1.0;
  for (std::size_t c = 0; c < n_candidates; ++c) {
    const std::size_t k = rng.index(good_lr.size());
    const double llr = std::clamp(rng.normal(good_lr[k], bw_lr), lo, hi);
    const double iv = std::clamp(std::round(rng.normal(good_iv[k], bw_iv)), double(kIntervalMin), double(kIntervalMax));
    const double l = gauss_kde(llr, good_lr, bw_lr) * gauss_kde(iv, good_iv, bw_iv);
    const double g = bad_lr.empty() ? 1.0 : gauss_kde(llr, bad_lr, bw_lr) * gauss_kde(iv, bad_iv, bw_iv);
    if (l / g > best_ratio) {
      best_ratio = l / g;
      best.lr_init = std::clamp(std::exp(llr), kLrMin, kLrMax);
      best.halve_interval = static_cast<std::size_t>(iv);
    }
  }
  return best;
}

}  // namespace detail

inline SearchTrial random_proposal(Rng& rng) {
  SearchTrial t;
  t.lr_init = std::clamp(std::exp(rng.uniform(std::log(kLrMin), std::log(kLrMax))), kLrMin, kLrMax);
  t.halve_interval = static_cast<std::size_t>(rng.integer(kIntervalMin, kIntervalMax));
  return t;
}

/// Minimizes `score(cfg)` (a validation cycle loss) over lr_init and
/// halve_interval. The first min(3, n_iter) proposals are random; later ones
/// use the quantile-split surrogate unless the random strategy is selected.
inline SearchResult hyperparam_search(const McTrainConfig& base, std::size_t n_iter, SearchStrategy strategy,
                                      const std::function<double(const McTrainConfig&)>& score,
                                      std::uint64_t seed) {
  require(n_iter >= 1, "InvalidConfig", "hyperparam_search needs n_iter >= 1");
  Rng rng(seed);
  SearchResult res;
  const std::size_t n_startup = std::min<std::size_t>(3, n_iter);
  for (std::size_t i = 0; i < n_iter; ++i) {
    SearchTrial t = (strategy == SearchStrategy::kRandom || i < n_startup)
                        ? random_proposal(rng)
                        : detail::propose_quantile_split(res.trials, rng);
    McTrainConfig cfg = base;
    cfg.lr_init = t.lr_init;
    cfg.halve_interval = t.halve_interval;
    t.score = score(cfg);
    res.trials.push_back(t);
    if (i == 0 || t.score < res.best_score) {
      res.best_score = t.score;
      res.best = cfg;
    }
  }
  return res;
}

}  // namespace micshift::cyclegan
