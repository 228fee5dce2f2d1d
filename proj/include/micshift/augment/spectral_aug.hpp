#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "micshift/core/error.hpp"
#include "micshift/core/rng.hpp"
#include "micshift/dsp/features.hpp"

namespace micshift::augment {

inline double spectrogram_mean(const dsp::Spectrogram& s) {
  double acc = 0.0;
  for (float v : s.values) acc += v;
  return s.values.empty() ? 0.0 : acc / static_cast<double>(s.values.size());
}

struct Mask {
  bool frequency = false;  // mel rows, else frames
  std::size_t start = 0, width = 0;
};

/// Sets masked rows/columns to `fill`; all other cells are untouched.
inline dsp::Spectrogram apply_masks(const dsp::Spectrogram& s, const std::vector<Mask>& masks, float fill) {
  dsp::Spectrogram out = s;
  for (const auto& m : masks) {
    const std::size_t dim = m.frequency ? s.n_mels : s.n_frames;
    require(m.start + m.width <= dim, "InvalidArgument", "mask exceeds spectrogram bounds");
    for (std::size_t i = m.start; i < m.start + m.width; ++i) {
      if (m.frequency) {
        std::fill_n(out.values.begin() + static_cast<std::ptrdiff_t>(i * s.n_frames), s.n_frames, fill);
      } else {
        for (std::size_t r = 0; r < s.n_mels; ++r) out.at(r, i) = fill;
      }
    }
  }
  return out;
}

/// SpecAugment masking: widths uniform in [0, max], positions uniform, masked
/// cells filled with the spectrogram mean.
inline dsp::Spectrogram spec_augment(const dsp::Spectrogram& s, std::size_t n_time_masks, std::size_t n_freq_masks,
                                     std::size_t max_time_width, std::size_t max_freq_width, Rng& rng) {
  require(max_time_width <= s.n_frames && max_freq_width <= s.n_mels, "InvalidArgument",
          "mask widths exceed spectrogram dimensions");
  std::vector<Mask> masks;
  auto draw = [&](bool freq, std::size_t max_w, std::size_t dim) {
    const auto w = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(max_w)));
    const auto start = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(dim - w)));
    masks.push_back({freq, start, w});
  };
  for (std::size_t i = 0; i < n_time_masks; ++i) draw(false, max_time_width, s.n_frames);
  for (std::size_t i = 0; i < n_freq_masks; ++i) draw(true, max_freq_width, s.n_mels);
  return apply_masks(s, masks, static_cast<float>(spectrogram_mean(s)));
}

/// Per-mel-bin gain (dB) linearly interpolated between band boundaries.
/// `boundaries` are increasing bin positions starting at 0 and ending at
/// n_mels − 1; `gains_db` holds one gain per boundary.
inline std::vector<double> filter_gain_curve(std::size_t n_mels, const std::vector<double>& boundaries,
                                             const std::vector<double>& gains_db) {
  require(boundaries.size() >= 2 && boundaries.size() == gains_db.size(), "InvalidArgument",
          "filter needs >= 2 boundaries with one gain each");
  std::vector<double> g(n_mels);
  std::size_t b = 0;
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double x = static_cast<double>(m);
    while (b + 2 < boundaries.size() && x > boundaries[b + 1]) ++b;
    const double x0 = boundaries[b], x1 = boundaries[b + 1];
    const double t = x1 > x0 ? std::clamp((x - x0) / (x1 - x0), 0.0, 1.0) : 0.0;
    g[m] = gains_db[b] + t * (gains_db[b + 1] - gains_db[b]);
  }
  return g;
}

/// Adds a dB gain curve to a natural-log spectrogram.
inline dsp::Spectrogram apply_gain_curve(const dsp::Spectrogram& s, const std::vector<double>& gain_db) {
  require(gain_db.size() == s.n_mels, "ShapeMismatch", "gain curve length must equal n_mels");
  dsp::Spectrogram out = s;
  for (std::size_t m = 0; m < s.n_mels; ++m) {
    const auto add = static_cast<float>(gain_db[m] * std::numbers::ln10 / 10.0);
    if (add == 0.0f) continue;
    for (std::size_t t = 0; t < s.n_frames; ++t) out.at(m, t) += add;
  }
  return out;
}

/// FilterAugment (linear type): n_bands ∈ [bands_lo, bands_hi] with random
/// interior boundaries and gains uniform in ±max_gain_db at each boundary.
inline dsp::Spectrogram filter_augment(const dsp::Spectrogram& s, std::size_t bands_lo, std::size_t bands_hi,
                                       double max_gain_db, Rng& rng) {
  require(bands_lo >= 2 && bands_lo <= bands_hi, "InvalidArgument", "filter_augment needs 2 <= bands_lo <= bands_hi");
  require(s.n_mels > bands_hi, "InvalidArgument", "more bands than mel bins");
  const auto n_bands = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(bands_lo),
                                                           static_cast<std::int64_t>(bands_hi)));
  const double top = static_cast<double>(s.n_mels - 1);
  std::vector<double> bounds{0.0};
  std::vector<double> interior(n_bands - 1);
  for (auto& b : interior) b = static_cast<double>(rng.integer(1, static_cast<std::int64_t>(s.n_mels) - 2));
  std::sort(interior.begin(), interior.end());
  bounds.insert(bounds.end(), interior.begin(), interior.end());
  bounds.push_back(top);
  std::vector<double> gains(bounds.size());
  for (auto& g : gains) g = rng.uniform(-max_gain_db, max_gain_db);
  return apply_gain_curve(s, filter_gain_curve(s.n_mels, bounds, gains));
}

/// Batch of single-channel [h, w] inputs with soft labels over k classes.
struct LabeledBatch {
  std::size_t n = 0, h = 0, w = 0, k = 0;
  std::vector<float> x;   // n·h·w
  std::vector<double> y;  // n·k

  float* sample(std::size_t i) { return x.data() + i * h * w; }
  const float* sample(std::size_t i) const { return x.data() + i * h * w; }
};

/// x'_i = λx_i + (1 − λ)x_perm[i], labels likewise.
inline LabeledBatch mixup_with(const LabeledBatch& b, double lambda, const std::vector<std::size_t>& perm) {
  require(perm.size() == b.n, "InvalidArgument", "mixup permutation length must equal the batch size");
  LabeledBatch out = b;
  if (lambda == 1.0) return out;
  const std::size_t d = b.h * b.w;
  const auto l = static_cast<float>(lambda);
  for (std::size_t i = 0; i < b.n; ++i) {
    const std::size_t j = perm[i];
    for (std::size_t e = 0; e < d; ++e) out.x[i * d + e] = l * b.x[i * d + e] + (1.0f - l) * b.x[j * d + e];
    for (std::size_t c = 0; c < b.k; ++c) out.y[i * b.k + c] = lambda * b.y[i * b.k + c] + (1.0 - lambda) * b.y[j * b.k + c];
  }
  return out;
}

inline LabeledBatch mixup(const LabeledBatch& b, double alpha, Rng& rng) {
  require(b.n >= 2, "InvalidArgument", "mixup needs a batch of at least 2");
  const double lambda = rng.beta(alpha, alpha);
  return mixup_with(b, lambda, rng.permutation(b.n));
}

inline constexpr double kMixStyleEps = 1e-6;

/// Freq-MixStyle with explicit per-sample λ and partners: every frequency row
/// is re-standardized from its own time statistics to the mixed statistics.
inline LabeledBatch freq_mixstyle_with(const LabeledBatch& b, const std::vector<double>& lambdas,
                                       const std::vector<std::size_t>& perm) {
  require(lambdas.size() == b.n && perm.size() == b.n, "InvalidArgument", "freq_mixstyle needs one λ and partner per sample");
  const std::size_t rows = b.n * b.h;
  std::vector<double> mu(rows), sd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* p = b.x.data() + r * b.w;
    double s = 0.0, s2 = 0.0;
    for (std::size_t t = 0; t < b.w; ++t) s += p[t];
    mu[r] = s / static_cast<double>(b.w);
    for (std::size_t t = 0; t < b.w; ++t) s2 += (p[t] - mu[r]) * (p[t] - mu[r]);
    sd[r] = std::sqrt(s2 / static_cast<double>(b.w) + kMixStyleEps);
  }
  LabeledBatch out = b;
  for (std::size_t i = 0; i < b.n; ++i) {
    const double l = lambdas[i];
    if (l == 1.0 || perm[i] == i) continue;
    for (std::size_t h = 0; h < b.h; ++h) {
      const std::size_t r = i * b.h + h, q = perm[i] * b.h + h;
      const double m2 = l * mu[r] + (1.0 - l) * mu[q];
      const double s2 = l * sd[r] + (1.0 - l) * sd[q];
      float* p = out.x.data() + r * b.w;
      for (std::size_t t = 0; t < b.w; ++t) p[t] = static_cast<float>((p[t] - mu[r]) / sd[r] * s2 + m2);
    }
  }
  return out;
}

inline LabeledBatch freq_mixstyle(const LabeledBatch& b, double alpha, Rng& rng) {
  require(b.n >= 2, "InvalidArgument", "freq_mixstyle needs a batch of at least 2");
  std::vector<double> lambdas(b.n);
  for (auto& l : lambdas) l = rng.beta(alpha, alpha);
  return freq_mixstyle_with(b, lambdas, rng.permutation(b.n));
}

}  // namespace micshift::augment
