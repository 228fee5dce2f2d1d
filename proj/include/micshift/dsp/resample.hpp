#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "micshift/core/error.hpp"
#include "micshift/dsp/waveform.hpp"

namespace micshift::dsp {

namespace detail {

inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

/// Kaiser-windowed sinc sampled on a dense grid: a polyphase table with
/// kPhases entries per zero crossing, linearly interpolated between phases.
class SincTable {
 public:
  static constexpr int kZeroCrossings = 32;
  static constexpr int kPhases = 512;
  static constexpr double kBeta = 8.6;  // ~ -85 dB sidelobes

  SincTable() {
    const int n = kZeroCrossings * kPhases + 2;
    table_.resize(static_cast<std::size_t>(n));
    const double norm = bessel_i0(kBeta);
    for (int i = 0; i < n; ++i) {
      const double u = static_cast<double>(i) / kPhases;
      const double r = u / kZeroCrossings;
      const double win = r < 1.0 ? bessel_i0(kBeta * std::sqrt(1.0 - r * r)) / norm : 0.0;
      const double s = u == 0.0 ? 1.0 : std::sin(std::numbers::pi * u) / (std::numbers::pi * u);
      table_[static_cast<std::size_t>(i)] = s * win;
    }
  }

  /// Windowed sinc at |u| (u in zero-crossing units).
  double operator()(double u) const {
    u = std::abs(u);
    if (u >= kZeroCrossings) return 0.0;
    const double pos = u * kPhases;
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return table_[i] + frac * (table_[i + 1] - table_[i]);
  }

  static const SincTable& instance() {
    static const SincTable t;
    return t;
  }

 private:
  std::vector<double> table_;
};

}  // namespace detail

/// Band-limited resampling by an arbitrary ratio (output rate / input rate).
/// The anti-aliasing cutoff sits at `rolloff` of the lower Nyquist frequency.
inline std::vector<double> resample_ratio(const std::vector<double>& x, double ratio, std::size_t out_len,
                                          double rolloff = 0.9) {
  require(ratio > 0.0, "InvalidArgument", "resample ratio must be positive");
  const auto& sinc = detail::SincTable::instance();
  const double fc = std::min(1.0, ratio) * rolloff;
  const double half_width = detail::SincTable::kZeroCrossings / fc;
  const auto n_in = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> y(out_len, 0.0);
  for (std::size_t n = 0; n < out_len; ++n) {
    const double t = static_cast<double>(n) / ratio;
    const auto k_lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(t - half_width)));
    const auto k_hi = std::min<std::ptrdiff_t>(n_in - 1, static_cast<std::ptrdiff_t>(std::floor(t + half_width)));
    double acc = 0.0;
    for (std::ptrdiff_t k = k_lo; k <= k_hi; ++k) {
      acc += x[static_cast<std::size_t>(k)] * sinc(fc * (t - static_cast<double>(k)));
    }
    y[n] = fc * acc;
  }
  return y;
}

/// Resamples to target_rate. Output length is round(len * target / rate); the
/// identity rate returns the input unchanged.
inline Waveform resample(const Waveform& w, int target_rate) {
  require(target_rate > 0, "InvalidArgument", "target_rate must be positive");
  validate(w);
  if (target_rate == w.sample_rate) return w;
  const auto len = static_cast<long long>(w.samples.size());
  const auto out_len = static_cast<std::size_t>((len * target_rate + w.sample_rate / 2) / w.sample_rate);
  Waveform out;
  out.sample_rate = target_rate;
  out.samples = resample_ratio(w.samples, static_cast<double>(target_rate) / w.sample_rate, out_len);
  return out;
}

}  // namespace micshift::dsp
