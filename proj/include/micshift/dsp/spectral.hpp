#pragma once

#include <cmath>
#include <vector>

#include "micshift/core/error.hpp"
#include "micshift/dsp/features.hpp"
#include "micshift/dsp/fft.hpp"

namespace micshift::dsp {

/// One-sided power spectral density in dB.
struct WelchSpectrum {
  std::vector<double> power_db;
  double resolution_hz = 0.0;
};

namespace detail {

inline constexpr double kDbFloor = 1e-30;

/// One-sided density-scaled periodogram of samples[start, start + seg_len).
inline void accumulate_periodogram(const Waveform& w, std::size_t start, const FftPlan& plan,
                                   const std::vector<double>& window, std::vector<double>& acc) {
  const std::size_t n = plan.size();
  std::vector<std::complex<double>> buf(n);
  double wss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    buf[i] = w.samples[start + i] * window[i];
    wss += window[i] * window[i];
  }
  plan.transform(buf);
  const double scale = 1.0 / (static_cast<double>(w.sample_rate) * wss);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    double p = std::norm(buf[k]) * scale;
    if (k != 0 && k != n / 2) p *= 2.0;
    acc[k] += p;
  }
}

inline WelchSpectrum to_db(std::vector<double> linear, std::size_t count, int sample_rate, std::size_t n) {
  WelchSpectrum out;
  out.resolution_hz = static_cast<double>(sample_rate) / static_cast<double>(n);
  out.power_db.resize(linear.size());
  for (std::size_t k = 0; k < linear.size(); ++k) {
    const double mean = linear[k] / static_cast<double>(count);
    out.power_db[k] = 10.0 * std::log10(std::max(mean, kDbFloor));
  }
  return out;
}

}  // namespace detail

/// Hann-windowed periodogram of the first seg_len samples.
inline WelchSpectrum periodogram(const Waveform& w, std::size_t seg_len = 1024) {
  validate(w);
  require(seg_len <= w.samples.size(), "InvalidArgument", "segment longer than signal");
  const FftPlan plan(seg_len);
  const auto window = hann_window(seg_len);
  std::vector<double> acc(seg_len / 2 + 1, 0.0);
  detail::accumulate_periodogram(w, 0, plan, window, acc);
  return detail::to_db(std::move(acc), 1, w.sample_rate, seg_len);
}

/// Welch PSD: mean of Hann-windowed periodograms over overlapping segments, in dB.
inline WelchSpectrum welch_spectrum(const Waveform& w, std::size_t seg_len = 1024, double overlap = 0.5) {
  validate(w);
  require(seg_len <= w.samples.size(), "InvalidArgument", "segment longer than signal");
  require(overlap >= 0.0 && overlap < 1.0, "InvalidArgument", "overlap must be in [0, 1)");
  const FftPlan plan(seg_len);
  const auto window = hann_window(seg_len);
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(seg_len * (1.0 - overlap))));
  std::vector<double> acc(seg_len / 2 + 1, 0.0);
  std::size_t count = 0;
  for (std::size_t start = 0; start + seg_len <= w.samples.size(); start += hop) {
    detail::accumulate_periodogram(w, start, plan, window, acc);
    ++count;
  }
  return detail::to_db(std::move(acc), count, w.sample_rate, seg_len);
}

/// Per-mel-bin mean over all frames of all spectrograms.
inline std::vector<double> temporal_average(const std::vector<Spectrogram>& specs) {
  require(!specs.empty(), "EmptyInput", "temporal_average needs at least one spectrogram");
  const std::size_t n_mels = specs.front().n_mels;
  std::vector<double> sum(n_mels, 0.0);
  std::size_t frames = 0;
  for (const auto& s : specs) {
    require(s.n_mels == n_mels, "ShapeMismatch", "spectrograms disagree on n_mels");
    for (std::size_t m = 0; m < n_mels; ++m) {
      for (std::size_t t = 0; t < s.n_frames; ++t) sum[m] += s.at(m, t);
    }
    frames += s.n_frames;
  }
  require(frames > 0, "EmptyInput", "spectrograms have no frames");
  for (auto& v : sum) v /= static_cast<double>(frames);
  return sum;
}

/// Elementwise a - b; inputs are already log/dB.
inline std::vector<double> difference_spectrum(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), "ShapeMismatch", "difference_spectrum length mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

/// Natural-log power units to decibels.
inline constexpr double kLnToDb = 4.342944819032518;  // 10 / ln(10)

}  // namespace micshift::dsp
