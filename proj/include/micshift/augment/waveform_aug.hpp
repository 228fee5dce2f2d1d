#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "micshift/core/error.hpp"
#include "micshift/core/rng.hpp"
#include "micshift/dsp/fft.hpp"
#include "micshift/dsp/resample.hpp"
#include "micshift/dsp/waveform.hpp"

namespace micshift::augment {

inline double signal_power(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return x.empty() ? 0.0 : p / static_cast<double>(x.size());
}

/// Adds white Gaussian noise rescaled so the realized SNR equals `snr_db`
/// exactly. Silent input and SNR = +inf return the input unchanged.
inline dsp::Waveform gaussian_noise(const dsp::Waveform& w, double snr_db, Rng& rng) {
  const double ps = signal_power(w.samples);
  if (ps == 0.0 || std::isinf(snr_db)) return w;
  std::vector<double> n(w.samples.size());
  for (auto& v : n) v = rng.normal();
  const double pn = signal_power(n);
  if (pn == 0.0) return w;
  const double scale = std::sqrt(ps / std::pow(10.0, snr_db / 10.0) / pn);
  dsp::Waveform out = w;
  for (std::size_t i = 0; i < n.size(); ++i) out.samples[i] += scale * n[i];
  return out;
}

/// Full convolution with `rir`, truncated to the input length.
inline dsp::Waveform reverb(const dsp::Waveform& w, const dsp::Waveform& rir) {
  require(!rir.samples.empty(), "InvalidArgument", "empty impulse response");
  require(rir.samples.size() <= w.samples.size(), "InvalidArgument", "impulse response longer than the signal");
  auto full = dsp::fft_convolve(w.samples, rir.samples);
  dsp::Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(w.samples.size()));
  return out;
}

/// Exponentially decaying noise tail behind a unit direct path, decaying by
/// 60 dB after `t60` seconds; scaled to unit energy.
inline dsp::Waveform synthetic_rir(double t60, int sample_rate, Rng& rng) {
  require(t60 > 0.0, "InvalidArgument", "t60 must be positive");
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(t60 * sample_rate));
  const double k = std::log(1000.0) / (t60 * sample_rate);  // amplitude -60 dB at t60
  dsp::Waveform h;
  h.sample_rate = sample_rate;
  h.samples.resize(n);
  h.samples[0] = 1.0;
  for (std::size_t i = 1; i < n; ++i) h.samples[i] = 0.5 * rng.normal() * std::exp(-k * static_cast<double>(i));
  double e = 0.0;
  for (double v : h.samples) e += v * v;
  for (auto& v : h.samples) v /= std::sqrt(e);
  return h;
}

/// Resample by 2^(semitones/12) and zero-pad or trim back to the input
/// length; played at the original rate this raises pitch and shortens time.
inline dsp::Waveform pitch_shift(const dsp::Waveform& w, double semitones) {
  if (semitones == 0.0) return w;
  const double factor = std::pow(2.0, semitones / 12.0);
  const auto len = static_cast<std::size_t>(std::llround(static_cast<double>(w.samples.size()) / factor));
  auto y = dsp::resample_ratio(w.samples, 1.0 / factor, std::max<std::size_t>(1, len));
  y.resize(w.samples.size(), 0.0);
  dsp::Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples = std::move(y);
  return out;
}

}  // namespace micshift::augment
