#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "micshift/core/error.hpp"
#include "micshift/dsp/fft.hpp"
#include "micshift/dsp/waveform.hpp"

namespace micshift::dsp {

inline constexpr double kLogFloor = 1e-10;

/// Feature configuration. Defaults follow the reference front end:
/// 22050 Hz, 1024-point Hann STFT, hop 256, 80 mel bands.
struct FeatureConfig {
  int sample_rate = 22050;
  std::size_t n_fft = 1024;
  std::size_t hop = 256;
  std::size_t n_mels = 80;
  double fmin = 0.0;
  double fmax = -1.0;  // <= 0 means sample_rate / 2

  double effective_fmax() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }
};

/// Power matrix [(n_fft/2 + 1) x n_frames], row-major by frequency bin.
struct PowerMatrix {
  std::size_t n_bins = 0;
  std::size_t n_frames = 0;
  std::vector<double> values;

  double at(std::size_t bin, std::size_t frame) const { return values[bin * n_frames + frame]; }
  double& at(std::size_t bin, std::size_t frame) { return values[bin * n_frames + frame]; }
};

/// Log-mel time-frequency matrix [n_mels x n_frames], row-major by mel bin.
struct Spectrogram {
  std::size_t n_mels = 0;
  std::size_t n_frames = 0;
  std::uint32_t hop = 0;
  std::uint32_t sample_rate = 0;
  std::vector<float> values;

  float at(std::size_t mel, std::size_t frame) const { return values[mel * n_frames + frame]; }
  float& at(std::size_t mel, std::size_t frame) { return values[mel * n_frames + frame]; }
  bool same_shape(const Spectrogram& o) const { return n_mels == o.n_mels && n_frames == o.n_frames; }
};

/// Mirror index into [0, n) without repeating the edge sample (numpy "reflect").
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

/// Centered (reflect-padded) short-time power spectrum with a periodic Hann window.
/// Frame count is floor(len / hop) + 1.
inline PowerMatrix stft_power(const Waveform& w, std::size_t n_fft = 1024, std::size_t hop = 256) {
  require(is_power_of_two(n_fft), "InvalidFftSize", "n_fft must be a power of two");
  require(hop > 0, "InvalidArgument", "hop must be positive");
  validate(w);
  const FftPlan plan(n_fft);
  const auto window = hann_window(n_fft);
  const std::size_t len = w.samples.size();
  PowerMatrix out;
  out.n_bins = n_fft / 2 + 1;
  out.n_frames = len / hop + 1;
  out.values.assign(out.n_bins * out.n_frames, 0.0);
  const auto pad = static_cast<std::ptrdiff_t>(n_fft / 2);
  std::vector<std::complex<double>> buf(n_fft);
  for (std::size_t f = 0; f < out.n_frames; ++f) {
    const auto start = static_cast<std::ptrdiff_t>(f * hop) - pad;
    for (std::size_t i = 0; i < n_fft; ++i) {
      buf[i] = w.samples[reflect_index(start + static_cast<std::ptrdiff_t>(i), len)] * window[i];
    }
    plan.transform(buf);
    for (std::size_t k = 0; k < out.n_bins; ++k) out.at(k, f) = std::norm(buf[k]);
  }
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters, unit peak height, centers equally spaced on the mel scale.
struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t n_bins = 0;
  double fmin = 0.0;
  double fmax = 0.0;
  std::vector<double> centers_hz;
  std::vector<double> weights;  // [n_mels x n_bins]

  double at(std::size_t m, std::size_t k) const { return weights[m * n_bins + k]; }
};

inline MelFilterbank mel_filterbank(int sample_rate = 22050, std::size_t n_fft = 1024, std::size_t n_mels = 80,
                                    double fmin = 0.0, double fmax = -1.0) {
  if (fmax <= 0.0) fmax = sample_rate / 2.0;
  require(n_mels >= 1, "InvalidArgument", "n_mels must be >= 1");
  require(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0, "InvalidArgument",
          "require 0 <= fmin < fmax <= sample_rate / 2");
  require(n_mels <= n_fft / 2, "OverResolved", "n_mels exceeds n_fft / 2");
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_bins = n_fft / 2 + 1;
  fb.fmin = fmin;
  fb.fmax = fmax;
  const double mlo = hz_to_mel(fmin);
  const double mhi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  fb.centers_hz.assign(edges.begin() + 1, edges.end() - 1);
  fb.weights.assign(n_mels * fb.n_bins, 0.0);
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n_fft);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double rise = (f - lo) / (c - lo);
      const double fall = (hi - f) / (hi - c);
      fb.weights[m * fb.n_bins + k] = std::max(0.0, std::min(rise, fall));
    }
  }
  return fb;
}

/// values = ln(max(fb * power, 1e-10)).
inline Spectrogram log_mel(const PowerMatrix& power, const MelFilterbank& fb, std::uint32_t hop = 256,
                           std::uint32_t sample_rate = 22050) {
  require(power.n_bins == fb.n_bins, "ShapeMismatch",
          "power has " + std::to_string(power.n_bins) + " bins, filterbank expects " + std::to_string(fb.n_bins));
  Spectrogram s;
  s.n_mels = fb.n_mels;
  s.n_frames = power.n_frames;
  s.hop = hop;
  s.sample_rate = sample_rate;
  s.values.assign(s.n_mels * s.n_frames, 0.0f);
  std::vector<double> acc(power.n_frames);
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      const double wk = fb.at(m, k);
      if (wk == 0.0) continue;
      const double* row = &power.values[k * power.n_frames];
      for (std::size_t f = 0; f < power.n_frames; ++f) acc[f] += wk * row[f];
    }
    for (std::size_t f = 0; f < power.n_frames; ++f) {
      s.values[m * s.n_frames + f] = static_cast<float>(std::log(std::max(acc[f], kLogFloor)));
    }
  }
  return s;
}

/// Full front end: resampled waveform -> log-mel spectrogram.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(FeatureConfig cfg = {})
      : cfg_(cfg), fb_(mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.effective_fmax())) {}

  Spectrogram operator()(const Waveform& w) const {
    require(w.sample_rate == cfg_.sample_rate, "SampleRateMismatch",
            "expected " + std::to_string(cfg_.sample_rate) + " Hz input, got " + std::to_string(w.sample_rate));
    return log_mel(stft_power(w, cfg_.n_fft, cfg_.hop), fb_, static_cast<std::uint32_t>(cfg_.hop),
                   static_cast<std::uint32_t>(cfg_.sample_rate));
  }

  const FeatureConfig& config() const { return cfg_; }
  const MelFilterbank& filterbank() const { return fb_; }

 private:
  FeatureConfig cfg_;
  MelFilterbank fb_;
};

/// Window geometry used by segment(): length rounds half up, hop rounds down.
struct SegmentGeometry {
  std::size_t window = 0;
  std::size_t hop = 0;
};

inline SegmentGeometry segment_geometry(int sample_rate, double window_ms = 930.0, double overlap = 0.5) {
  require(sample_rate > 0, "InvalidArgument", "sample_rate must be positive");
  require(overlap >= 0.0 && overlap < 1.0, "InvalidArgument", "overlap must be in [0, 1)");
  SegmentGeometry g;
  g.window = static_cast<std::size_t>(std::floor(window_ms * sample_rate / 1000.0 + 0.5));
  g.hop = static_cast<std::size_t>(std::floor(static_cast<double>(g.window) * (1.0 - overlap)));
  require(g.window > 0 && g.hop > 0, "InvalidArgument", "segment window too short");
  return g;
}

/// Start offsets of every full window; trailing partial windows are dropped.
inline std::vector<std::size_t> segment_offsets(std::size_t length, const SegmentGeometry& g) {
  std::vector<std::size_t> offsets;
  for (std::size_t start = 0; start + g.window <= length; start += g.hop) offsets.push_back(start);
  return offsets;
}

inline std::vector<Waveform> segment(const Waveform& w, double window_ms = 930.0, double overlap = 0.5) {
  validate(w);
  const auto g = segment_geometry(w.sample_rate, window_ms, overlap);
  std::vector<Waveform> out;
  for (std::size_t start : segment_offsets(w.samples.size(), g)) {
    Waveform seg;
    seg.sample_rate = w.sample_rate;
    seg.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(start),
                       w.samples.begin() + static_cast<std::ptrdiff_t>(start + g.window));
    out.push_back(std::move(seg));
  }
  return out;
}

}  // namespace micshift::dsp
