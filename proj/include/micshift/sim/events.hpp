#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "micshift/core/error.hpp"
#include "micshift/core/rng.hpp"
#include "micshift/dsp/fft.hpp"
#include "micshift/dsp/waveform.hpp"

namespace micshift::sim {

enum class EventKind { kTone, kChirp, kHarmonicStack, kAmTone, kNoiseBurst, kClickTrain, kWarble, kFilteredNoise };

inline const char* kind_name(EventKind k) {
  switch (k) {
    case EventKind::kTone: return "tone";
    case EventKind::kChirp: return "chirp";
    case EventKind::kHarmonicStack: return "harmonic_stack";
    case EventKind::kAmTone: return "am_tone";
    case EventKind::kNoiseBurst: return "noise_burst";
    case EventKind::kClickTrain: return "click_train";
    case EventKind::kWarble: return "warble";
    case EventKind::kFilteredNoise: return "filtered_noise";
  }
  return "?";
}

inline EventKind kind_from_name(const std::string& s) {
  for (int i = 0; i < 8; ++i) {
    const auto k = static_cast<EventKind>(i);
    if (s == kind_name(k)) return k;
  }
  throw Error("UnknownEventKind", "unknown event kind '" + s + "'");
}

/// A synthetic sound-event class. Frequency and rate ranges are drawn
/// uniformly per rendered event.
struct EventClass {
  int id = 0;
  EventKind kind = EventKind::kTone;
  double f_lo = 0.0, f_hi = 0.0;        // main frequency (Hz)
  double f2_lo = 0.0, f2_hi = 0.0;      // chirp end / FM deviation / bandwidth
  double rate_lo = 0.0, rate_hi = 0.0;  // AM / FM / click / burst rate (Hz)
  bool sparse = false;                  // activity threshold category
};

/// The eight default classes, one per kind, with disjoint parameter ranges.
inline std::vector<EventClass> default_event_classes(int n_classes = 8) {
  require(n_classes >= 2 && n_classes <= 8, "InvalidArgument", "default classes support 2..8 classes");
  std::vector<EventClass> all = {
      {0, EventKind::kTone, 400, 900, 0, 0, 0, 0, false},
      {1, EventKind::kChirp, 600, 1200, 3000, 5000, 0, 0, false},
      {2, EventKind::kHarmonicStack, 150, 300, 0, 0, 0, 0, false},
      {3, EventKind::kAmTone, 1500, 2500, 0, 0, 6, 14, false},
      {4, EventKind::kNoiseBurst, 0, 0, 0, 0, 2, 4, true},
      {5, EventKind::kClickTrain, 0, 0, 0, 0, 6, 12, true},
      {6, EventKind::kWarble, 3000, 4500, 200, 400, 4, 8, false},
      {7, EventKind::kFilteredNoise, 5000, 7000, 1000, 2000, 0, 0, false},
  };
  all.resize(static_cast<std::size_t>(n_classes));
  return all;
}

/// Rendered clip plus the exact per-sample activity mask (envelope > -40 dBFS).
struct RenderedEvent {
  dsp::Waveform waveform;
  std::vector<std::uint8_t> activity;
};

struct SynthOptions {
  int sample_rate = 22050;
  double ambient_noise_db = -66.0;  // room noise under every clip
  double min_level = 0.3;
  double max_level = 0.68;
};

inline constexpr double kMinEventDuration = 0.93;
inline constexpr double kPeakLimit = 0.7;
inline constexpr double kActivityThreshold = 0.01;  // -40 dBFS

namespace detail {

inline std::vector<double> band_noise(std::size_t n, double lo_hz, double hi_hz, int rate, Rng& rng) {
  const std::size_t m = dsp::next_power_of_two(n);
  std::vector<std::complex<double>> buf(m);
  for (auto& v : buf) v = rng.normal();
  const dsp::FftPlan plan(m);
  plan.transform(buf);
  for (std::size_t k = 0; k < m; ++k) {
    const double hz = static_cast<double>(std::min(k, m - k)) * rate / static_cast<double>(m);
    if (hz < lo_hz || hz > hi_hz) buf[k] = 0.0;
  }
  plan.transform(buf, true);
  std::vector<double> out(n);
  double peak = 1e-12;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = buf[i].real();
    peak = std::max(peak, std::abs(out[i]));
  }
  for (auto& v : out) v /= peak;
  return out;
}

inline double attack_release(double t, double start, double end, double attack = 0.01, double release = 0.03) {
  if (t < start || t > end) return 0.0;
  return std::min({1.0, (t - start) / attack, (end - t) / release});
}

}  // namespace detail

/// Renders one event of `cls`. Deterministic in (cls, duration_s, seed); the
/// peak amplitude never exceeds 0.7.
inline RenderedEvent synth_event_with_activity(const EventClass& cls, double duration_s, std::uint64_t seed,
                                               const SynthOptions& opt = {}) {
  require(duration_s >= kMinEventDuration, "InvalidArgument", "event shorter than one analysis window");
  if (static_cast<int>(cls.kind) < 0 || static_cast<int>(cls.kind) > 7) {
    throw Error("UnknownEventKind", "unknown event kind");
  }
  Rng rng(seed);
  const int sr = opt.sample_rate;
  const auto n = static_cast<std::size_t>(std::lround(duration_s * sr));
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> tone(n, 0.0), env(n, 0.0);

  const double onset = rng.uniform(0.0, 0.2 * duration_s);
  const double offset = onset + rng.uniform(0.6, 1.0) * (duration_s - onset);
  const double f = rng.uniform(cls.f_lo, cls.f_hi);
  const double f2 = rng.uniform(cls.f2_lo, cls.f2_hi);
  const double rate = rng.uniform(cls.rate_lo, cls.rate_hi);
  const double phase0 = rng.uniform(0.0, two_pi);

  switch (cls.kind) {
    case EventKind::kTone:
      for (std::size_t i = 0; i < n; ++i) tone[i] = std::sin(two_pi * f * i / sr + phase0);
      break;
    case EventKind::kChirp: {
      double phase = phase0;
      const double span = std::max(offset - onset, 1e-3);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = std::clamp((static_cast<double>(i) / sr - onset) / span, 0.0, 1.0);
        phase += two_pi * (f + (f2 - f) * t) / sr;
        tone[i] = std::sin(phase);
      }
      break;
    }
    case EventKind::kHarmonicStack:
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int h = 1; h <= 10; ++h) acc += std::sin(two_pi * f * h * i / sr + phase0 * h) / h;
        tone[i] = acc / 2.0;
      }
      break;
    case EventKind::kAmTone:
      for (std::size_t i = 0; i < n; ++i) {
        const double am = 1.0 - 0.9 * 0.5 * (1.0 + std::cos(two_pi * rate * i / sr));
        tone[i] = am * std::sin(two_pi * f * i / sr + phase0);
      }
      break;
    case EventKind::kWarble: {
      double phase = phase0;
      for (std::size_t i = 0; i < n; ++i) {
        phase += two_pi * (f + f2 * std::sin(two_pi * rate * i / sr)) / sr;
        tone[i] = std::sin(phase);
      }
      break;
    }
    case EventKind::kFilteredNoise:
      tone = detail::band_noise(n, f - f2 / 2.0, f + f2 / 2.0, sr, rng);
      break;
    case EventKind::kNoiseBurst:
    case EventKind::kClickTrain:
      for (auto& v : tone) v = std::clamp(rng.normal(0.0, 0.35), -1.0, 1.0);
      break;
  }

  if (cls.kind == EventKind::kNoiseBurst) {
    const int bursts = static_cast<int>(std::lround(rate));
    for (int b = 0; b < bursts; ++b) {
      const double len = rng.uniform(0.06, 0.15);
      const double start = rng.uniform(onset, std::max(onset, offset - len));
      for (std::size_t i = 0; i < n; ++i) {
        env[i] = std::max(env[i], detail::attack_release(static_cast<double>(i) / sr, start, start + len, 0.005, 0.02));
      }
    }
  } else if (cls.kind == EventKind::kClickTrain) {
    const double tau = 0.008;
    for (double c = onset; c < offset; c += 1.0 / rate) {
      const auto first = static_cast<std::size_t>(c * sr);
      for (std::size_t i = first; i < n && i < first + static_cast<std::size_t>(0.1 * sr); ++i) {
        env[i] = std::max(env[i], std::exp(-(static_cast<double>(i - first) / sr) / tau));
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) env[i] = detail::attack_release(static_cast<double>(i) / sr, onset, offset);
  }

  double peak = 1e-12;
  for (std::size_t i = 0; i < n; ++i) {
    tone[i] *= env[i];
    peak = std::max(peak, std::abs(tone[i]));
  }
  const double level = rng.uniform(opt.min_level, opt.max_level);
  RenderedEvent out;
  out.waveform.sample_rate = sr;
  out.waveform.samples.resize(n);
  out.activity.resize(n);
  const double ambient = std::pow(10.0, opt.ambient_noise_db / 20.0);
  double out_peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.waveform.samples[i] = tone[i] * level / peak + rng.normal(0.0, ambient);
    out.activity[i] = env[i] * level >= kActivityThreshold ? 1 : 0;
    out_peak = std::max(out_peak, std::abs(out.waveform.samples[i]));
  }
  if (out_peak > kPeakLimit) {
    for (auto& s : out.waveform.samples) s *= kPeakLimit / out_peak;
  }
  return out;
}

inline dsp::Waveform synth_event(const EventClass& cls, double duration_s, std::uint64_t seed,
                                 const SynthOptions& opt = {}) {
  return synth_event_with_activity(cls, duration_s, seed, opt).waveform;
}

}  // namespace micshift::sim
