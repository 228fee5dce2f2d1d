#pragma once

#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "micshift/core/error.hpp"
#include "micshift/core/rng.hpp"
#include "micshift/dsp/features.hpp"
#include "micshift/dsp/fft.hpp"
#include "micshift/dsp/waveform.hpp"

namespace micshift::sim {

struct GainPoint {
  double hz = 0.0;
  double db = 0.0;
};

/// Simulated recording device: magnitude response, self-noise and clipping.
struct DeviceProfile {
  std::string name;
  std::vector<GainPoint> gain_curve;        // linear in log-frequency between points
  std::optional<double> noise_floor_db;     // dBFS RMS; nullopt = noiseless
  double clip_level = 1.0;
};

inline void validate(const DeviceProfile& d) {
  require(!d.name.empty(), "InvalidDevice", "device name is empty");
  require(!d.gain_curve.empty(), "InvalidDevice", d.name + ": gain curve is empty");
  for (std::size_t i = 0; i < d.gain_curve.size(); ++i) {
    const auto& p = d.gain_curve[i];
    require(p.hz > 0.0, "InvalidDevice", d.name + ": control-point frequencies must be positive");
    require(p.db >= -40.0 && p.db <= 40.0, "InvalidDevice", d.name + ": gains must lie in [-40, 40] dB");
    if (i > 0) {
      require(p.hz > d.gain_curve[i - 1].hz, "InvalidDevice", d.name + ": frequencies must strictly increase");
    }
  }
  require(d.clip_level > 0.0 && d.clip_level <= 1.0, "InvalidDevice", d.name + ": clip_level must be in (0, 1]");
}

/// Gain (dB) at `hz`: held constant outside the control points.
inline double gain_db_at(const DeviceProfile& d, double hz) {
  const auto& c = d.gain_curve;
  if (hz <= c.front().hz) return c.front().db;
  if (hz >= c.back().hz) return c.back().db;
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (hz <= c[i].hz) {
      const double t = std::log(hz / c[i - 1].hz) / std::log(c[i].hz / c[i - 1].hz);
      return c[i - 1].db + t * (c[i].db - c[i - 1].db);
    }
  }
  return c.back().db;
}

inline constexpr std::size_t kFirTaps = 512;

/// Linear-phase FIR by frequency sampling with a Hann taper. The impulse is
/// centered at tap kFirTaps / 2, so a flat 0 dB curve yields an exact delta.
inline std::vector<double> design_fir(const DeviceProfile& d, int sample_rate, std::size_t taps = kFirTaps) {
  validate(d);
  const dsp::FftPlan plan(taps);
  std::vector<std::complex<double>> h(taps);
  for (std::size_t k = 0; k < taps; ++k) {
    const std::size_t kk = std::min(k, taps - k);
    const double hz = static_cast<double>(kk) * sample_rate / static_cast<double>(taps);
    h[k] = std::pow(10.0, gain_db_at(d, hz) / 20.0);
  }
  plan.transform(h, /*inverse=*/true);
  const auto window = dsp::hann_window(taps);
  std::vector<double> fir(taps);
  for (std::size_t n = 0; n < taps; ++n) fir[n] = h[(n + taps - taps / 2) % taps].real() * window[n];
  return fir;
}

/// Device with its FIR designed once; apply() is reentrant.
class DeviceChain {
 public:
  DeviceChain(DeviceProfile profile, int sample_rate)
      : profile_(std::move(profile)),
        sample_rate_(sample_rate),
        fir_(design_fir(profile_, sample_rate)),
        plan_(kBlockFft),
        fir_spectrum_(kBlockFft) {
    for (std::size_t i = 0; i < fir_.size(); ++i) fir_spectrum_[i] = fir_[i];
    plan_.transform(fir_spectrum_);
  }

  dsp::Waveform apply(const dsp::Waveform& w, std::uint64_t seed) const {
    dsp::validate(w);
    require(w.sample_rate == sample_rate_, "SampleRateMismatch", "device chain designed for another rate");
    // Overlap-add block convolution, keeping the delay-compensated "same" part.
    const std::size_t n = w.samples.size(), delay = fir_.size() / 2;
    const std::size_t block = kBlockFft - fir_.size() + 1;
    std::vector<double> full(n + fir_.size() - 1, 0.0);
    std::vector<std::complex<double>> buf(kBlockFft);
    for (std::size_t start = 0; start < n; start += block) {
      const std::size_t len = std::min(block, n - start);
      std::fill(buf.begin(), buf.end(), std::complex<double>{});
      for (std::size_t i = 0; i < len; ++i) buf[i] = w.samples[start + i];
      plan_.transform(buf);
      for (std::size_t k = 0; k < kBlockFft; ++k) buf[k] *= fir_spectrum_[k];
      plan_.transform(buf, /*inverse=*/true);
      for (std::size_t i = 0; i < len + fir_.size() - 1; ++i) full[start + i] += buf[i].real();
    }
    dsp::Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.assign(full.begin() + static_cast<std::ptrdiff_t>(delay),
                       full.begin() + static_cast<std::ptrdiff_t>(delay + n));
    if (profile_.noise_floor_db) {
      Rng rng(seed);
      const double sigma = std::pow(10.0, *profile_.noise_floor_db / 20.0);
      for (auto& s : out.samples) s += rng.normal(0.0, sigma);
    }
    for (auto& s : out.samples) s = std::clamp(s, -profile_.clip_level, profile_.clip_level);
    return out;
  }

  const DeviceProfile& profile() const { return profile_; }
  const std::vector<double>& fir() const { return fir_; }

 private:
  static constexpr std::size_t kBlockFft = 4096;

  DeviceProfile profile_;
  int sample_rate_;
  std::vector<double> fir_;
  dsp::FftPlan plan_;
  std::vector<std::complex<double>> fir_spectrum_;
};

/// FIR filtering, additive Gaussian self-noise, then hard clipping.
inline dsp::Waveform apply_device(const dsp::Waveform& w, const DeviceProfile& d, std::uint64_t seed) {
  return DeviceChain(d, w.sample_rate).apply(w, seed);
}

/// Mel-band power gain of a device in dB, assuming locally flat input:
/// 10 log10(sum_k w_mk |H(f_k)|^2 / sum_k w_mk).
inline std::vector<double> analytic_mel_gain_db(const DeviceProfile& d, const dsp::MelFilterbank& fb, int sample_rate) {
  const std::size_t n_fft = (fb.n_bins - 1) * 2;
  std::vector<double> out(fb.n_mels);
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      const double wk = fb.at(m, k);
      if (wk == 0.0) continue;
      const double hz = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      num += wk * std::pow(10.0, gain_db_at(d, hz) / 10.0);
      den += wk;
    }
    out[m] = den > 0.0 ? 10.0 * std::log10(num / den) : 0.0;
  }
  return out;
}

/// Analytic target-minus-source difference spectrum over mel bands (dB).
inline std::vector<double> analytic_difference_db(const DeviceProfile& target, const DeviceProfile& source,
                                                  const dsp::MelFilterbank& fb, int sample_rate) {
  auto t = analytic_mel_gain_db(target, fb, sample_rate);
  const auto s = analytic_mel_gain_db(source, fb, sample_rate);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] -= s[i];
  return t;
}

inline nlohmann::json to_json(const DeviceProfile& d) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : d.gain_curve) curve.push_back({p.hz, p.db});
  nlohmann::json j{{"name", d.name}, {"gain_curve", curve}, {"clip_level", d.clip_level}};
  j["noise_floor_db"] = d.noise_floor_db ? nlohmann::json(*d.noise_floor_db) : nlohmann::json(nullptr);
  return j;
}

inline DeviceProfile device_from_json(const nlohmann::json& j) {
  require(j.is_object(), "SchemaError", "device profile must be an object");
  for (const auto& [key, _] : j.items()) {
    require(key == "name" || key == "gain_curve" || key == "noise_floor_db" || key == "clip_level", "SchemaError",
            "unknown device key '" + key + "'");
  }
  DeviceProfile d;
  try {
    d.name = j.at("name").get<std::string>();
    for (const auto& p : j.at("gain_curve")) d.gain_curve.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    if (j.contains("noise_floor_db") && !j["noise_floor_db"].is_null()) d.noise_floor_db = j["noise_floor_db"].get<double>();
    d.clip_level = j.value("clip_level", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error("SchemaError", std::string("device profile: ") + e.what());
  }
  validate(d);
  return d;
}

/// One flat source plus six colored targets.
inline std::vector<DeviceProfile> default_device_suite() {
  return {
      {"S_flat", {{100.0, 0.0}, {10000.0, 0.0}}, std::nullopt, 1.0},
      {"T1_bright", {{1500.0, 0.0}, {5000.0, 15.0}}, std::nullopt, 1.0},
      {"T2_presence", {{800.0, 0.0}, {2500.0, 12.0}, {4500.0, 12.0}, {9000.0, 0.0}}, std::nullopt, 1.0},
      {"T3_thin", {{200.0, -30.0}, {1500.0, -12.0}, {4000.0, 0.0}}, std::nullopt, 1.0},
      {"T4_clipping", {{100.0, 8.0}, {10000.0, 8.0}}, std::nullopt, 0.25},
      {"T5_noisy", {{500.0, 0.0}, {6000.0, -6.0}}, -45.0, 1.0},
      {"T6_dark", {{1500.0, 0.0}, {5000.0, -25.0}}, std::nullopt, 1.0},
  };
}

}  // namespace micshift::sim
