#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "micshift/cyclegan/model.hpp"
#include "micshift/dsp/spectral.hpp"
#include "micshift/sim/device.hpp"
#include "micshift/sim/events.hpp"

namespace micshift::pipeline {

inline double mean_abs_error(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), "ShapeMismatch", "MAE needs equal, non-empty vectors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// Temporal-average difference (dB per mel bin) between two spectrogram sets.
inline std::vector<double> measured_difference_db(const std::vector<dsp::Spectrogram>& target,
                                                  const std::vector<dsp::Spectrogram>& source) {
  auto d = dsp::difference_spectrum(dsp::temporal_average(target), dsp::temporal_average(source));
  for (auto& v : d) v *= dsp::kLnToDb;
  return d;
}

/// What a generator does to the average spectrum: temporal average of its
/// outputs minus that of its inputs, in dB per mel bin.
inline std::vector<double> induced_difference_db(const cyclegan::CycleGanModel<float>& m,
                                                 const std::vector<const dsp::Spectrogram*>& inputs,
                                                 cyclegan::Direction dir) {
  require(!inputs.empty(), "EmptyInput", "no spectrograms to convert");
  const auto out = cyclegan::convert_batch(m, inputs, dir);
  std::vector<dsp::Spectrogram> in;
  in.reserve(inputs.size());
  for (const auto* s : inputs) in.push_back(*s);
  return measured_difference_db(out, in);
}

struct WelchDifference {
  std::vector<double> freq_hz;
  std::vector<std::vector<double>> measured_db;  // per target, target minus source
  std::vector<std::vector<double>> analytic_db;
};

/// Welch-PSD difference spectra of each target against the source, averaged
/// over `n_events` freshly rendered events (one per class in turn) passed
/// through every device.
inline WelchDifference welch_differences(const std::vector<sim::DeviceProfile>& devices, std::size_t source,
                                         const std::vector<sim::EventClass>& classes, std::size_t n_events,
                                         double duration_s, std::uint64_t seed, int sample_rate = 22050,
                                         std::size_t seg_len = 1024) {
  require(source < devices.size() && !classes.empty() && n_events > 0, "InvalidArgument",
          "welch_differences needs a source device, classes and events");
  std::vector<sim::DeviceChain> chains;
  for (const auto& d : devices) chains.emplace_back(d, sample_rate);
  const std::size_t n_bins = seg_len / 2 + 1;
  std::vector<std::vector<double>> psd(devices.size(), std::vector<double>(n_bins, 0.0));
  sim::SynthOptions opt;
  opt.sample_rate = sample_rate;
  for (std::size_t e = 0; e < n_events; ++e) {
    const auto w = sim::synth_event(classes[e % classes.size()], duration_s, derive_seed(seed, {1, e}), opt);
    for (std::size_t d = 0; d < devices.size(); ++d) {
      const auto rec = chains[d].apply(w, derive_seed(seed, {2, e, d}));
      const auto s = dsp::welch_spectrum(rec, seg_len);
      for (std::size_t k = 0; k < n_bins; ++k) psd[d][k] += std::pow(10.0, s.power_db[k] / 10.0);
    }
  }
  WelchDifference out;
  for (std::size_t k = 0; k < n_bins; ++k) out.freq_hz.push_back(static_cast<double>(k) * sample_rate / seg_len);
  for (std::size_t d = 0; d < devices.size(); ++d) {
    if (d == source) continue;
    std::vector<double> meas(n_bins), ana(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) {
      meas[k] = 10.0 * std::log10(std::max(psd[d][k], 1e-30) / std::max(psd[source][k], 1e-30));
      ana[k] = sim::gain_db_at(devices[d], out.freq_hz[k]) - sim::gain_db_at(devices[source], out.freq_hz[k]);
    }
    out.measured_db.push_back(std::move(meas));
    out.analytic_db.push_back(std::move(ana));
  }
  return out;
}

}  // namespace micshift::pipeline
