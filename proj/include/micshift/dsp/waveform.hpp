#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "micshift/core/error.hpp"

namespace micshift::dsp {

/// Mono audio signal with amplitudes nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 0;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Throws InvalidWaveform unless the waveform is non-empty, finite and has a positive rate.
inline void validate(const Waveform& w) {
  require(w.sample_rate > 0, "InvalidWaveform", "sample_rate must be positive");
  require(!w.samples.empty(), "InvalidWaveform", "waveform is empty");
  for (double s : w.samples) {
    require(std::isfinite(s), "InvalidWaveform", "waveform contains non-finite samples");
  }
}

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace micshift::dsp
