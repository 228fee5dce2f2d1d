#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "micshift/core/error.hpp"
#include "micshift/core/rng.hpp"
#include "micshift/dsp/features.hpp"

namespace micshift::augment {

enum class McMode { kGen, kAdapt };

inline McMode mc_mode_from_name(const std::string& s) {
  if (s == "gen" || s == "Gen") return McMode::kGen;
  if (s == "adapt" || s == "Adapt") return McMode::kAdapt;
  throw Error("SchemaError", "unknown mic_convert mode '" + s + "' (expected gen|adapt)");
}

inline const char* mc_mode_name(McMode m) { return m == McMode::kGen ? "gen" : "adapt"; }

/// Source-device spectrograms to target devices. `convert(s, key, t)` maps
/// spectrogram `s` (training-set item `key`) to target `t`; banks backed by
/// a precomputed table may ignore `s` and look up `key`. Several source
/// devices share one bank when each has its own model to the same target.
struct ConverterBank {
  std::vector<std::string> source_devices;
  std::vector<std::string> targets;
  std::function<dsp::Spectrogram(const dsp::Spectrogram&, std::size_t key, std::size_t target)> convert;

  bool accepts(const std::string& device) const {
    return std::find(source_devices.begin(), source_devices.end(), device) != source_devices.end();
  }
};

/// Which target to convert to, or nullopt for pass-through. Gen draws
/// uniformly over the targets (plus the source itself if `include_source`);
/// Adapt converts to target 0 with probability p.
inline std::optional<std::size_t> mic_convert_choice(McMode mode, std::size_t n_targets, double p, bool include_source,
                                                     Rng& rng) {
  require(n_targets > 0, "InvalidArgument", "mic_convert needs at least one target");
  if (mode == McMode::kAdapt) {
    if (!rng.bernoulli(p)) return std::nullopt;
    return 0;
  }
  const std::size_t k = rng.index(n_targets + (include_source ? 1 : 0));
  if (k == n_targets) return std::nullopt;
  return k;
}

inline dsp::Spectrogram mic_convert_augment(const dsp::Spectrogram& s, const std::string& device, std::size_t key,
                                            const ConverterBank& bank, McMode mode, double p, bool include_source,
                                            Rng& rng) {
  require(bank.accepts(device), "DeviceMismatch", "mic_convert models do not take input from " + device);
  require(mode != McMode::kAdapt || bank.targets.size() == 1, "InvalidArgument", "adapt mode uses exactly one target");
  const auto choice = mic_convert_choice(mode, bank.targets.size(), p, include_source, rng);
  if (!choice) return s;
  return bank.convert(s, key, *choice);
}

}  // namespace micshift::augment
