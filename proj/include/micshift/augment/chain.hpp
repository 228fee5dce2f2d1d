#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "micshift/augment/mic_convert.hpp"
#include "micshift/augment/spectral_aug.hpp"
#include "micshift/augment/waveform_aug.hpp"
#include "micshift/core/error.hpp"
#include "micshift/core/rng.hpp"
#include "micshift/dsp/features.hpp"

namespace micshift::augment {

enum class AugmentKind {
  kGaussianNoise,
  kReverb,
  kPitchShift,
  kSpecAugment,
  kMixup,
  kFilterAugment,
  kFreqMixStyle,
  kRfn,
  kMicConvert,
};

inline const std::vector<std::pair<AugmentKind, const char*>>& kind_names() {
  static const std::vector<std::pair<AugmentKind, const char*>> names = {
      {AugmentKind::kGaussianNoise, "gaussian_noise"}, {AugmentKind::kReverb, "reverb"},
      {AugmentKind::kPitchShift, "pitch_shift"},       {AugmentKind::kSpecAugment, "spec_augment"},
      {AugmentKind::kMixup, "mixup"},                  {AugmentKind::kFilterAugment, "filter_augment"},
      {AugmentKind::kFreqMixStyle, "freq_mixstyle"},   {AugmentKind::kRfn, "rfn"},
      {AugmentKind::kMicConvert, "mic_convert"},
  };
  return names;
}

inline const char* kind_name(AugmentKind k) {
  for (const auto& [kind, name] : kind_names()) {
    if (kind == k) return name;
  }
  return "?";
}

inline AugmentKind kind_from_name(const std::string& s) {
  for (const auto& [kind, name] : kind_names()) {
    if (s == name) return kind;
  }
  throw Error("SchemaError", "unknown augmentation kind '" + s + "'");
}

/// One augmentation with its firing probability and kind-specific parameters.
struct AugmentSpec {
  AugmentKind kind = AugmentKind::kSpecAugment;
  double p = 0.5;
  // gaussian_noise
  double snr_db_lo = 10.0, snr_db_hi = 30.0;
  // reverb
  double t60_lo = 0.2, t60_hi = 0.8;
  // pitch_shift
  double semitones_lo = -2.0, semitones_hi = 2.0;
  // spec_augment
  std::size_t n_time_masks = 2, n_freq_masks = 2, max_time_width = 10, max_freq_width = 8;
  // mixup / freq_mixstyle
  double alpha = 0.2;
  // filter_augment
  std::size_t bands_lo = 3, bands_hi = 6;
  double max_gain_db = 6.0;
  // rfn
  double relax = 0.5;
  bool rfn_per_channel = false;
  // mic_convert
  McMode mode = McMode::kGen;
  bool include_source = true;

  bool operates_on_waveform() const {
    return kind == AugmentKind::kGaussianNoise || kind == AugmentKind::kReverb || kind == AugmentKind::kPitchShift;
  }
  bool operates_on_batch() const { return kind == AugmentKind::kMixup || kind == AugmentKind::kFreqMixStyle; }

  void validate() const {
    require(p >= 0.0 && p <= 1.0, "InvalidConfig", "augmentation probability must lie in [0, 1]");
    switch (kind) {
      case AugmentKind::kGaussianNoise:
        require(snr_db_lo <= snr_db_hi, "InvalidConfig", "snr range is empty");
        break;
      case AugmentKind::kReverb:
        require(t60_lo > 0.0 && t60_lo <= t60_hi && t60_hi <= 0.8, "InvalidConfig", "t60 range must lie in (0, 0.8] s");
        break;
      case AugmentKind::kPitchShift:
        require(semitones_lo >= -2.0 && semitones_lo <= semitones_hi && semitones_hi <= 2.0, "InvalidConfig",
                "semitone range must lie in [-2, 2]");
        break;
      case AugmentKind::kMixup:
      case AugmentKind::kFreqMixStyle:
        require(alpha > 0.0, "InvalidConfig", "alpha must be positive");
        break;
      case AugmentKind::kFilterAugment:
        require(bands_lo >= 2 && bands_lo <= bands_hi, "InvalidConfig", "band range must satisfy 2 <= lo <= hi");
        require(max_gain_db >= 0.0, "InvalidConfig", "max_gain_db must be non-negative");
        break;
      case AugmentKind::kRfn:
        require(relax >= 0.0 && relax <= 1.0, "InvalidConfig", "relax must lie in [0, 1]");
        break;
      default: break;
    }
  }
};

/// Kind defaults: everything at p = 0.5 except rfn (always on, a layer) and
/// Gen-mode conversion (always drawn); Freq-MixStyle uses α = 0.3.
inline AugmentSpec default_spec(AugmentKind kind) {
  AugmentSpec s;
  s.kind = kind;
  if (kind == AugmentKind::kFreqMixStyle) s.alpha = 0.3;
  if (kind == AugmentKind::kRfn) s.p = 1.0;
  if (kind == AugmentKind::kMicConvert) s.p = 1.0;
  return s;
}

inline nlohmann::json to_json(const AugmentSpec& s) {
  nlohmann::json j{{"kind", kind_name(s.kind)}, {"p", s.p}};
  switch (s.kind) {
    case AugmentKind::kGaussianNoise: j["snr_db"] = {s.snr_db_lo, s.snr_db_hi}; break;
    case AugmentKind::kReverb: j["t60"] = {s.t60_lo, s.t60_hi}; break;
    case AugmentKind::kPitchShift: j["semitones"] = {s.semitones_lo, s.semitones_hi}; break;
    case AugmentKind::kSpecAugment:
      j["n_time_masks"] = s.n_time_masks;
      j["n_freq_masks"] = s.n_freq_masks;
      j["max_time_width"] = s.max_time_width;
      j["max_freq_width"] = s.max_freq_width;
      break;
    case AugmentKind::kMixup:
    case AugmentKind::kFreqMixStyle: j["alpha"] = s.alpha; break;
    case AugmentKind::kFilterAugment:
      j["n_bands"] = {s.bands_lo, s.bands_hi};
      j["max_gain_db"] = s.max_gain_db;
      break;
    case AugmentKind::kRfn:
      j["relax"] = s.relax;
      j["per_channel"] = s.rfn_per_channel;
      break;
    case AugmentKind::kMicConvert:
      j["mode"] = mc_mode_name(s.mode);
      j["include_source"] = s.include_source;
      break;
  }
  return j;
}

inline AugmentSpec spec_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.contains("kind"), "SchemaError", "augmentation entry must be an object with a 'kind'");
  AugmentSpec s = default_spec(kind_from_name(j.at("kind").get<std::string>()));
  auto range = [&](const nlohmann::json& v, auto& lo, auto& hi, const char* key) {
    require(v.is_array() && v.size() == 2, "SchemaError", std::string(key) + " must be a [lo, hi] pair");
    v.at(0).get_to(lo);
    v.at(1).get_to(hi);
  };
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "kind") continue;
      if (key == "p") v.get_to(s.p);
      else if (key == "snr_db" && s.kind == AugmentKind::kGaussianNoise) range(v, s.snr_db_lo, s.snr_db_hi, "snr_db");
      else if (key == "t60" && s.kind == AugmentKind::kReverb) range(v, s.t60_lo, s.t60_hi, "t60");
      else if (key == "semitones" && s.kind == AugmentKind::kPitchShift) range(v, s.semitones_lo, s.semitones_hi, "semitones");
      else if (key == "n_time_masks" && s.kind == AugmentKind::kSpecAugment) v.get_to(s.n_time_masks);
      else if (key == "n_freq_masks" && s.kind == AugmentKind::kSpecAugment) v.get_to(s.n_freq_masks);
      else if (key == "max_time_width" && s.kind == AugmentKind::kSpecAugment) v.get_to(s.max_time_width);
      else if (key == "max_freq_width" && s.kind == AugmentKind::kSpecAugment) v.get_to(s.max_freq_width);
      else if (key == "alpha" && (s.kind == AugmentKind::kMixup || s.kind == AugmentKind::kFreqMixStyle)) v.get_to(s.alpha);
      else if (key == "n_bands" && s.kind == AugmentKind::kFilterAugment) range(v, s.bands_lo, s.bands_hi, "n_bands");
      else if (key == "max_gain_db" && s.kind == AugmentKind::kFilterAugment) v.get_to(s.max_gain_db);
      else if (key == "relax" && s.kind == AugmentKind::kRfn) v.get_to(s.relax);
      else if (key == "per_channel" && s.kind == AugmentKind::kRfn) v.get_to(s.rfn_per_channel);
      else if (key == "mode" && s.kind == AugmentKind::kMicConvert) s.mode = mc_mode_from_name(v.get<std::string>());
      else if (key == "include_source" && s.kind == AugmentKind::kMicConvert) v.get_to(s.include_source);
      else throw Error("SchemaError", "unknown key '" + key + "' for augmentation " + kind_name(s.kind));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("SchemaError", std::string("augmentation ") + kind_name(s.kind) + ": " + e.what());
  }
  s.validate();
  return s;
}

/// Probability gate shared by every kind.
inline bool fires(double p, Rng& rng) { return rng.bernoulli(p); }

/// One training example as seen by the per-sample augmentations.
struct SampleInput {
  const dsp::Spectrogram* spectrogram = nullptr;
  const std::vector<float>* waveform = nullptr;  // required by waveform kinds
  std::string device;
  std::size_t key = 0;
};

struct RfnSettings {
  double relax = 0.5;
  bool per_channel = false;
};

/// Ordered augmentation chain. Per sample: waveform kinds (then log-mel
/// re-extraction), mic_convert, spec_augment, filter_augment. Per batch:
/// mixup, freq_mixstyle. rfn is not a data transform; it configures the
/// classifier. Every call is stateless given its seed.
class AugmentChain {
 public:
  AugmentChain() = default;
  AugmentChain(std::vector<AugmentSpec> specs, dsp::FeatureConfig features = {}, const ConverterBank* bank = nullptr)
      : specs_(std::move(specs)), extract_(features), bank_(bank) {
    bool wave = false, mc = false;
    for (const auto& s : specs_) {
      s.validate();
      wave = wave || s.operates_on_waveform();
      if (s.kind == AugmentKind::kMicConvert) {
        mc = true;
        require(bank_ != nullptr, "InvalidConfig", "mic_convert needs trained conversion models");
      }
    }
    require(!(wave && mc), "InvalidConfig", "mic_convert cannot be combined with waveform augmentations");
  }

  const std::vector<AugmentSpec>& specs() const { return specs_; }
  bool empty() const { return specs_.empty(); }

  bool needs_waveforms() const {
    for (const auto& s : specs_) {
      if (s.operates_on_waveform()) return true;
    }
    return false;
  }

  std::optional<RfnSettings> rfn() const {
    for (const auto& s : specs_) {
      if (s.kind == AugmentKind::kRfn) return RfnSettings{s.relax, s.rfn_per_channel};
    }
    return std::nullopt;
  }

  dsp::Spectrogram apply_sample(const SampleInput& in, std::uint64_t seed) const {
    require(in.spectrogram != nullptr, "InvalidArgument", "sample has no spectrogram");
    dsp::Spectrogram s = *in.spectrogram;
    // Waveform stage
    std::optional<dsp::Waveform> w;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const auto& spec = specs_[i];
      if (!spec.operates_on_waveform()) continue;
      Rng rng(derive_seed(seed, {i}));
      if (!fires(spec.p, rng)) continue;
      if (!w) {
        require(in.waveform != nullptr && !in.waveform->empty(), "MissingWaveform",
                std::string(kind_name(spec.kind)) + " needs the segment waveform");
        w.emplace();
        w->sample_rate = extract_.config().sample_rate;
        w->samples.assign(in.waveform->begin(), in.waveform->end());
      }
      switch (spec.kind) {
        case AugmentKind::kGaussianNoise:
          *w = gaussian_noise(*w, rng.uniform(spec.snr_db_lo, spec.snr_db_hi), rng);
          break;
        case AugmentKind::kReverb: {
          const auto rir = synthetic_rir(rng.uniform(spec.t60_lo, spec.t60_hi), w->sample_rate, rng);
          *w = reverb(*w, rir);
          break;
        }
        case AugmentKind::kPitchShift:
          *w = pitch_shift(*w, rng.uniform(spec.semitones_lo, spec.semitones_hi));
          break;
        default: break;
      }
    }
    if (w) s = extract_(*w);
    // Spectrogram stage
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const auto& spec = specs_[i];
      Rng rng(derive_seed(seed, {i}));
      switch (spec.kind) {
        case AugmentKind::kMicConvert:
          s = mic_convert_augment(s, in.device, in.key, *bank_, spec.mode, spec.p, spec.include_source, rng);
          break;
        case AugmentKind::kSpecAugment:
          if (fires(spec.p, rng)) {
            s = spec_augment(s, spec.n_time_masks, spec.n_freq_masks, spec.max_time_width, spec.max_freq_width, rng);
          }
          break;
        case AugmentKind::kFilterAugment:
          if (fires(spec.p, rng)) s = filter_augment(s, spec.bands_lo, spec.bands_hi, spec.max_gain_db, rng);
          break;
        default: break;
      }
    }
    return s;
  }

  LabeledBatch apply_batch(LabeledBatch b, std::uint64_t seed) const {
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const auto& spec = specs_[i];
      if (!spec.operates_on_batch() || b.n < 2) continue;
      Rng rng(derive_seed(seed, {i}));
      if (!fires(spec.p, rng)) continue;
      b = spec.kind == AugmentKind::kMixup ? mixup(b, spec.alpha, rng) : freq_mixstyle(b, spec.alpha, rng);
    }
    return b;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : specs_) j.push_back(augment::to_json(s));
    return j;
  }

 private:
  std::vector<AugmentSpec> specs_;
  dsp::LogMelExtractor extract_;
  const ConverterBank* bank_ = nullptr;
};

}  // namespace micshift::augment
