#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "micshift/augment/chain.hpp"
#include "micshift/augment/rfn.hpp"
#include "micshift/tensor/grad_check.hpp"
#include "micshift/tensor/ops.hpp"
#include "micshift/core/rng.hpp"
#include "unit/test_oracles.hpp"

using namespace micshift;
using namespace micshift::augment;

namespace {

dsp::Waveform noise_wave(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  dsp::Waveform w;
  w.sample_rate = 22050;
  w.samples.resize(n);
  for (auto& v : w.samples) v = rng.normal(0.0, 0.2);
  return w;
}

dsp::Spectrogram random_spec(std::uint64_t seed, std::size_t mels = 80, std::size_t frames = 81) {
  Rng rng(seed);
  dsp::Spectrogram s;
  s.n_mels = mels;
  s.n_frames = frames;
  s.hop = 256;
  s.sample_rate = 22050;
  s.values.resize(mels * frames);
  for (auto& v : s.values) v = static_cast<float>(rng.normal(-5.0, 2.0));
  return s;
}

LabeledBatch random_batch(std::size_t n, std::uint64_t seed, std::size_t h = 8, std::size_t w = 12, std::size_t k = 4) {
  Rng rng(seed);
  LabeledBatch b{n, h, w, k, std::vector<float>(n * h * w), std::vector<double>(n * k, 0.0)};
  for (auto& v : b.x) v = static_cast<float>(rng.normal(1.0, 3.0));
  for (std::size_t i = 0; i < n; ++i) b.y[i * k + rng.index(k)] = 1.0;
  return b;
}

}  // namespace

TEST(GaussianNoise, RealizedSnrMatchesTarget) {
  const auto w = noise_wave(20000, 1);
  Rng rng(2);
  const auto out = gaussian_noise(w, 20.0, rng);
  std::vector<double> n(w.samples.size());
  for (std::size_t i = 0; i < n.size(); ++i) n[i] = out.samples[i] - w.samples[i];
  const double snr = 10.0 * std::log10(signal_power(w.samples) / signal_power(n));
  EXPECT_NEAR(snr, 20.0, 0.5);
}

TEST(GaussianNoise, InfiniteSnrAndSilenceAreIdentity) {
  const auto w = noise_wave(1000, 1);
  Rng rng(2);
  EXPECT_EQ(gaussian_noise(w, std::numeric_limits<double>::infinity(), rng).samples, w.samples);
  dsp::Waveform silent{std::vector<double>(100, 0.0), 22050};
  EXPECT_EQ(gaussian_noise(silent, 10.0, rng).samples, silent.samples);
}

TEST(GaussianNoise, SeededDeterminism) {
  const auto w = noise_wave(1000, 1);
  Rng a(5), b(5);
  EXPECT_EQ(gaussian_noise(w, 10.0, a).samples, gaussian_noise(w, 10.0, b).samples);
}

TEST(Reverb, UnitImpulseIsIdentity) {
  const auto w = noise_wave(500, 3);
  const auto out = reverb(w, dsp::Waveform{{1.0}, 22050});
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(out.samples[i], w.samples[i], 1e-12);
}

TEST(Reverb, DelayedImpulseShifts) {
  const auto w = noise_wave(200, 3);
  std::vector<double> rir(8, 0.0);
  rir[5] = 1.0;
  const auto out = reverb(w, dsp::Waveform{rir, 22050});
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(out.samples[i], 0.0, 1e-12);
  for (std::size_t i = 5; i < w.samples.size(); ++i) EXPECT_NEAR(out.samples[i], w.samples[i - 5], 1e-12);
}

TEST(Reverb, MatchesDirectConvolutionOnToySignal) {
  const auto w = noise_wave(32, 4);
  const auto rir = noise_wave(9, 5);
  const auto out = reverb(w, rir);
  double e_out = 0.0, e_ref = 0.0;
  for (std::size_t n = 0; n < 32; ++n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < rir.samples.size() && k <= n; ++k) acc += rir.samples[k] * w.samples[n - k];
    EXPECT_NEAR(out.samples[n], acc, 1e-6);
    e_out += out.samples[n] * out.samples[n];
    e_ref += acc * acc;
  }
  EXPECT_NEAR(e_out, e_ref, 1e-6);
}

TEST(Reverb, SyntheticRirDecaysBySixtyDb) {
  Rng rng(1);
  const auto h = synthetic_rir(0.5, 22050, rng);
  EXPECT_EQ(h.samples.size(), 11025u);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 1; i < 1001; ++i) head += h.samples[i] * h.samples[i];
  for (std::size_t i = h.samples.size() - 1000; i < h.samples.size(); ++i) tail += h.samples[i] * h.samples[i];
  EXPECT_NEAR(10.0 * std::log10(head / tail), 60.0 * (1.0 - 1000.0 / 11025.0), 3.0);
}

TEST(PitchShift, ZeroSemitonesIsIdentityAndLengthPreserved) {
  const auto w = noise_wave(4000, 6);
  EXPECT_EQ(pitch_shift(w, 0.0).samples, w.samples);
  for (double s : {-2.0, -0.5, 1.3, 2.0, 12.0}) EXPECT_EQ(pitch_shift(w, s).samples.size(), w.samples.size());
}

TEST(PitchShift, OctaveUpDoublesTone) {
  dsp::Waveform w{oracle::sine(500.0, 22050, 22050), 22050};
  const auto out = pitch_shift(w, 12.0);
  EXPECT_NEAR(oracle::dominant_frequency(out.samples, 22050, 1000, 8192), 1000.0, 5.0);
}

TEST(SpecAugment, ZeroMasksOrWidthsIsIdentity) {
  const auto s = random_spec(1);
  Rng rng(1);
  EXPECT_EQ(spec_augment(s, 0, 0, 10, 8, rng).values, s.values);
  EXPECT_EQ(spec_augment(s, 3, 3, 0, 0, rng).values, s.values);
}

TEST(SpecAugment, FrequencyMaskFillsExactRows) {
  const auto s = random_spec(2);
  const float fill = static_cast<float>(spectrogram_mean(s));
  const auto out = apply_masks(s, {{true, 10, 3}}, fill);
  std::size_t filled_rows = 0;
  for (std::size_t m = 0; m < s.n_mels; ++m) {
    bool all = true;
    for (std::size_t t = 0; t < s.n_frames; ++t) all = all && out.at(m, t) == fill;
    filled_rows += all;
    if (m < 10 || m >= 13) {
      for (std::size_t t = 0; t < s.n_frames; ++t) EXPECT_EQ(out.at(m, t), s.at(m, t));
    }
  }
  EXPECT_EQ(filled_rows, 3u);
}

TEST(SpecAugment, UnmaskedCellsBitIdentical) {
  const auto s = random_spec(3);
  Rng rng(9);
  const auto out = spec_augment(s, 2, 2, 10, 8, rng);
  const float fill = static_cast<float>(spectrogram_mean(s));
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (out.values[i] != fill) {
      EXPECT_EQ(out.values[i], s.values[i]);
    }
  }
}

TEST(Mixup, LambdaOneIsIdentity) {
  const auto b = random_batch(5, 1);
  Rng rng(1);
  const auto out = mixup_with(b, 1.0, rng.permutation(5));
  EXPECT_EQ(out.x, b.x);
  EXPECT_EQ(out.y, b.y);
}

TEST(Mixup, HalfMixesLabels) {
  auto b = random_batch(2, 2, 2, 2, 2);
  b.y = {1.0, 0.0, 0.0, 1.0};
  const auto out = mixup_with(b, 0.5, {1, 0});
  EXPECT_DOUBLE_EQ(out.y[0], 0.5);
  EXPECT_DOUBLE_EQ(out.y[1], 0.5);
}

TEST(Mixup, LabelsStayConvex) {
  const auto b = random_batch(16, 3);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto out = mixup(b, 0.2, rng);
    for (std::size_t i = 0; i < out.n; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < out.k; ++c) {
        EXPECT_GE(out.y[i * out.k + c], 0.0);
        sum += out.y[i * out.k + c];
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(FilterAugment, ZeroGainIsIdentity) {
  const auto s = random_spec(4);
  Rng rng(1);
  EXPECT_EQ(filter_augment(s, 3, 6, 0.0, rng).values, s.values);
}

TEST(FilterAugment, EqualGainsShiftUniformly) {
  const auto s = random_spec(5);
  const double g = 3.5;
  const auto out = apply_gain_curve(s, filter_gain_curve(s.n_mels, {0.0, 79.0}, {g, g}));
  const double shift = g * std::log(10.0) / 10.0;
  for (std::size_t i = 0; i < s.values.size(); ++i) EXPECT_NEAR(out.values[i] - s.values[i], shift, 1e-5);
}

TEST(FilterAugment, GainIsPiecewiseLinear) {
  const std::vector<double> bounds{0.0, 17.0, 40.0, 79.0}, gains{-4.0, 5.0, 1.0, -6.0};
  const auto g = filter_gain_curve(80, bounds, gains);
  for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
    for (auto m = static_cast<std::size_t>(bounds[k]) + 1; m + 1 <= static_cast<std::size_t>(bounds[k + 1]); ++m) {
      EXPECT_NEAR(g[m + 1] - 2.0 * g[m] + g[m - 1], 0.0, 1e-12);
    }
  }
  EXPECT_DOUBLE_EQ(g[17], 5.0);
  EXPECT_DOUBLE_EQ(g[79], -6.0);
}

TEST(FilterAugment, RandomDrawStaysInGainRange) {
  const auto s = random_spec(6);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto out = filter_augment(s, 3, 6, 6.0, rng);
    for (std::size_t j = 0; j < s.values.size(); ++j) {
      EXPECT_LE(std::abs(out.values[j] - s.values[j]), 6.0 * std::log(10.0) / 10.0 + 1e-5);
    }
  }
}

TEST(FreqMixStyle, LambdaOneAndSelfPartnerAreIdentity) {
  const auto b = random_batch(4, 7);
  const auto a = freq_mixstyle_with(b, {1.0, 1.0, 1.0, 1.0}, {1, 2, 3, 0});
  for (std::size_t i = 0; i < b.x.size(); ++i) EXPECT_NEAR(a.x[i], b.x[i], 1e-5);
  const auto c = freq_mixstyle_with(b, {0.3, 0.4, 0.5, 0.6}, {0, 1, 2, 3});
  for (std::size_t i = 0; i < b.x.size(); ++i) EXPECT_NEAR(c.x[i], b.x[i], 1e-5);
}

TEST(FreqMixStyle, OutputMeansEqualMixedMeans) {
  const auto b = random_batch(3, 8);
  const std::vector<double> lam{0.2, 0.7, 0.5};
  const std::vector<std::size_t> perm{2, 0, 1};
  const auto out = freq_mixstyle_with(b, lam, perm);
  auto row_mean = [&](const LabeledBatch& x, std::size_t i, std::size_t h) {
    double s = 0.0;
    for (std::size_t t = 0; t < x.w; ++t) s += x.x[(i * x.h + h) * x.w + t];
    return s / static_cast<double>(x.w);
  };
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t h = 0; h < b.h; ++h) {
      const double want = lam[i] * row_mean(b, i, h) + (1.0 - lam[i]) * row_mean(b, perm[i], h);
      EXPECT_NEAR(row_mean(out, i, h), want, 1e-4);
    }
  }
}

TEST(Rfn, RelaxOneIsIdentityAndZeroIsPureIfn) {
  Rng rng(1);
  tensor::DiffTensor<double> x(tensor::Shape{2, 3, 4, 5});
  for (auto& v : x.storage()) v = rng.normal(2.0, 3.0);
  EXPECT_EQ(rfn(x, 1.0).storage(), x.storage());
  const auto y = rfn(x, 0.0);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t h = 0; h < 4; ++h) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t w = 0; w < 5; ++w) s += y.storage()[((n * 3 + c) * 4 + h) * 5 + w];
      }
      EXPECT_NEAR(s / 15.0, 0.0, 1e-4);
    }
  }
}

TEST(Rfn, LinearInRelax) {
  Rng rng(2);
  tensor::DiffTensor<double> x(tensor::Shape{2, 2, 3, 6});
  for (auto& v : x.storage()) v = rng.normal();
  for (bool per_channel : {false, true}) {
    const auto a = rfn(x, 0.0, per_channel), b = rfn(x, 1.0, per_channel), m = rfn(x, 0.5, per_channel);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(m.storage()[i], 0.5 * (a.storage()[i] + b.storage()[i]), 1e-6);
  }
}

TEST(Rfn, GradientCheck) {
  Rng rng(3);
  tensor::DiffTensor<double> x(tensor::Shape{2, 2, 3, 4});
  for (auto& v : x.storage()) v = rng.normal();
  x.set_requires_grad(true);
  tensor::DiffTensor<double> t(tensor::Shape{2, 2, 3, 4});
  for (auto& v : t.storage()) v = rng.normal();
  tensor::ParamList<double> ps{{"x", x, true}};
  const auto r = tensor::grad_check([&] { return tensor::mse_loss(rfn(x, 0.5), t); }, ps);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(MicConvert, AdaptProbabilityZeroAndOne) {
  ConverterBank bank{{"S"}, {"T1"}, [](const dsp::Spectrogram& s, std::size_t, std::size_t) {
                       auto o = s;
                       for (auto& v : o.values) v += 1.0f;
                       return o;
                     }};
  const auto s = random_spec(1);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(mic_convert_augment(s, "S", 0, bank, McMode::kAdapt, 0.0, false, rng).values, s.values);
    EXPECT_NE(mic_convert_augment(s, "S", 0, bank, McMode::kAdapt, 1.0, false, rng).values, s.values);
  }
}

TEST(MicConvert, DeviceMismatchRejected) {
  ConverterBank bank{{"S"}, {"T1"}, [](const dsp::Spectrogram& s, std::size_t, std::size_t) { return s; }};
  Rng rng(1);
  try {
    mic_convert_augment(random_spec(1), "T3", 0, bank, McMode::kAdapt, 1.0, false, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "DeviceMismatch");
  }
}

TEST(MicConvert, GenDrawsTargetsUniformly) {
  Rng rng(11);
  std::vector<int> counts(6, 0);
  for (int i = 0; i < 6000; ++i) ++counts[*mic_convert_choice(McMode::kGen, 6, 1.0, false, rng)];
  for (int c : counts) EXPECT_NEAR(c / 6000.0, 1.0 / 6.0, 0.02);
  std::vector<int> with_source(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = mic_convert_choice(McMode::kGen, 6, 1.0, true, rng);
    ++with_source[k ? *k : 6];
  }
  for (int c : with_source) EXPECT_NEAR(c / 7000.0, 1.0 / 7.0, 0.02);
}

TEST(Gate, FiringRateWithinTwoPercent) {
  for (double p : {0.0, 0.25, 0.5, 1.0}) {
    Rng rng(static_cast<std::uint64_t>(p * 100) + 1);
    int hits = 0;
    for (int i = 0; i < 10000; ++i) hits += fires(p, rng);
    EXPECT_NEAR(hits / 10000.0, p, 0.02);
    if (p == 0.0) {
      EXPECT_EQ(hits, 0);
    }
    if (p == 1.0) {
      EXPECT_EQ(hits, 10000);
    }
  }
}

TEST(Chain, ZeroProbabilityIsIdentityForEveryKind) {
  const auto s = random_spec(3);
  std::vector<float> wave(20507);
  Rng r(1);
  for (auto& v : wave) v = static_cast<float>(r.normal(0.0, 0.1));
  ConverterBank bank{{"S"}, {"T1"}, [](const dsp::Spectrogram& x, std::size_t, std::size_t) {
                       auto o = x;
                       o.values[0] += 1.0f;
                       return o;
                     }};
  for (const auto& [kind, name] : kind_names()) {
    auto spec = default_spec(kind);
    spec.p = 0.0;
    if (kind == AugmentKind::kMicConvert) spec.mode = McMode::kAdapt;
    AugmentChain chain({spec}, {}, &bank);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      EXPECT_EQ(chain.apply_sample({&s, &wave, "S", 0}, seed).values, s.values) << name;
      const auto b = random_batch(4, seed);
      const auto out = chain.apply_batch(b, seed);
      EXPECT_EQ(out.x, b.x) << name;
      EXPECT_EQ(out.y, b.y) << name;
    }
  }
}

TEST(Chain, DeterministicAndShapePreserving) {
  const auto s = random_spec(4);
  std::vector<float> wave(20507);
  Rng r(2);
  for (auto& v : wave) v = static_cast<float>(r.normal(0.0, 0.1));
  for (const auto& [kind, name] : kind_names()) {
    if (kind == AugmentKind::kMicConvert) continue;
    auto spec = default_spec(kind);
    spec.p = 1.0;
    AugmentChain chain({spec});
    const auto a = chain.apply_sample({&s, &wave, "S", 0}, 7);
    const auto b = chain.apply_sample({&s, &wave, "S", 0}, 7);
    EXPECT_EQ(a.values, b.values) << name;
    EXPECT_EQ(a.n_mels, s.n_mels) << name;
    EXPECT_EQ(a.n_frames, s.n_frames) << name;
    const auto bt = random_batch(4, 1);
    const auto o1 = chain.apply_batch(bt, 3), o2 = chain.apply_batch(bt, 3);
    EXPECT_EQ(o1.x, o2.x) << name;
    EXPECT_EQ(o1.x.size(), bt.x.size()) << name;
  }
}

TEST(Chain, JsonRoundTripAndUnknownKeys) {
  for (const auto& [kind, name] : kind_names()) {
    const auto spec = default_spec(kind);
    const auto j = to_json(spec);
    EXPECT_EQ(to_json(spec_from_json(j)), j) << name;
  }
  try {
    spec_from_json({{"kind", "mixup"}, {"relax", 0.3}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "SchemaError");
  }
  EXPECT_THROW(spec_from_json({{"kind", "mixup"}, {"p", 1.5}}), Error);
  EXPECT_THROW(spec_from_json({{"kind", "pitch_shift"}, {"semitones", {-3, 2}}}), Error);
}

TEST(Chain, MicConvertWithWaveformKindsRejected) {
  ConverterBank bank{{"S"}, {"T1"}, [](const dsp::Spectrogram& x, std::size_t, std::size_t) { return x; }};
  EXPECT_THROW(AugmentChain({default_spec(AugmentKind::kReverb), default_spec(AugmentKind::kMicConvert)}, {}, &bank),
               Error);
  EXPECT_THROW(AugmentChain({default_spec(AugmentKind::kMicConvert)}), Error);
}
