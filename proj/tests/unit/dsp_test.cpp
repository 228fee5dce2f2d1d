#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "micshift/core/rng.hpp"
#include "micshift/dsp/features.hpp"
#include "micshift/dsp/resample.hpp"
#include "micshift/dsp/spectral.hpp"
#include "micshift/dsp/spectrogram_io.hpp"
#include "micshift/dsp/wav_io.hpp"
#include "unit/test_oracles.hpp"

using namespace micshift;
using namespace micshift::dsp;
using micshift::oracle::naive_dft_power;
using micshift::oracle::sine;

namespace {

Waveform make_wave(std::vector<double> s, int rate = 22050) { return Waveform{std::move(s), rate}; }

Waveform white_noise(std::size_t n, std::uint64_t seed, double stddev = 0.1) {
  Rng rng(seed);
  std::vector<double> s(n);
  for (auto& v : s) v = rng.normal(0.0, stddev);
  return make_wave(std::move(s));
}

}  // namespace

TEST(Resample, IdentityRateReturnsSameSamples) {
  auto w = make_wave(sine(440.0, 44100, 1000), 44100);
  auto out = resample(w, 44100);
  EXPECT_EQ(out.sample_rate, 44100);
  EXPECT_EQ(out.samples, w.samples);
}

TEST(Resample, OneSecondHalvesLength) {
  auto out = resample(make_wave(sine(440.0, 44100, 44100), 44100), 22050);
  EXPECT_NEAR(static_cast<double>(out.samples.size()), 22050.0, 1.0);
  EXPECT_EQ(out.sample_rate, 22050);
}

TEST(Resample, PreservesToneFrequencyAndAmplitude) {
  auto in = make_wave(sine(500.0, 44100, 44100, 0.5), 44100);
  auto out = resample(in, 22050);
  // Skip filter edge transients; 500 Hz has an integer number of periods in 0.5 s.
  const double amp_in = oracle::tone_amplitude(in.samples, 500.0, 44100, 11025, 11025 + 22050);
  const double amp_out = oracle::tone_amplitude(out.samples, 500.0, 22050, 5512, 5512 + 11025);
  EXPECT_NEAR(amp_out / amp_in, 1.0, 0.01);
  EXPECT_NEAR(oracle::dominant_frequency(out.samples, 22050, 4000, 2048), 500.0, 22050.0 / 2048);
}

TEST(Resample, SuppressesAliasesBelowMinus60dB) {
  // 15 kHz at 44.1 kHz would alias to 7.05 kHz after halving the rate.
  auto in = make_wave(sine(15000.0, 44100, 44100, 0.5), 44100);
  auto out = resample(in, 22050);
  const double alias = oracle::tone_amplitude(out.samples, 22050.0 - 15000.0, 22050, 5512, 5512 + 11025);
  EXPECT_LT(20.0 * std::log10(alias / 0.5), -60.0);
}

TEST(Resample, EmptyInputIsInvalid) {
  Waveform w{{}, 44100};
  try {
    resample(w, 22050);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "InvalidWaveform");
  }
}

TEST(Stft, ZeroInputGivesZeroPower) {
  auto p = stft_power(make_wave(std::vector<double>(3000, 0.0)));
  EXPECT_TRUE(std::all_of(p.values.begin(), p.values.end(), [](double v) { return v == 0.0; }));
}

TEST(Stft, FrameCountFollowsCentering) {
  auto p = stft_power(make_wave(std::vector<double>(20507, 0.1)));
  EXPECT_EQ(p.n_frames, 81u);  // floor(20507 / 256) + 1
  EXPECT_EQ(p.n_bins, 513u);
}

TEST(Stft, ToneArgmaxMatchesNaiveDft) {
  const auto x = sine(1000.0, 22050, 22050);
  auto p = stft_power(make_wave(x));
  // Oracle: round(1000 * 1024 / 22050) = 46, and the FFT agrees with a naive DFT.
  const std::size_t expected_bin = static_cast<std::size_t>(std::lround(1000.0 * 1024 / 22050));
  ASSERT_EQ(expected_bin, 46u);
  for (std::size_t f = 4; f + 4 < p.n_frames; ++f) {
    std::size_t best = 0;
    for (std::size_t k = 0; k < p.n_bins; ++k) {
      if (p.at(k, f) > p.at(best, f)) best = k;
    }
    EXPECT_EQ(best, expected_bin) << "frame " << f;
  }
  const std::size_t frame = 10;
  std::vector<double> windowed(1024);
  const auto win = hann_window(1024);
  for (std::size_t i = 0; i < 1024; ++i) windowed[i] = x[frame * 256 - 512 + i] * win[i];
  const auto oracle = naive_dft_power(windowed);
  for (std::size_t k = 0; k < oracle.size(); ++k) {
    EXPECT_NEAR(p.at(k, frame), oracle[k], 1e-8 * (1.0 + oracle[k]));
  }
}

TEST(Stft, RejectsNonPowerOfTwo) {
  try {
    stft_power(make_wave({0.1, 0.2}), 1000, 256);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "InvalidFftSize");
  }
}

TEST(Stft, ShortInputStillProducesFrames) {
  auto p = stft_power(make_wave({0.5}));
  EXPECT_EQ(p.n_frames, 1u);
  EXPECT_GT(p.at(0, 0), 0.0);
}

TEST(MelFilterbank, SingleBandSpansWholeRange) {
  auto fb = mel_filterbank(22050, 1024, 1);
  ASSERT_EQ(fb.n_mels, 1u);
  EXPECT_EQ(fb.at(0, 0), 0.0);
  EXPECT_EQ(fb.at(0, 512), 0.0);
  for (std::size_t k = 1; k < 512; ++k) EXPECT_GT(fb.at(0, k), 0.0);
}

TEST(MelFilterbank, CentersIncreaseAndPeaksMatchMelFormula) {
  auto fb = mel_filterbank(22050, 1024, 80);
  ASSERT_EQ(fb.centers_hz.size(), 80u);
  const double bin_hz = 22050.0 / 1024;
  // Oracle: centers from the HTK mel formula, evaluated independently.
  const double mel_max = 2595.0 * std::log10(1.0 + 11025.0 / 700.0);
  for (std::size_t m = 0; m < 80; ++m) {
    if (m > 0) {
      EXPECT_GT(fb.centers_hz[m], fb.centers_hz[m - 1]);
    }
    const double mel_c = mel_max * static_cast<double>(m + 1) / 81.0;
    const double hz_c = 700.0 * (std::pow(10.0, mel_c / 2595.0) - 1.0);
    EXPECT_NEAR(fb.centers_hz[m], hz_c, 1e-6);
    std::size_t peak = 0;
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      if (fb.at(m, k) > fb.at(m, peak)) peak = k;
    }
    const auto lo = static_cast<std::size_t>(std::floor(hz_c / bin_hz));
    EXPECT_TRUE(peak == lo || peak == lo + 1) << "filter " << m;
    // Exactly one maximum.
    int n_max = 0;
    for (std::size_t k = 0; k < fb.n_bins; ++k) n_max += fb.at(m, k) == fb.at(m, peak);
    EXPECT_EQ(n_max, 1);
  }
}

TEST(MelFilterbank, CoversEveryInteriorBin) {
  auto fb = mel_filterbank(22050, 1024, 80);
  for (std::size_t k = 1; k + 1 < fb.n_bins; ++k) {
    double s = 0.0;
    for (std::size_t m = 0; m < fb.n_mels; ++m) {
      EXPECT_GE(fb.at(m, k), 0.0);
      s += fb.at(m, k);
    }
    EXPECT_GT(s, 0.0) << "bin " << k;
  }
}

TEST(MelFilterbank, OverResolvedIsAnError) {
  try {
    mel_filterbank(22050, 64, 40);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "OverResolved");
  }
}

TEST(LogMel, ZeroPowerHitsFloor) {
  auto fb = mel_filterbank();
  PowerMatrix p{513, 5, std::vector<double>(513 * 5, 0.0)};
  auto s = log_mel(p, fb);
  for (float v : s.values) EXPECT_FLOAT_EQ(v, static_cast<float>(std::log(1e-10)));
}

TEST(LogMel, DoublingPowerAddsLn2) {
  auto fb = mel_filterbank();
  auto p = stft_power(white_noise(4096, 3));
  auto p2 = p;
  for (auto& v : p2.values) v *= 2.0;
  auto a = log_mel(p, fb), b = log_mel(p2, fb);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(b.values[i] - a.values[i], std::log(2.0), 1e-5);
}

TEST(LogMel, ShapeMismatchIsAnError) {
  auto fb = mel_filterbank();
  PowerMatrix p{100, 2, std::vector<double>(200, 1.0)};
  EXPECT_THROW(log_mel(p, fb), Error);
}

TEST(LogMel, IsMonotoneInPower) {
  auto fb = mel_filterbank();
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    PowerMatrix p{513, 3, std::vector<double>(513 * 3)};
    for (auto& v : p.values) v = rng.uniform() * (rng.bernoulli(0.3) ? 0.0 : 1e-3);
    auto q = p;
    for (auto& v : q.values) v += rng.uniform() * 1e-4;
    auto a = log_mel(p, fb), b = log_mel(q, fb);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_LE(a.values[i], b.values[i]);
  }
}

TEST(LogMel, FullPipelineOnOneSegment) {
  LogMelExtractor extract;
  auto s = extract(white_noise(20507, 5));
  EXPECT_EQ(s.n_mels, 80u);
  EXPECT_EQ(s.n_frames, 81u);
  const float floor = static_cast<float>(std::log(1e-10));
  for (float v : s.values) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, floor);
  }
}

TEST(LogMel, MelPowerIsCoherentWithWindowedEnergy) {
  // Per interior frame, sum_m mel = sum_k s_k P_k with s_k the filter column
  // sums; Parseval bounds the ratio to windowed energy by N/2 * [min s_k, max s_k].
  auto fb = mel_filterbank();
  double s_min = 1e9, s_max = 0.0;
  for (std::size_t k = 10; k <= 400; ++k) {
    double s = 0.0;
    for (std::size_t m = 0; m < 80; ++m) s += fb.at(m, k);
    s_min = std::min(s_min, s);
  }
  for (std::size_t k = 0; k < fb.n_bins; ++k) {
    double s = 0.0;
    for (std::size_t m = 0; m < 80; ++m) s += fb.at(m, k);
    s_max = std::max(s_max, s);
  }
  Rng rng(21);
  const auto win = hann_window(1024);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> x(8192, 0.0);
    for (int c = 0; c < 6; ++c) {
      const double f = rng.uniform(500.0, 8000.0), a = rng.uniform(0.01, 0.2), ph = rng.uniform(0.0, 6.28);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += a * std::sin(2.0 * std::numbers::pi * f * i / 22050.0 + ph);
    }
    auto p = stft_power(make_wave(x));
    for (std::size_t f = 4; f + 4 < p.n_frames; ++f) {
      double energy = 0.0;
      for (std::size_t i = 0; i < 1024; ++i) {
        const double v = x[f * 256 - 512 + i] * win[i];
        energy += v * v;
      }
      double mel_total = 0.0;
      for (std::size_t m = 0; m < 80; ++m) {
        for (std::size_t k = 0; k < fb.n_bins; ++k) mel_total += fb.at(m, k) * p.at(k, f);
      }
      const double ratio = mel_total / energy;
      EXPECT_GE(ratio, 512.0 * s_min * 0.999);
      EXPECT_LE(ratio, 512.0 * s_max * 1.001);
    }
  }
}

TEST(Segment, TwoSecondClipGivesThreeSegments) {
  auto segs = segment(make_wave(std::vector<double>(44100, 0.1)));
  EXPECT_EQ(segs.size(), 3u);  // floor((44100 - 20507) / 10253) + 1
  for (const auto& s : segs) EXPECT_EQ(s.samples.size(), 20507u);
}

TEST(Segment, GeometryRoundsWindowHalfUp) {
  auto g = segment_geometry(22050);
  EXPECT_EQ(g.window, 20507u);
  EXPECT_EQ(g.hop, 10253u);
}

TEST(Segment, ExactWindowAndTooShort) {
  EXPECT_EQ(segment(make_wave(std::vector<double>(20507, 0.1))).size(), 1u);
  EXPECT_TRUE(segment(make_wave(std::vector<double>(20506, 0.1))).empty());
}

TEST(Segment, ConsecutiveSegmentsOverlapAndReassemble) {
  std::vector<double> x(60000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.001 * static_cast<double>(i * i % 7919));
  auto segs = segment(make_wave(x));
  ASSERT_GE(segs.size(), 2u);
  const std::size_t shared = 20507 - 10253;
  EXPECT_EQ(shared, 10254u);
  for (std::size_t i = 0; i + 1 < segs.size(); ++i) {
    for (std::size_t j = 0; j < shared; ++j) EXPECT_EQ(segs[i].samples[10253 + j], segs[i + 1].samples[j]);
  }
  // Non-overlapping hop-length heads of each segment plus the last tail
  // reconstruct the covered prefix exactly.
  std::vector<double> rebuilt;
  for (std::size_t i = 0; i + 1 < segs.size(); ++i) {
    rebuilt.insert(rebuilt.end(), segs[i].samples.begin(), segs[i].samples.begin() + 10253);
  }
  rebuilt.insert(rebuilt.end(), segs.back().samples.begin(), segs.back().samples.end());
  ASSERT_LE(rebuilt.size(), x.size());
  EXPECT_TRUE(std::equal(rebuilt.begin(), rebuilt.end(), x.begin()));
}

TEST(Welch, SingleSegmentEqualsPeriodogramBitForBit) {
  auto w = white_noise(1024, 9);
  auto a = welch_spectrum(w, 1024);
  auto b = periodogram(w, 1024);
  ASSERT_EQ(a.power_db.size(), 513u);
  for (std::size_t k = 0; k < a.power_db.size(); ++k) EXPECT_EQ(a.power_db[k], b.power_db[k]);
}

TEST(Welch, WhiteNoiseIsFlat) {
  auto w = white_noise(1024 + 99 * 512, 42);
  auto s = welch_spectrum(w, 1024, 0.5);
  std::vector<double> interior(s.power_db.begin() + 1, s.power_db.end() - 1);
  auto sorted = interior;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double median = sorted[sorted.size() / 2];
  for (double v : interior) EXPECT_NEAR(v, median, 2.0);
}

TEST(Welch, ToneMaxAtToneBin) {
  auto w = make_wave(sine(3000.0, 22050, 22050));
  auto s = welch_spectrum(w, 1024);
  const auto best = static_cast<std::size_t>(std::max_element(s.power_db.begin(), s.power_db.end()) - s.power_db.begin());
  EXPECT_EQ(best, static_cast<std::size_t>(std::lround(3000.0 / s.resolution_hz)));
}

TEST(Welch, SegmentLongerThanSignalIsAnError) { EXPECT_THROW(welch_spectrum(white_noise(100, 1), 1024), Error); }

TEST(TemporalAverage, ConstantsAndSymmetry) {
  Spectrogram a{3, 4, 256, 22050, std::vector<float>(12, 2.0f)};
  Spectrogram b{3, 4, 256, 22050, std::vector<float>(12, 4.0f)};
  for (double v : temporal_average({a})) EXPECT_DOUBLE_EQ(v, 2.0);
  for (double v : temporal_average({a, b})) EXPECT_DOUBLE_EQ(v, 3.0);
  Spectrogram c{2, 3, 256, 22050, {1, 2, 3, 4, 5, 6}};
  Spectrogram d{2, 3, 256, 22050, {3, 1, 2, 6, 4, 5}};
  EXPECT_EQ(temporal_average({c}), temporal_average({d}));
  EXPECT_THROW(temporal_average({}), Error);
}

TEST(DifferenceSpectrum, ZeroAndAntisymmetry) {
  std::vector<double> a{1.0, -2.0, 3.5}, b{0.5, 4.0, -1.0};
  for (double v : difference_spectrum(a, a)) EXPECT_EQ(v, 0.0);
  auto ab = difference_spectrum(a, b), ba = difference_spectrum(b, a);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ab[i], -ba[i]);
  EXPECT_THROW(difference_spectrum(a, {1.0}), Error);
}

TEST(DifferenceSpectrum, RecoversAnalyticShelf) {
  // Oracle: apply an ideal +6 dB high shelf above 4 kHz in the frequency domain,
  // then run the full log-mel pipeline on both signals.
  const std::size_t n = 1 << 16;
  auto noise = white_noise(n, 77);
  std::vector<std::complex<double>> spec(noise.samples.begin(), noise.samples.end());
  FftPlan plan(n);
  plan.transform(spec);
  const double gain = std::pow(10.0, 6.0 / 20.0);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t kk = std::min(k, n - k);
    if (static_cast<double>(kk) * 22050.0 / n > 4000.0) spec[k] *= gain;
  }
  plan.transform(spec, true);
  Waveform shelved{std::vector<double>(n), 22050};
  for (std::size_t i = 0; i < n; ++i) shelved.samples[i] = spec[i].real();
  LogMelExtractor extract;
  auto diff = difference_spectrum(temporal_average({extract(shelved)}), temporal_average({extract(noise)}));
  const auto& fb = extract.filterbank();
  for (std::size_t m = 0; m < 80; ++m) {
    const double db = diff[m] * kLnToDb;
    // Transition band: filters whose support straddles 4 kHz.
    const double lo = m == 0 ? 0.0 : fb.centers_hz[m - 1];
    const double hi = m + 1 < 80 ? fb.centers_hz[m + 1] : 11025.0;
    if (hi < 4000.0) {
      EXPECT_NEAR(db, 0.0, 1.0) << m;
    }
    if (lo > 4000.0) {
      EXPECT_NEAR(db, 6.0, 1.0) << m;
    }
  }
}

TEST(Dsp, DeterministicOutputs) {
  auto w = white_noise(30000, 8);
  LogMelExtractor extract;
  EXPECT_EQ(extract(w).values, extract(w).values);
  EXPECT_EQ(welch_spectrum(w).power_db, welch_spectrum(w).power_db);
}

TEST(SpectrogramIo, McsgRoundTripAndLayout) {
  Spectrogram s{2, 3, 256, 22050, {1.f, 2.f, 3.f, 4.f, 5.f, -6.5f}};
  std::stringstream ss;
  write_mcsg(ss, s);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 2 + 16 + 24);
  EXPECT_EQ(bytes.substr(0, 4), "MCSG");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2u);  // n_mels LE
  auto back = read_mcsg(ss);
  EXPECT_EQ(back.n_mels, 2u);
  EXPECT_EQ(back.n_frames, 3u);
  EXPECT_EQ(back.hop, 256u);
  EXPECT_EQ(back.sample_rate, 22050u);
  EXPECT_EQ(back.values, s.values);
}

TEST(WavIo, Float32AndPcm16RoundTrip) {
  auto w = make_wave(sine(440.0, 22050, 500, 0.5));
  std::stringstream f32;
  write_wav(f32, w, WavEncoding::kFloat32);
  auto back = read_wav(f32);
  EXPECT_EQ(back.sample_rate, 22050);
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1e-7);
  std::stringstream pcm;
  write_wav(pcm, w, WavEncoding::kPcm16);
  back = read_wav(pcm);
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 32768);
}

TEST(WavIo, StereoIsAveragedToMono) {
  std::stringstream ss;
  io::write_bytes(ss, "RIFF");
  io::write_le<std::uint32_t>(ss, 36 + 8);
  io::write_bytes(ss, "WAVEfmt ");
  io::write_le<std::uint32_t>(ss, 16);
  io::write_le<std::uint16_t>(ss, 1);
  io::write_le<std::uint16_t>(ss, 2);
  io::write_le<std::uint32_t>(ss, 8000);
  io::write_le<std::uint32_t>(ss, 8000 * 4);
  io::write_le<std::uint16_t>(ss, 4);
  io::write_le<std::uint16_t>(ss, 16);
  io::write_bytes(ss, "data");
  io::write_le<std::uint32_t>(ss, 8);
  for (std::int16_t v : {16384, 0, -16384, -16384}) io::write_le<std::int16_t>(ss, v);
  auto w = read_wav(ss);
  ASSERT_EQ(w.samples.size(), 2u);
  EXPECT_DOUBLE_EQ(w.samples[0], 0.25);
  EXPECT_DOUBLE_EQ(w.samples[1], -0.5);
}
