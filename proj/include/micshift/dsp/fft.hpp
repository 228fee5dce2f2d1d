#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "micshift/core/error.hpp"
#include "micshift/dsp/waveform.hpp"

namespace micshift::dsp {

/// Iterative radix-2 FFT with precomputed twiddles. Sizes must be powers of two.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    require(is_power_of_two(n), "InvalidFftSize", "FFT size must be a power of two, got " + std::to_string(n));
    twiddle_.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = {std::cos(a), std::sin(a)};
    }
    bitrev_.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) {
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      }
      bitrev_[i] = r;
    }
  }

  std::size_t size() const { return n_; }

  /// In-place forward transform (no scaling). `inverse` conjugates the twiddles
  /// and scales by 1/n.
  void transform(std::vector<std::complex<double>>& data, bool inverse = false) const {
    require(data.size() == n_, "ShapeMismatch", "FFT buffer has wrong length");
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t k = 0; k < half; ++k) {
          // Written out by hand: std::complex operator* takes a slow
          // Annex G path for inf/nan handling.
          const double wr = twiddle_[k * step].real();
          const double wi = inverse ? -twiddle_[k * step].imag() : twiddle_[k * step].imag();
          const auto u = data[start + k];
          const auto x = data[start + k + half];
          const std::complex<double> v(x.real() * wr - x.imag() * wi, x.real() * wi + x.imag() * wr);
          data[start + k] = u + v;
          data[start + k + half] = u - v;
        }
      }
    }
    if (inverse) {
      const double s = 1.0 / static_cast<double>(n_);
      for (auto& x : data) x *= s;
    }
  }

  /// |DFT|^2 of a real frame, bins 0..n/2.
  std::vector<double> power_spectrum(const std::vector<double>& frame) const {
    std::vector<std::complex<double>> buf(n_);
    for (std::size_t i = 0; i < n_ && i < frame.size(); ++i) buf[i] = frame[i];
    transform(buf);
    std::vector<double> out(n_ / 2 + 1);
    for (std::size_t k = 0; k <= n_ / 2; ++k) out[k] = std::norm(buf[k]);
    return out;
  }

 private:
  std::size_t n_;
  std::vector<std::complex<double>> twiddle_;
  std::vector<std::size_t> bitrev_;
};

/// Periodic Hann window, w[n] = 0.5 - 0.5 cos(2 pi n / N).
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

inline std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Linear convolution via FFT; output length a.size() + b.size() - 1.
inline std::vector<double> fft_convolve(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  const FftPlan plan(next_power_of_two(out_len));
  std::vector<std::complex<double>> fa(plan.size()), fb(plan.size());
  for (std::size_t i = 0; i < a.size(); ++i) fa[i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) fb[i] = b[i];
  plan.transform(fa);
  plan.transform(fb);
  for (std::size_t i = 0; i < plan.size(); ++i) fa[i] *= fb[i];
  plan.transform(fa, /*inverse=*/true);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i].real();
  return out;
}

}  // namespace micshift::dsp
