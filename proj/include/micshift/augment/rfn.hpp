#pragma once

#include "micshift/tensor/norm.hpp"

namespace micshift::augment {

/// Relaxed instance frequency-wise normalization:
/// out = relax·x + (1 − relax)·IFN(x). IFN standardizes each (sample,
/// frequency) row over time and channels, or over time only per channel.
template <typename T>
tensor::DiffTensor<T> rfn(const tensor::DiffTensor<T>& x, T relax, bool per_channel = false, T eps = T(1e-5)) {
  require(relax >= T(0) && relax <= T(1), "InvalidArgument", "relax must lie in [0, 1]");
  if (relax == T(1)) return x;
  const auto axes = per_channel ? tensor::NormAxes::kFrequencyPerChannel : tensor::NormAxes::kFrequency;
  return tensor::lerp(x, tensor::standardize(x, axes, eps), relax);
}

}  // namespace micshift::augment
