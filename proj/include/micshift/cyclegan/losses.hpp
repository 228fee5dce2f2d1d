#pragma once

#include <functional>

#include "micshift/tensor/ops.hpp"

namespace micshift::cyclegan {

using tensor::DiffTensor;

template <typename T>
struct AdvLosses {
  DiffTensor<T> loss_d;
  DiffTensor<T> loss_g;
};

template <typename T>
DiffTensor<T> discriminator_loss(const DiffTensor<T>& d_real, const DiffTensor<T>& d_fake) {
  return tensor::scale(tensor::add(tensor::mse_to(d_real, T(1)), tensor::mse_to(d_fake, T(0))), T(0.5));
}

template <typename T>
DiffTensor<T> generator_adv_loss(const DiffTensor<T>& d_fake) {
  return tensor::mse_to(d_fake, T(1));
}

/// Least-squares adversarial terms:
///   loss_D = ½·mean[(D(real) − 1)²] + ½·mean[D(fake)²]
///   loss_G = mean[(D(fake) − 1)²]
template <typename T>
AdvLosses<T> adv_loss_ls(const DiffTensor<T>& d_real, const DiffTensor<T>& d_fake_for_d,
                         const DiffTensor<T>& d_fake_for_g) {
  tensor::require_same_shape(d_real, d_fake_for_d, "adv_loss_ls");
  tensor::require_same_shape(d_real, d_fake_for_g, "adv_loss_ls");
  return {discriminator_loss(d_real, d_fake_for_d), generator_adv_loss(d_fake_for_g)};
}

/// mean|G(F(x_a)) − x_a| + mean|F(G(x_b)) − x_b|.
template <typename T, typename MapF, typename MapG>
DiffTensor<T> cycle_loss(const MapF& f, const MapG& g, const DiffTensor<T>& x_a, const DiffTensor<T>& x_b) {
  tensor::require_same_shape(x_a, x_b, "cycle_loss");
  return tensor::add(tensor::l1_loss(g(f(x_a)), x_a), tensor::l1_loss(f(g(x_b)), x_b));
}

/// loss_G(F) + loss_G(G) + λ·cycle.
template <typename T>
DiffTensor<T> total_generator_loss(const DiffTensor<T>& adv_f, const DiffTensor<T>& adv_g,
                                   const DiffTensor<T>& cycle, T lambda) {
  return tensor::add(tensor::add(adv_f, adv_g), tensor::scale(cycle, lambda));
}

}  // namespace micshift::cyclegan
