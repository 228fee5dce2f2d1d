#pragma once

#include <string>
#include <vector>

#include "micshift/tensor/layers.hpp"

namespace micshift::cyclegan {

using tensor::DiffTensor;
using tensor::ParamList;
using tensor::PadMode;

struct GeneratorCfg {
  std::size_t base_channels = 16;
  std::size_t n_resblocks = 3;
  std::size_t n_sampling_layers = 2;
};

struct DiscriminatorCfg {
  std::size_t base_channels = 16;
  /// Strides of the kernel-4 conv stack before the 1-channel score layer.
  /// {2, 1} gives each output unit a 16×16 receptive field.
  std::vector<std::size_t> strides{2, 1};
  std::size_t kernel = 4;
  bool instance_norm = true;
};

/// Receptive field (in input pixels, per axis) of one discriminator output unit.
inline std::size_t receptive_field(const DiscriminatorCfg& cfg) {
  std::size_t rf = cfg.kernel;  // score layer, stride 1
  for (auto it = cfg.strides.rbegin(); it != cfg.strides.rend(); ++it) rf = (rf - 1) * *it + cfg.kernel;
  return rf;
}

/// Residual translation network: c7 stem, strided downsampling, residual
/// blocks, nearest-upsample + conv, c7 projection. Reflect padding and
/// instance norm throughout; linear output (no tanh).
template <typename T>
class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorCfg& cfg, Rng& rng) : cfg_(cfg) {
    require(cfg.n_resblocks >= 1, "InvalidConfig", "generator needs at least one residual block");
    require(cfg.base_channels >= 1, "InvalidConfig", "generator base_channels must be >= 1");
    using tensor::Conv2d;
    using tensor::InstanceNorm2d;
    const auto init = tensor::Init::kNormal002;
    std::size_t ch = cfg.base_channels;
    stem_ = Conv2d<T>(1, ch, 7, 1, 3, PadMode::kReflect, false, init, rng);
    stem_norm_ = InstanceNorm2d<T>(ch);
    for (std::size_t i = 0; i < cfg.n_sampling_layers; ++i) {
      down_.push_back(Conv2d<T>(ch, ch * 2, 3, 2, 1, PadMode::kReflect, false, init, rng));
      down_norm_.push_back(InstanceNorm2d<T>(ch * 2));
      ch *= 2;
    }
    for (std::size_t i = 0; i < cfg.n_resblocks; ++i) {
      Res r;
      r.c1 = Conv2d<T>(ch, ch, 3, 1, 1, PadMode::kReflect, false, init, rng);
      r.n1 = InstanceNorm2d<T>(ch);
      r.c2 = Conv2d<T>(ch, ch, 3, 1, 1, PadMode::kReflect, false, init, rng);
      r.n2 = InstanceNorm2d<T>(ch);
      res_.push_back(std::move(r));
    }
    for (std::size_t i = 0; i < cfg.n_sampling_layers; ++i) {
      up_.push_back(Conv2d<T>(ch, ch / 2, 3, 1, 1, PadMode::kReflect, false, init, rng));
      up_norm_.push_back(InstanceNorm2d<T>(ch / 2));
      ch /= 2;
    }
    head_ = Conv2d<T>(ch, 1, 7, 1, 3, PadMode::kReflect, true, init, rng);
  }

  /// Spatial dims must be divisible by 2^n_sampling_layers.
  DiffTensor<T> operator()(const DiffTensor<T>& x) const {
    const std::size_t mult = std::size_t{1} << cfg_.n_sampling_layers;
    require(x.rank() == 4 && x.dim(1) == 1, "ShapeMismatch", "generator expects [N, 1, H, W]");
    require(x.dim(2) % mult == 0 && x.dim(3) % mult == 0, "ShapeMismatch",
            "generator input " + tensor::shape_str(x.shape()) + " not divisible by " + std::to_string(mult));
    auto h = tensor::relu(stem_norm_(stem_(x)));
    for (std::size_t i = 0; i < down_.size(); ++i) h = tensor::relu(down_norm_[i](down_[i](h)));
    for (const auto& r : res_) h = tensor::add(h, r.n2(r.c2(tensor::relu(r.n1(r.c1(h))))));
    for (std::size_t i = 0; i < up_.size(); ++i) h = tensor::relu(up_norm_[i](up_[i](tensor::upsample_nearest2x(h))));
    return head_(h);
  }

  ParamList<T> parameters(const std::string& prefix = "") const {
    ParamList<T> p;
    stem_.collect(p, tensor::join_name(prefix, "stem"));
    stem_norm_.collect(p, tensor::join_name(prefix, "stem_norm"));
    for (std::size_t i = 0; i < down_.size(); ++i) {
      down_[i].collect(p, tensor::join_name(prefix, "down" + std::to_string(i)));
      down_norm_[i].collect(p, tensor::join_name(prefix, "down" + std::to_string(i) + "_norm"));
    }
    for (std::size_t i = 0; i < res_.size(); ++i) {
      const std::string b = tensor::join_name(prefix, "res" + std::to_string(i));
      res_[i].c1.collect(p, b + ".c1");
      res_[i].n1.collect(p, b + ".n1");
      res_[i].c2.collect(p, b + ".c2");
      res_[i].n2.collect(p, b + ".n2");
    }
    for (std::size_t i = 0; i < up_.size(); ++i) {
      up_[i].collect(p, tensor::join_name(prefix, "up" + std::to_string(i)));
      up_norm_[i].collect(p, tensor::join_name(prefix, "up" + std::to_string(i) + "_norm"));
    }
    head_.collect(p, tensor::join_name(prefix, "head"));
    return p;
  }

  const GeneratorCfg& cfg() const { return cfg_; }

 private:
  struct Res {
    tensor::Conv2d<T> c1, c2;
    tensor::InstanceNorm2d<T> n1, n2;
  };
  GeneratorCfg cfg_;
  tensor::Conv2d<T> stem_, head_;
  tensor::InstanceNorm2d<T> stem_norm_;
  std::vector<tensor::Conv2d<T>> down_, up_;
  std::vector<tensor::InstanceNorm2d<T>> down_norm_, up_norm_;
  std::vector<Res> res_;
};

/// PatchGAN: kernel-4 conv stack with zero padding and leaky ReLU(0.2),
/// instance norm on all but the first layer, a 1-channel score map out.
template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const DiscriminatorCfg& cfg, Rng& rng) : cfg_(cfg) {
    require(!cfg.strides.empty(), "InvalidConfig", "discriminator needs at least one conv layer");
    const auto init = tensor::Init::kNormal002;
    std::size_t cin = 1, ch = cfg.base_channels;
    for (std::size_t i = 0; i < cfg.strides.size(); ++i) {
      const bool norm = cfg.instance_norm && i > 0;
      convs_.push_back(tensor::Conv2d<T>(cin, ch, cfg.kernel, cfg.strides[i], 1, PadMode::kZero, !norm, init, rng));
      norms_.push_back(norm ? tensor::InstanceNorm2d<T>(ch) : tensor::InstanceNorm2d<T>());
      has_norm_.push_back(norm);
      cin = ch;
      ch *= 2;
    }
    score_ = tensor::Conv2d<T>(cin, 1, cfg.kernel, 1, 1, PadMode::kZero, true, init, rng);
  }

  DiffTensor<T> operator()(const DiffTensor<T>& x) const {
    DiffTensor<T> h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i](h);
      if (has_norm_[i]) h = norms_[i](h);
      h = tensor::leaky_relu(h, T(0.2));
    }
    return score_(h);
  }

  ParamList<T> parameters(const std::string& prefix = "") const {
    ParamList<T> p;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect(p, tensor::join_name(prefix, "conv" + std::to_string(i)));
      if (has_norm_[i]) norms_[i].collect(p, tensor::join_name(prefix, "norm" + std::to_string(i)));
    }
    score_.collect(p, tensor::join_name(prefix, "score"));
    return p;
  }

  const DiscriminatorCfg& cfg() const { return cfg_; }

 private:
  DiscriminatorCfg cfg_;
  std::vector<tensor::Conv2d<T>> convs_;
  std::vector<tensor::InstanceNorm2d<T>> norms_;
  std::vector<bool> has_norm_;
  tensor::Conv2d<T> score_;
};

}  // namespace micshift::cyclegan
