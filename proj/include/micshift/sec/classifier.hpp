#pragma once

#include <string>
#include <vector>

#include "micshift/augment/rfn.hpp"
#include "micshift/core/rng.hpp"
#include "micshift/tensor/layers.hpp"

namespace micshift::sec {

using tensor::DiffTensor;
using tensor::ParamList;

struct ClassifierCfg {
  std::size_t base_channels = 16;
  std::size_t n_stages = 4;
  std::size_t blocks_per_stage = 2;
  std::size_t n_classes = 8;
  bool rfn_enabled = false;
  double rfn_relax = 0.5;
  bool rfn_per_channel = false;

  /// Width of the pooled embedding feeding the linear head.
  std::size_t embedding_dim() const { return base_channels << (n_stages - 1); }

  void validate() const {
    require(base_channels >= 1 && n_stages >= 1 && blocks_per_stage >= 1, "InvalidConfig",
            "classifier needs >= 1 stage, block and channel");
    require(n_classes >= 2, "InvalidConfig", "classifier needs >= 2 classes");
    require(rfn_relax >= 0.0 && rfn_relax <= 1.0, "InvalidConfig", "rfn relax must lie in [0, 1]");
  }
};

/// 3×3 basic residual block with batch norm and a 1×1 projection shortcut
/// whenever the shape changes.
template <typename T>
struct BasicBlock {
  tensor::Conv2d<T> c1, c2, proj;
  tensor::BatchNorm2d<T> b1, b2, bp;

  BasicBlock() = default;
  BasicBlock(std::size_t cin, std::size_t cout, std::size_t stride, Rng& rng)
      : c1(cin, cout, 3, stride, 1, tensor::PadMode::kZero, false, tensor::Init::kKaiming, rng),
        c2(cout, cout, 3, 1, 1, tensor::PadMode::kZero, false, tensor::Init::kKaiming, rng),
        b1(cout),
        b2(cout) {
    if (stride != 1 || cin != cout) {
      proj = tensor::Conv2d<T>(cin, cout, 1, stride, 0, tensor::PadMode::kZero, false, tensor::Init::kKaiming, rng);
      bp = tensor::BatchNorm2d<T>(cout);
    }
  }

  DiffTensor<T> operator()(const DiffTensor<T>& x, bool training) {
    auto h = tensor::relu(b1(c1(x), training));
    h = b2(c2(h), training);
    auto skip = proj.weight.defined() ? bp(proj(x), training) : x;
    return tensor::relu(tensor::add(h, skip));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    c1.collect(out, tensor::join_name(prefix, "c1"));
    b1.collect(out, tensor::join_name(prefix, "b1"));
    c2.collect(out, tensor::join_name(prefix, "c2"));
    b2.collect(out, tensor::join_name(prefix, "b2"));
    if (proj.weight.defined()) {
      proj.collect(out, tensor::join_name(prefix, "proj"));
      bp.collect(out, tensor::join_name(prefix, "bp"));
    }
  }
};

/// Miniature ResNet: stride-2 stem, stages of basic blocks doubling width
/// (stride 2 from the second stage on), global average pool, linear head.
/// With RFN enabled, a relaxed frequency-wise normalization follows the stem
/// and every stage.
template <typename T>
class Classifier {
 public:
  Classifier() = default;
  Classifier(const ClassifierCfg& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    const std::size_t b = cfg.base_channels;
    stem_ = tensor::Conv2d<T>(1, b, 3, 2, 1, tensor::PadMode::kZero, false, tensor::Init::kKaiming, rng);
    stem_bn_ = tensor::BatchNorm2d<T>(b);
    std::size_t cin = b;
    for (std::size_t s = 0; s < cfg.n_stages; ++s) {
      const std::size_t cout = b << s;
      for (std::size_t k = 0; k < cfg.blocks_per_stage; ++k) {
        blocks_.emplace_back(cin, cout, (s > 0 && k == 0) ? 2 : 1, rng);
        cin = cout;
      }
    }
    head_ = tensor::Linear<T>(cin, cfg.n_classes, tensor::Init::kKaiming, rng);
  }

  const ClassifierCfg& cfg() const { return cfg_; }

  /// Pooled penultimate features [N, embedding_dim].
  DiffTensor<T> embed(const DiffTensor<T>& x, bool training) {
    require(x.rank() == 4 && x.dim(1) == 1, "ShapeMismatch", "classifier expects [N, 1, mels, frames] input");
    auto h = tensor::relu(stem_bn_(stem_(x), training));
    h = maybe_rfn(h);
    std::size_t i = 0;
    for (std::size_t s = 0; s < cfg_.n_stages; ++s) {
      for (std::size_t k = 0; k < cfg_.blocks_per_stage; ++k) h = blocks_[i++](h, training);
      h = maybe_rfn(h);
    }
    return tensor::global_avg_pool(h);
  }

  DiffTensor<T> operator()(const DiffTensor<T>& x, bool training) { return head_(embed(x, training)); }

  ParamList<T> parameters() const {
    ParamList<T> out;
    stem_.collect(out, "stem");
    stem_bn_.collect(out, "stem_bn");
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, "block" + std::to_string(i));
    head_.collect(out, "head");
    return out;
  }

 private:
  DiffTensor<T> maybe_rfn(const DiffTensor<T>& h) const {
    if (!cfg_.rfn_enabled) return h;
    return augment::rfn(h, static_cast<T>(cfg_.rfn_relax), cfg_.rfn_per_channel);
  }

  ClassifierCfg cfg_;
  tensor::Conv2d<T> stem_;
  tensor::BatchNorm2d<T> stem_bn_;
  std::vector<BasicBlock<T>> blocks_;
  tensor::Linear<T> head_;
};

/// Per-spectrogram standardization (zero mean, unit variance over all cells).
inline void standardize_into(const float* src, std::size_t n, float* dst) {
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += src[i];
  const double mean = s / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) s2 += (src[i] - mean) * (src[i] - mean);
  const double inv = 1.0 / std::sqrt(s2 / static_cast<double>(n) + 1e-8);
  for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>((src[i] - mean) * inv);
}

}  // namespace micshift::sec
