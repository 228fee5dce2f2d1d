#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "micshift/augment/chain.hpp"
#include "micshift/core/rng.hpp"
#include "micshift/cyclegan/model.hpp"
#include "micshift/dsp/features.hpp"
#include "micshift/sec/classifier.hpp"
#include "micshift/tensor/checkpoint.hpp"
#include "micshift/tensor/optim.hpp"

namespace micshift::sec {

struct SecTrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double weight_decay = 0.01;
  std::size_t lr_step_epochs = 10;  // lr ×0.1 every this many epochs
  double lr_gamma = 0.1;
  std::size_t epochs = 20;
  std::size_t batch = 32;
  std::uint64_t seed = 0;

  void validate() const {
    require(lr > 0.0 && epochs >= 1 && batch >= 1 && lr_step_epochs >= 1, "InvalidConfig",
            "sec training needs lr > 0 and epochs, batch, lr_step_epochs >= 1");
    require(weight_decay >= 0.0, "InvalidConfig", "weight_decay must be non-negative");
  }
};

/// lr for 0-based epoch index: lr·γ^floor(epoch / step).
inline double sec_learning_rate(const SecTrainConfig& cfg, std::size_t epoch) {
  return cfg.lr * std::pow(cfg.lr_gamma, static_cast<double>(epoch / cfg.lr_step_epochs));
}

/// One labeled training segment. `key` indexes precomputed conversions.
struct SecSample {
  const dsp::Spectrogram* spectrogram = nullptr;
  const std::vector<float>* waveform = nullptr;
  int label = 0;
  std::string device;
  std::size_t key = 0;
};

struct SecEpoch {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct SecModel {
  ClassifierCfg cfg;
  Classifier<float> net;
  std::string condition;
  std::string source_device;
  std::size_t epochs_trained = 0;
  cyclegan::Provenance provenance;
};

struct SecTrainResult {
  SecModel model;
  std::vector<SecEpoch> curve;
};

struct SecTrainOptions {
  std::filesystem::path out_dir;  // checkpoint + loss curve when non-empty
  std::string condition = "Baseline";
  cyclegan::Provenance provenance;
  bool verbose = false;
};

/// Stacks per-spectrogram standardized inputs into [N, 1, mels, frames].
inline DiffTensor<float> stack_standardized(const std::vector<dsp::Spectrogram>& specs) {
  require(!specs.empty(), "EmptyInput", "empty batch");
  const std::size_t h = specs.front().n_mels, w = specs.front().n_frames;
  DiffTensor<float> x(tensor::Shape{specs.size(), 1, h, w});
  for (std::size_t i = 0; i < specs.size(); ++i) {
    require(specs[i].n_mels == h && specs[i].n_frames == w, "ShapeMismatch", "batch spectrograms differ in shape");
    standardize_into(specs[i].values.data(), h * w, x.storage().data() + i * h * w);
  }
  return x;
}

inline tensor::Checkpoint to_checkpoint(const SecModel& m) {
  tensor::Checkpoint ck;
  ck.sections.emplace_back("net", tensor::store(m.net.parameters()));
  std::vector<tensor::StoredTensor> meta;
  using cyclegan::detail::meta_string;
  using cyclegan::detail::meta_value;
  meta.push_back(meta_value("base_channels", static_cast<double>(m.cfg.base_channels)));
  meta.push_back(meta_value("n_stages", static_cast<double>(m.cfg.n_stages)));
  meta.push_back(meta_value("blocks_per_stage", static_cast<double>(m.cfg.blocks_per_stage)));
  meta.push_back(meta_value("n_classes", static_cast<double>(m.cfg.n_classes)));
  meta.push_back(meta_value("rfn_enabled", m.cfg.rfn_enabled ? 1.0 : 0.0));
  meta.push_back(meta_value("rfn_relax", m.cfg.rfn_relax));
  meta.push_back(meta_value("rfn_per_channel", m.cfg.rfn_per_channel ? 1.0 : 0.0));
  meta.push_back(meta_value("epochs_trained", static_cast<double>(m.epochs_trained)));
  meta.push_back(meta_string("condition", m.condition));
  meta.push_back(meta_string("source_device", m.source_device));
  meta.push_back(meta_string("config_hash", m.provenance.config_hash));
  meta.push_back(meta_string("seed", std::to_string(m.provenance.seed)));
  ck.sections.emplace_back("meta", std::move(meta));
  return ck;
}

inline SecModel sec_model_from_checkpoint(const tensor::Checkpoint& ck) {
  const cyclegan::detail::MetaView meta(ck.section("meta"));
  SecModel m;
  m.cfg.base_channels = static_cast<std::size_t>(meta.num("base_channels"));
  m.cfg.n_stages = static_cast<std::size_t>(meta.num("n_stages"));
  m.cfg.blocks_per_stage = static_cast<std::size_t>(meta.num("blocks_per_stage"));
  m.cfg.n_classes = static_cast<std::size_t>(meta.num("n_classes"));
  m.cfg.rfn_enabled = meta.num("rfn_enabled") != 0.0;
  m.cfg.rfn_relax = meta.num("rfn_relax");
  m.cfg.rfn_per_channel = meta.num("rfn_per_channel") != 0.0;
  m.epochs_trained = static_cast<std::size_t>(meta.num("epochs_trained"));
  m.condition = meta.str("condition");
  m.source_device = meta.str("source_device");
  m.provenance.config_hash = meta.str("config_hash");
  const auto seed = meta.str("seed");
  m.provenance.seed = seed.empty() ? 0 : std::stoull(seed);
  m.net = Classifier<float>(m.cfg, 0);
  auto params = m.net.parameters();
  tensor::restore(ck.section("net"), params);
  return m;
}

inline void save_sec_model(const std::filesystem::path& path, const SecModel& m) {
  tensor::save_checkpoint(path, to_checkpoint(m));
}

inline SecModel load_sec_model(const std::filesystem::path& path) {
  return sec_model_from_checkpoint(tensor::load_checkpoint(path));
}

inline void write_sec_loss_csv(const std::filesystem::path& path, const std::vector<SecEpoch>& curve) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "IoError", "cannot write " + path.string());
  os << "epoch,loss,lr\n";
  char buf[96];
  for (const auto& e : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", e.epoch, e.loss, e.lr);
    os << buf;
  }
}

/// Supervised training with AdamW, soft-label cross-entropy and the
/// augmentation chain applied online. Each sample's augmentation seed
/// depends only on (seed, epoch, position), so runs are reproducible.
inline SecTrainResult train_sec(const std::vector<SecSample>& data, const SecTrainConfig& cfg, ClassifierCfg ccfg,
                                const augment::AugmentChain& chain, const SecTrainOptions& opt = {}) {
  cfg.validate();
  require(!data.empty(), "EmptyInput", "no training segments");
  if (auto r = chain.rfn()) {
    ccfg.rfn_enabled = true;
    ccfg.rfn_relax = r->relax;
    ccfg.rfn_per_channel = r->per_channel;
  }
  ccfg.validate();
  std::set<int> present;
  for (const auto& s : data) {
    require(s.label >= 0 && static_cast<std::size_t>(s.label) < ccfg.n_classes, "InvalidArgument",
            "label " + std::to_string(s.label) + " out of range");
    present.insert(s.label);
  }
  for (std::size_t c = 0; c < ccfg.n_classes; ++c) {
    require(present.count(static_cast<int>(c)) > 0, "MissingClass",
            "class " + std::to_string(c) + " is absent from the training data");
  }

  SecTrainResult res;
  auto& m = res.model;
  m.cfg = ccfg;
  m.net = Classifier<float>(ccfg, derive_seed(cfg.seed, {1}));
  m.condition = opt.condition;
  m.provenance = opt.provenance;
  for (const auto& s : data) {
    if (m.source_device.empty()) m.source_device = s.device;
    else if (("+" + m.source_device + "+").find("+" + s.device + "+") == std::string::npos) m.source_device += "+" + s.device;
  }
  auto params = m.net.parameters();
  auto adam = tensor::make_adam<float>(cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay);
  Rng order(derive_seed(cfg.seed, {2}));
  const std::size_t k = ccfg.n_classes;
  const std::size_t steps = (data.size() + cfg.batch - 1) / cfg.batch;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    adam.lr = sec_learning_rate(cfg, epoch);
    const auto perm = order.permutation(data.size());
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t lo = step * cfg.batch, hi = std::min(data.size(), lo + cfg.batch);
      std::vector<dsp::Spectrogram> specs(hi - lo);
      std::vector<double> y((hi - lo) * k, 0.0);
      parallel_for(hi - lo, [&](std::size_t i) {
        const auto& s = data[perm[lo + i]];
        specs[i] = chain.apply_sample({s.spectrogram, s.waveform, s.device, s.key},
                                      derive_seed(cfg.seed, {3, epoch, lo + i}));
      });
      for (std::size_t i = 0; i < hi - lo; ++i) y[i * k + static_cast<std::size_t>(data[perm[lo + i]].label)] = 1.0;
      auto x = stack_standardized(specs);
      augment::LabeledBatch b{hi - lo, x.dim(2), x.dim(3), k, std::move(x.storage()), std::move(y)};
      b = chain.apply_batch(std::move(b), derive_seed(cfg.seed, {4, epoch, step}));
      DiffTensor<float> xb(tensor::Shape{b.n, 1, b.h, b.w}, std::move(b.x));
      std::vector<float> targets(b.y.begin(), b.y.end());
      auto loss = tensor::softmax_cross_entropy(m.net(xb, true), targets);
      tensor::zero_grads(params);
      loss.backward();
      tensor::adam_step(params, adam);
      loss_sum += loss.item() * static_cast<double>(hi - lo);
    }
    res.curve.push_back({epoch + 1, loss_sum / static_cast<double>(data.size()), adam.lr});
    m.epochs_trained = epoch + 1;
    if (opt.verbose) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "[train-sec] %s epoch %zu/%zu loss=%.4f lr=%.2e (%.1fs)\n", opt.condition.c_str(), epoch + 1,
                   cfg.epochs, res.curve.back().loss, adam.lr, secs);
    }
  }
  tensor::zero_grads(params);
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    save_sec_model(opt.out_dir / "sec_model.mckp", m);
    write_sec_loss_csv(opt.out_dir / "sec_loss_curve.csv", res.curve);
  }
  return res;
}

/// Class scores in eval mode, batched.
inline std::vector<int> predict(SecModel& m, const std::vector<const dsp::Spectrogram*>& specs, std::size_t batch = 64) {
  tensor::NoGradGuard guard;
  std::vector<int> out;
  out.reserve(specs.size());
  for (std::size_t lo = 0; lo < specs.size(); lo += batch) {
    const std::size_t hi = std::min(specs.size(), lo + batch);
    std::vector<dsp::Spectrogram> chunk;
    for (std::size_t i = lo; i < hi; ++i) chunk.push_back(*specs[i]);
    const auto logits = m.net(stack_standardized(chunk), false);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < hi - lo; ++i) {
      const float* row = logits.storage().data() + i * k;
      out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  return out;
}

/// Penultimate (pooled) embeddings, one row per spectrogram.
inline std::vector<std::vector<float>> embed(SecModel& m, const std::vector<const dsp::Spectrogram*>& specs,
                                             std::size_t batch = 64) {
  tensor::NoGradGuard guard;
  std::vector<std::vector<float>> rows;
  for (std::size_t lo = 0; lo < specs.size(); lo += batch) {
    const std::size_t hi = std::min(specs.size(), lo + batch);
    std::vector<dsp::Spectrogram> chunk;
    for (std::size_t i = lo; i < hi; ++i) chunk.push_back(*specs[i]);
    const auto e = m.net.embed(stack_standardized(chunk), false);
    const std::size_t d = e.dim(1);
    for (std::size_t i = 0; i < hi - lo; ++i) {
      rows.emplace_back(e.storage().begin() + static_cast<std::ptrdiff_t>(i * d),
                        e.storage().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    }
  }
  return rows;
}

}  // namespace micshift::sec
