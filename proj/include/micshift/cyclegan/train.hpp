#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "micshift/cyclegan/losses.hpp"
#include "micshift/cyclegan/model.hpp"
#include "micshift/cyclegan/replay_buffer.hpp"

namespace micshift::cyclegan {

struct McTrainConfig {
  double lr_init = 2e-4;
  std::size_t halve_interval = 25;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::size_t batch = 16;
  double lambda_cycle = 10.0;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  std::size_t buffer_capacity = 50;
  std::size_t checkpoint_every = 10;
  std::size_t patch_frames = 80;
  GeneratorCfg gen;
  DiscriminatorCfg disc;

  void validate() const {
    require(lr_init >= 2e-5 && lr_init <= 2e-3, "InvalidConfig", "lr_init must lie in [2e-5, 2e-3]");
    require(halve_interval >= 10 && halve_interval <= 50, "InvalidConfig", "halve_interval must lie in [10, 50]");
    require(lambda_cycle > 0.0, "InvalidConfig", "lambda_cycle must be > 0");
    require(batch >= 1 && epochs >= 1, "InvalidConfig", "batch and epochs must be >= 1");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "InvalidConfig", "betas must lie in [0, 1)");
  }
};

/// Halving schedule: lr_init · 0.5^floor(epoch / interval), epochs counted from 0.
inline double mc_learning_rate(const McTrainConfig& cfg, std::size_t epoch) {
  return cfg.lr_init * std::pow(0.5, static_cast<double>(epoch / cfg.halve_interval));
}

struct EpochLosses {
  std::size_t epoch = 0;
  double loss_g_total = 0.0;
  double loss_cycle = 0.0;
  double loss_d_a = 0.0;
  double loss_d_b = 0.0;
  double lr = 0.0;
};

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLosses>& curve) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "IoError", "cannot write " + path.string());
  os << "epoch,loss_G_total,loss_cycle,loss_D_A,loss_D_B,lr\n";
  os << std::setprecision(9);
  for (const auto& e : curve) {
    os << e.epoch << ',' << e.loss_g_total << ',' << e.loss_cycle << ',' << e.loss_d_a << ',' << e.loss_d_b << ','
       << e.lr << '\n';
  }
}

struct McTrainResult {
  CycleGanModel<float> model;
  std::vector<EpochLosses> curve;
};

struct McTrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  Provenance provenance;
  std::string device_a = "A", device_b = "B";
  /// Called after every epoch (1-based count) with the current model.
  std::function<void(std::size_t, const CycleGanModel<float>&)> on_epoch;
  bool verbose = false;
};

/// Mean and standard deviation over all values of both domains.
inline std::pair<double, double> pooled_stats(const std::vector<const dsp::Spectrogram*>& a,
                                              const std::vector<const dsp::Spectrogram*>& b) {
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (const auto* set : {&a, &b}) {
    for (const auto* sp : *set) {
      for (float v : sp->values) {
        s += v;
        s2 += static_cast<double>(v) * v;
        ++n;
      }
    }
  }
  require(n > 1, "EmptyInput", "no spectrogram values to normalize");
  const double mean = s / static_cast<double>(n);
  const double var = std::max(s2 / static_cast<double>(n) - mean * mean, 1e-12);
  return {mean, std::sqrt(var)};
}

/// Mean cycle loss of the current generators over paired-by-position sets
/// (pairing is irrelevant: each term only involves one domain).
inline double evaluate_cycle_loss(const CycleGanModel<float>& m, const std::vector<const dsp::Spectrogram*>& a,
                                  const std::vector<const dsp::Spectrogram*>& b, std::size_t batch = 16) {
  tensor::NoGradGuard guard;
  double total = 0.0;
  std::size_t batches = 0;
  const std::size_t n = std::min(a.size(), b.size());
  require(n > 0, "EmptyInput", "cycle loss evaluation needs both domains");
  for (std::size_t i = 0; i < n; i += batch) {
    const std::size_t j = std::min(n, i + batch);
    std::vector<const dsp::Spectrogram*> ba(a.begin() + i, a.begin() + j), bb(b.begin() + i, b.begin() + j);
    auto xa = to_batch<float>(ba, m.patch_frames, m.norm_mean, m.norm_std);
    auto xb = to_batch<float>(bb, m.patch_frames, m.norm_mean, m.norm_std);
    total += cycle_loss<float>(m.F, m.G, xa, xb).item() * static_cast<double>(j - i);
    ++batches;
  }
  return total / static_cast<double>(n);
}

namespace detail {

template <typename T>
void set_trainable_grad(const ParamList<T>& params, bool on) {
  for (auto p : params) {
    if (p.trainable) p.tensor.set_requires_grad(on);
  }
}

template <typename T>
DiffTensor<T> buffer_batch(ReplayBuffer<std::vector<T>>& buf, const DiffTensor<T>& fresh) {
  const std::size_t n = fresh.dim(0), per = fresh.size() / n;
  DiffTensor<T> out(fresh.shape());
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<T> item(fresh.storage().begin() + s * per, fresh.storage().begin() + (s + 1) * per);
    auto got = buf.query(item);
    std::copy(got.begin(), got.end(), out.storage().begin() + s * per);
  }
  return out;
}

inline void dump_divergence(const std::filesystem::path& out_dir, const McTrainConfig& cfg, std::size_t epoch,
                            std::size_t step, const std::string& what, const std::vector<EpochLosses>& curve) {
  if (out_dir.empty()) return;
  nlohmann::json j;
  j["error"] = "Diverged";
  j["message"] = what;
  j["epoch"] = epoch;
  j["step"] = step;
  j["lr"] = mc_learning_rate(cfg, epoch);
  j["lr_init"] = cfg.lr_init;
  j["halve_interval"] = cfg.halve_interval;
  j["seed"] = cfg.seed;
  nlohmann::json c = nlohmann::json::array();
  for (const auto& e : curve) c.push_back({e.epoch, e.loss_g_total, e.loss_cycle, e.loss_d_a, e.loss_d_b, e.lr});
  j["completed_epochs"] = c;
  std::ofstream(out_dir / "divergence_state.json") << j.dump(2) << "\n";
}

}  // namespace detail

struct GeneratorStep {
  double total = 0.0, cycle = 0.0;
  DiffTensor<float> fake_a, fake_b;  // detached
};

/// One generator update on adv + λ·cycle. Discriminator parameters are
/// frozen for the sweep and left untouched.
inline GeneratorStep generator_step(CycleGanModel<float>& m, ParamList<float>& gparams, ParamList<float>& dparams,
                                    const DiffTensor<float>& xa, const DiffTensor<float>& xb, float lambda) {
  detail::set_trainable_grad(dparams, false);
  auto fake_b = m.F(xa);
  auto fake_a = m.G(xb);
  auto adv_f = generator_adv_loss(m.D_B(fake_b));
  auto adv_g = generator_adv_loss(m.D_A(fake_a));
  auto cyc = tensor::add(tensor::l1_loss(m.G(fake_b), xa), tensor::l1_loss(m.F(fake_a), xb));
  auto total = total_generator_loss(adv_f, adv_g, cyc, lambda);
  tensor::zero_grads(gparams);
  total.backward();
  tensor::adam_step(gparams, m.opt_g);
  detail::set_trainable_grad(dparams, true);
  return {total.item(), cyc.item(), fake_a.detach(), fake_b.detach()};
}

/// One update of both discriminators on real vs buffer-mediated fakes.
inline std::pair<double, double> discriminator_step(CycleGanModel<float>& m, ParamList<float>& dparams,
                                                    ReplayBuffer<std::vector<float>>& buf_a,
                                                    ReplayBuffer<std::vector<float>>& buf_b,
                                                    const DiffTensor<float>& xa, const DiffTensor<float>& xb,
                                                    const DiffTensor<float>& fake_a, const DiffTensor<float>& fake_b) {
  auto pool_a = detail::buffer_batch(buf_a, fake_a);
  auto pool_b = detail::buffer_batch(buf_b, fake_b);
  auto loss_da = discriminator_loss(m.D_A(xa), m.D_A(pool_a));
  auto loss_db = discriminator_loss(m.D_B(xb), m.D_B(pool_b));
  tensor::zero_grads(dparams);
  tensor::add(loss_da, loss_db).backward();
  tensor::adam_step(dparams, m.opt_d);
  return {loss_da.item(), loss_db.item()};
}

/// Unpaired CycleGAN training on spectrogram patches of two devices.
/// Per batch: generators on adv + λ·cycle, then both discriminators on
/// buffer-mediated fakes. A and B streams are shuffled independently.
inline McTrainResult train_mc(const std::vector<const dsp::Spectrogram*>& set_a,
                              const std::vector<const dsp::Spectrogram*>& set_b, const McTrainConfig& cfg,
                              const McTrainOptions& opt = {}) {
  cfg.validate();
  require(!set_a.empty() && !set_b.empty(), "EmptyInput", "train_mc needs spectrograms from both devices");
  McTrainResult res;
  auto& m = res.model;
  m = CycleGanModel<float>(cfg.gen, cfg.disc, derive_seed(cfg.seed, {1}));
  m.patch_frames = cfg.patch_frames;
  m.device_a = opt.device_a;
  m.device_b = opt.device_b;
  std::tie(m.norm_mean, m.norm_std) = pooled_stats(set_a, set_b);
  m.opt_g = tensor::make_adam<float>(cfg.lr_init, cfg.beta1, cfg.beta2);
  m.opt_d = tensor::make_adam<float>(cfg.lr_init, cfg.beta1, cfg.beta2);
  auto gparams = m.generator_params();
  auto dparams = m.discriminator_params();
  ReplayBuffer<std::vector<float>> buf_a(cfg.buffer_capacity, derive_seed(cfg.seed, {2})),
      buf_b(cfg.buffer_capacity, derive_seed(cfg.seed, {3}));
  Rng rng_a(derive_seed(cfg.seed, {4})), rng_b(derive_seed(cfg.seed, {5}));
  const float lambda = static_cast<float>(cfg.lambda_cycle);
  if (!opt.out_dir.empty()) std::filesystem::create_directories(opt.out_dir / "checkpoints");

  const std::size_t n = std::max(set_a.size(), set_b.size());
  const std::size_t steps = (n + cfg.batch - 1) / cfg.batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = mc_learning_rate(cfg, epoch);
    m.opt_g.lr = lr;
    m.opt_d.lr = lr;
    const auto perm_a = rng_a.permutation(set_a.size());
    const auto perm_b = rng_b.permutation(set_b.size());
    EpochLosses acc;
    acc.epoch = epoch + 1;
    acc.lr = lr;
    std::size_t step = 0;
    try {
      for (step = 0; step < steps; ++step) {
        const std::size_t lo = step * cfg.batch, hi = std::min(n, lo + cfg.batch);
        std::vector<const dsp::Spectrogram*> ba, bb;
        for (std::size_t i = lo; i < hi; ++i) {
          ba.push_back(set_a[perm_a[i % set_a.size()]]);
          bb.push_back(set_b[perm_b[i % set_b.size()]]);
        }
        auto xa = to_batch<float>(ba, cfg.patch_frames, m.norm_mean, m.norm_std);
        auto xb = to_batch<float>(bb, cfg.patch_frames, m.norm_mean, m.norm_std);

        const auto g = generator_step(m, gparams, dparams, xa, xb, lambda);
        const auto d = discriminator_step(m, dparams, buf_a, buf_b, xa, xb, g.fake_a, g.fake_b);
        acc.loss_g_total += g.total;
        acc.loss_cycle += g.cycle;
        acc.loss_d_a += d.first;
        acc.loss_d_b += d.second;
      }
    } catch (const Error& e) {
      if (e.code() != "NonFinite") throw;
      detail::dump_divergence(opt.out_dir, cfg, epoch, step, e.what(), res.curve);
      throw Error("Diverged", std::string("training diverged at epoch ") + std::to_string(epoch + 1) + ", step " +
                                  std::to_string(step) + ": " + e.what());
    }
    tensor::zero_grads(gparams);
    tensor::zero_grads(dparams);
    const double inv = 1.0 / static_cast<double>(steps);
    acc.loss_g_total *= inv;
    acc.loss_cycle *= inv;
    acc.loss_d_a *= inv;
    acc.loss_d_b *= inv;
    res.curve.push_back(acc);
    m.epochs_trained = epoch + 1;
    if (opt.verbose) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "[train-mc] epoch %zu/%zu cycle=%.4f G=%.4f D_A=%.4f D_B=%.4f lr=%.2e (%.1fs)\n",
                   epoch + 1, cfg.epochs, acc.loss_cycle, acc.loss_g_total, acc.loss_d_a, acc.loss_d_b, lr, secs);
    }
    if (!opt.out_dir.empty()) {
      const bool last = epoch + 1 == cfg.epochs;
      if (last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)) {
        std::ostringstream name;
        name << "mc_epoch" << std::setw(3) << std::setfill('0') << (epoch + 1) << ".mckp";
        save_model(opt.out_dir / "checkpoints" / name.str(), m, opt.provenance);
      }
      write_loss_csv(opt.out_dir / "loss_curve.csv", res.curve);
    }
    if (opt.on_epoch) opt.on_epoch(epoch + 1, m);
  }
  if (!opt.out_dir.empty()) save_model(opt.out_dir / "checkpoints" / "mc_final.mckp", m, opt.provenance);
  return res;
}

}  // namespace micshift::cyclegan
