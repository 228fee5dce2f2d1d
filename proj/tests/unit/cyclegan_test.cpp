#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "micshift/cyclegan/search.hpp"
#include "micshift/cyclegan/train.hpp"
#include "micshift/tensor/grad_check.hpp"

using namespace micshift;
using namespace micshift::cyclegan;
using tensor::DiffTensor;
using tensor::Shape;

namespace {

std::vector<dsp::Spectrogram> random_specs(std::size_t n, std::size_t mels, std::size_t frames, double offset,
                                           std::uint64_t seed) {
  Rng rng(seed);
  std::vector<dsp::Spectrogram> out(n);
  for (auto& s : out) {
    s.n_mels = mels;
    s.n_frames = frames;
    s.hop = 256;
    s.sample_rate = 22050;
    s.values.resize(mels * frames);
    for (auto& v : s.values) v = static_cast<float>(offset + rng.normal(0.0, 1.0));
  }
  return out;
}

std::vector<const dsp::Spectrogram*> ptrs(const std::vector<dsp::Spectrogram>& v) {
  std::vector<const dsp::Spectrogram*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

McTrainConfig tiny_config() {
  McTrainConfig cfg;
  cfg.gen = {4, 1, 2};
  cfg.disc.base_channels = 4;
  cfg.batch = 4;
  cfg.epochs = 1;
  cfg.patch_frames = 16;
  cfg.seed = 7;
  return cfg;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("micshift_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Discriminator, ReceptiveFieldIs16) {
  DiscriminatorCfg cfg;
  EXPECT_EQ(receptive_field(cfg), 16u);
  DiscriminatorCfg two_stride;
  two_stride.strides = {2, 2, 1};
  EXPECT_EQ(receptive_field(two_stride), 34u);
}

TEST(Discriminator, MeasuredReceptiveFieldMatches) {
  // Without instance norm (which couples the whole map through its
  // statistics) the gradient footprint of one score equals its receptive field.
  DiscriminatorCfg cfg;
  cfg.instance_norm = false;
  Rng rng(1);
  Discriminator<double> d(cfg, rng);
  for (auto p : d.parameters()) {
    for (auto& v : p.tensor.storage()) v = std::abs(v) + 0.01;
  }
  DiffTensor<double> x(Shape{1, 1, 48, 48}, 1.0);
  x.set_requires_grad(true);
  auto y = d(x);
  ASSERT_EQ(y.rank(), 4u);
  EXPECT_GT(y.dim(2), 1u);
  const std::size_t oi = y.dim(2) / 2, oj = y.dim(3) / 2;
  DiffTensor<double> sel(y.shape(), 0.0);
  sel.storage()[oi * y.dim(3) + oj] = 1.0;
  tensor::sum(tensor::mul(y, sel)).backward();
  std::size_t r0 = 48, r1 = 0, c0 = 48, c1 = 0;
  for (std::size_t i = 0; i < 48; ++i) {
    for (std::size_t j = 0; j < 48; ++j) {
      if (x.grad()[i * 48 + j] != 0.0) {
        r0 = std::min(r0, i), r1 = std::max(r1, i), c0 = std::min(c0, j), c1 = std::max(c1, j);
      }
    }
  }
  EXPECT_EQ(r1 - r0 + 1, 16u);
  EXPECT_EQ(c1 - c0 + 1, 16u);
}

TEST(Generator, PreservesShapeAndIsUnbounded) {
  Rng rng(2);
  Generator<float> g({4, 1, 2}, rng);
  DiffTensor<float> x(Shape{2, 1, 16, 20}, 0.0f);
  for (std::size_t i = 0; i < x.size(); ++i) x.storage()[i] = 50.0f * std::sin(0.37f * float(i));
  auto y = g(x);
  EXPECT_EQ(y.shape(), x.shape());
  for (float v : y.storage()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Generator, RejectsIndivisibleSize) {
  Rng rng(3);
  Generator<float> g({4, 1, 2}, rng);
  EXPECT_THROW(g(DiffTensor<float>(Shape{1, 1, 16, 18})), Error);
}

TEST(Losses, AdversarialExamples) {
  DiffTensor<double> ones(Shape{1, 1, 3, 3}, 1.0), zeros(Shape{1, 1, 3, 3}, 0.0), half(Shape{1, 1, 3, 3}, 0.5);
  EXPECT_DOUBLE_EQ(adv_loss_ls(ones, zeros, ones).loss_g.item(), 0.0);
  EXPECT_DOUBLE_EQ(adv_loss_ls(ones, zeros, half).loss_g.item(), 0.25);
  EXPECT_DOUBLE_EQ(adv_loss_ls(ones, zeros, half).loss_d.item(), 0.0);
  EXPECT_DOUBLE_EQ(adv_loss_ls(zeros, ones, half).loss_d.item(), 1.0);
}

TEST(Losses, AdversarialShapeMismatch) {
  DiffTensor<double> a(Shape{1, 1, 3, 3}), b(Shape{1, 1, 2, 3});
  EXPECT_THROW(adv_loss_ls(a, b, a), Error);
}

TEST(Losses, CycleExamples) {
  Rng rng(4);
  DiffTensor<double> xa(Shape{2, 1, 4, 4}), xb(Shape{2, 1, 4, 4});
  for (auto& v : xa.storage()) v = rng.normal();
  for (auto& v : xb.storage()) v = rng.normal();
  auto id = [](const DiffTensor<double>& x) { return x; };
  auto plus = [](const DiffTensor<double>& x) { return tensor::add_scalar(x, 0.7); };
  auto minus = [](const DiffTensor<double>& x) { return tensor::add_scalar(x, -0.7); };
  auto plus03 = [](const DiffTensor<double>& x) { return tensor::add_scalar(x, 0.3); };
  EXPECT_DOUBLE_EQ(cycle_loss<double>(id, id, xa, xb).item(), 0.0);
  EXPECT_NEAR(cycle_loss<double>(plus, minus, xa, xb).item(), 0.0, 1e-15);
  EXPECT_NEAR(cycle_loss<double>(plus03, id, xa, xb).item(), 0.6, 1e-12);
}

TEST(Losses, TotalGeneratorExamples) {
  auto s = [](double v) { return DiffTensor<double>::scalar(v); };
  EXPECT_NEAR(total_generator_loss(s(0.25), s(0.25), s(0.1), 10.0).item(), 1.5, 1e-12);
  EXPECT_DOUBLE_EQ(total_generator_loss(s(0.25), s(0.5), s(0.1), 0.0).item(), 0.75);
  EXPECT_DOUBLE_EQ(total_generator_loss(s(0.0), s(0.0), s(0.0), 10.0).item(), 0.0);
}

TEST(ReplayBuffer, FillPhaseReturnsInput) {
  ReplayBuffer<int> buf(50, 1);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(buf.query(i), i);
  EXPECT_EQ(buf.size(), 50u);
}

TEST(ReplayBuffer, ZeroCapacityPassesThrough) {
  ReplayBuffer<int> buf(0, 1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(buf.query(i), i);
  EXPECT_EQ(buf.size(), 0u);
}

TEST(ReplayBuffer, ReuseRateIsHalf) {
  ReplayBuffer<int> buf(50, 2);
  for (int i = 0; i < 50; ++i) buf.query(i);
  std::size_t stored = 0;
  for (int i = 50; i < 10050; ++i) {
    if (buf.query(i) != i) ++stored;
    ASSERT_LE(buf.size(), 50u);
  }
  EXPECT_NEAR(stored / 10000.0, 0.5, 0.02);
  for (int v : buf.items()) EXPECT_LT(v, 10050);
}

TEST(Schedule, HalvingArithmetic) {
  McTrainConfig cfg;
  cfg.lr_init = 1e-3;
  cfg.halve_interval = 10;
  EXPECT_DOUBLE_EQ(mc_learning_rate(cfg, 0), 1e-3);
  EXPECT_DOUBLE_EQ(mc_learning_rate(cfg, 9), 1e-3);
  EXPECT_DOUBLE_EQ(mc_learning_rate(cfg, 10), 5e-4);
  EXPECT_DOUBLE_EQ(mc_learning_rate(cfg, 25), 2.5e-4);
}

TEST(Config, BoundsAreEnforced) {
  auto cfg = tiny_config();
  cfg.lr_init = 1e-2;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.halve_interval = 5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.lambda_cycle = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(TrainMc, OneEpochWritesLoadableCheckpoint) {
  auto a = random_specs(8, 16, 17, -5.0, 1), b = random_specs(8, 16, 17, -3.0, 2);
  auto dir = temp_dir("mc_one_epoch");
  McTrainOptions opt;
  opt.out_dir = dir;
  opt.provenance = {"abc123", 7};
  auto res = train_mc(ptrs(a), ptrs(b), tiny_config(), opt);
  ASSERT_EQ(res.curve.size(), 1u);
  ASSERT_TRUE(std::filesystem::exists(dir / "checkpoints" / "mc_final.mckp"));
  ASSERT_TRUE(std::filesystem::exists(dir / "loss_curve.csv"));
  Provenance prov;
  auto back = load_model<float>(dir / "checkpoints" / "mc_final.mckp", &prov);
  EXPECT_EQ(prov.config_hash, "abc123");
  EXPECT_EQ(prov.seed, 7u);
  auto p1 = res.model.generator_params(), p2 = back.generator_params();
  auto d1 = res.model.discriminator_params(), d2 = back.discriminator_params();
  p1.insert(p1.end(), d1.begin(), d1.end());
  p2.insert(p2.end(), d2.begin(), d2.end());
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(p1[i].tensor.storage(), p2[i].tensor.storage()) << p1[i].name;
  EXPECT_EQ(back.opt_g.t, res.model.opt_g.t);
  EXPECT_EQ(back.opt_g.m, res.model.opt_g.m);
  EXPECT_EQ(back.opt_d.v, res.model.opt_d.v);
  EXPECT_EQ(back.norm_mean, static_cast<float>(res.model.norm_mean));
  // re-saving the loaded bundle reproduces the file byte for byte
  save_model(dir / "again.mckp", back, prov);
  std::ifstream f1(dir / "checkpoints" / "mc_final.mckp", std::ios::binary), f2(dir / "again.mckp", std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(s1, s2);
}

TEST(TrainMc, SeededRunsAreIdentical) {
  auto a = random_specs(8, 16, 17, -5.0, 1), b = random_specs(8, 16, 17, -3.0, 2);
  auto cfg = tiny_config();
  cfg.epochs = 2;
  auto r1 = train_mc(ptrs(a), ptrs(b), cfg);
  auto r2 = train_mc(ptrs(a), ptrs(b), cfg);
  ASSERT_EQ(r1.curve.size(), r2.curve.size());
  for (std::size_t i = 0; i < r1.curve.size(); ++i) {
    EXPECT_EQ(r1.curve[i].loss_g_total, r2.curve[i].loss_g_total);
    EXPECT_EQ(r1.curve[i].loss_cycle, r2.curve[i].loss_cycle);
    EXPECT_EQ(r1.curve[i].loss_d_a, r2.curve[i].loss_d_a);
  }
}

TEST(TrainMc, StreamsAreUnpaired) {
  auto a = random_specs(8, 16, 17, -5.0, 1), b = random_specs(5, 16, 17, -3.0, 2);
  auto pa = ptrs(a);
  Rng rng(9);
  rng.shuffle(pa.begin(), pa.end());
  auto res = train_mc(pa, ptrs(b), tiny_config());
  EXPECT_EQ(res.curve.size(), 1u);
  EXPECT_TRUE(std::isfinite(res.curve[0].loss_cycle));
}

TEST(TrainMc, UpdatesAreIsolated) {
  auto a = random_specs(4, 16, 16, -5.0, 1), b = random_specs(4, 16, 16, -3.0, 2);
  CycleGanModel<float> m(tiny_config().gen, tiny_config().disc, 3);
  m.opt_g = tensor::make_adam<float>(1e-3, 0.5, 0.999);
  m.opt_d = tensor::make_adam<float>(1e-3, 0.5, 0.999);
  auto gp = m.generator_params();
  auto dp = m.discriminator_params();
  auto xa = to_batch<float>(ptrs(a), 16, -4.0, 1.0), xb = to_batch<float>(ptrs(b), 16, -4.0, 1.0);
  auto snapshot = [](const tensor::ParamList<float>& p) {
    std::vector<std::vector<float>> s;
    for (const auto& q : p) s.push_back(q.tensor.storage());
    return s;
  };
  const auto d_before = snapshot(dp);
  const auto g_before = snapshot(gp);
  auto g = generator_step(m, gp, dp, xa, xb, 10.0f);
  EXPECT_EQ(snapshot(dp), d_before);
  EXPECT_NE(snapshot(gp), g_before);
  const auto g_after = snapshot(gp);
  ReplayBuffer<std::vector<float>> ba(50, 1), bb(50, 2);
  discriminator_step(m, dp, ba, bb, xa, xb, g.fake_a, g.fake_b);
  EXPECT_EQ(snapshot(gp), g_after);
  EXPECT_NE(snapshot(dp), d_before);
}

TEST(TrainMc, CompositeLossPassesGradCheck) {
  Rng rng(5);
  GeneratorCfg gc{2, 1, 1};
  DiscriminatorCfg dc;
  dc.base_channels = 2;
  Generator<double> f(gc, rng), g(gc, rng);
  Discriminator<double> da(dc, rng), db(dc, rng);
  tensor::ParamList<double> params = f.parameters("F");
  for (auto& p : g.parameters("G")) params.push_back(p);
  // Larger weights keep activations away from the tiny-signal regime.
  for (auto& p : params) {
    if (p.name.find("weight") != std::string::npos) {
      for (auto& v : p.tensor.storage()) v *= 15.0;
    }
  }
  DiffTensor<double> xa(Shape{1, 1, 8, 8}), xb(Shape{1, 1, 8, 8});
  for (auto& v : xa.storage()) v = rng.normal();
  for (auto& v : xb.storage()) v = rng.normal();
  auto loss = [&] {
    auto fb = f(xa), ga = g(xb);
    auto cyc = cycle_loss<double>(f, g, xa, xb);
    return total_generator_loss(generator_adv_loss(db(fb)), generator_adv_loss(da(ga)), cyc, 10.0);
  };
  tensor::GradCheckOptions opt;
  opt.max_per_param = 6;
  opt.seed = 3;
  auto r = tensor::grad_check(loss, params, opt);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "] floor " << r.floor;
  EXPECT_GT(r.checked, 50u);
}

TEST(Convert, ShapeAndTiling) {
  auto a = random_specs(3, 16, 37, -5.0, 1);
  CycleGanModel<float> m(tiny_config().gen, tiny_config().disc, 3);
  m.patch_frames = 16;
  auto y = convert(m, a[0], Direction::kAtoB);
  EXPECT_EQ(y.n_mels, a[0].n_mels);
  EXPECT_EQ(y.n_frames, a[0].n_frames);
  for (float v : y.values) EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(convert(m, a[0], Direction::kAtoB, false), Error);
  // a patch-width input converts identically with or without tiling
  auto p = random_specs(1, 16, 16, -5.0, 4);
  EXPECT_EQ(convert(m, p[0], Direction::kBtoA, false).values, convert(m, p[0], Direction::kBtoA, true).values);
  // batched conversion equals one-at-a-time conversion
  auto batch = convert_batch(m, ptrs(a), Direction::kAtoB);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(batch[i].values, convert(m, a[i], Direction::kAtoB).values);
}

TEST(Convert, TileOffsets) {
  EXPECT_EQ(tile_offsets(80, 80), (std::vector<std::size_t>{0}));
  EXPECT_EQ(tile_offsets(81, 80), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(tile_offsets(170, 80), (std::vector<std::size_t>{0, 80, 90}));
  EXPECT_THROW(tile_offsets(79, 80), Error);
}

TEST(Search, SingleIterationReturnsSampledConfig) {
  McTrainConfig base;
  auto r = hyperparam_search(base, 1, SearchStrategy::kQuantileSplit, [](const McTrainConfig& c) { return c.lr_init; }, 5);
  ASSERT_EQ(r.trials.size(), 1u);
  EXPECT_EQ(r.best.lr_init, r.trials[0].lr_init);
  EXPECT_EQ(r.best.halve_interval, r.trials[0].halve_interval);
}

TEST(Search, BestIsArgminAndProposalsInBounds) {
  McTrainConfig base;
  auto score = [](const McTrainConfig& c) {
    return std::pow(std::log10(c.lr_init) + 3.5, 2) + 0.001 * std::abs(double(c.halve_interval) - 30.0);
  };
  for (auto strat : {SearchStrategy::kRandom, SearchStrategy::kQuantileSplit}) {
    auto r = hyperparam_search(base, 10, strat, score, 11);
    ASSERT_EQ(r.trials.size(), 10u);
    for (const auto& t : r.trials) {
      EXPECT_LE(r.best_score, t.score);
      EXPECT_GE(t.lr_init, 2e-5);
      EXPECT_LE(t.lr_init, 2e-3);
      EXPECT_GE(t.halve_interval, 10u);
      EXPECT_LE(t.halve_interval, 50u);
    }
  }
}
