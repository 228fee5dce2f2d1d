#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "unit/conv_oracle.hpp"
#include "micshift/core/rng.hpp"
#include "micshift/tensor/checkpoint.hpp"
#include "micshift/tensor/grad_check.hpp"
#include "micshift/tensor/layers.hpp"
#include "micshift/tensor/optim.hpp"

using namespace micshift;
using namespace micshift::tensor;

namespace {

template <typename T>
DiffTensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool grad = false) {
  DiffTensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal(0.0, scale));
  t.set_requires_grad(grad);
  return t;
}

ParamList<double> as_params(std::initializer_list<std::pair<const char*, DiffTensor<double>>> items) {
  ParamList<double> out;
  for (const auto& [name, t] : items) out.push_back({name, t, true});
  return out;
}

/// Random projection of an output to a scalar, so every output element gets a
/// distinct cotangent.
DiffTensor<double> project(const DiffTensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  DiffTensor<double> r(y.shape());
  for (auto& v : r.storage()) v = rng.normal();
  return sum(mul(y, r));
}

}  // namespace

TEST(Conv2d, OneByOneIdentityKernel) {
  Rng rng(1);
  auto x = random_tensor<float>({2, 3, 5, 4}, rng);
  DiffTensor<float> k({3, 3, 1, 1}, 0.0f);
  for (std::size_t c = 0; c < 3; ++c) k.storage()[c * 3 + c] = 1.0f;
  auto y = conv2d(x, k, 1, 0);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.storage(), x.storage());
}

TEST(Conv2d, OnesKernelOnOnesInput) {
  DiffTensor<float> x({1, 1, 5, 5}, 1.0f), k({1, 1, 3, 3}, 1.0f);
  auto y = conv2d(x, k, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 5}));
  EXPECT_FLOAT_EQ(y.storage()[2 * 5 + 2], 9.0f);
  EXPECT_FLOAT_EQ(y.storage()[0], 4.0f);
  EXPECT_FLOAT_EQ(y.storage()[4], 4.0f);
  EXPECT_FLOAT_EQ(y.storage()[24], 4.0f);
  EXPECT_FLOAT_EQ(y.storage()[2], 6.0f);
}

TEST(Conv2d, StridedShapeAndNaiveMatch) {
  Rng rng(2);
  auto x = random_tensor<float>({4, 3, 8, 8}, rng);
  auto k = random_tensor<float>({5, 3, 3, 3}, rng);
  auto y = conv2d(x, k, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{4, 5, 4, 4}));
  auto ref = oracle::naive_conv2d(x.storage(), 4, 3, 8, 8, k.storage(), 5, 3, 3, 2, 1, false);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.storage()[i], ref[i], 1e-5);
}

TEST(Conv2d, MatchesNaiveReferenceOn200RandomCases) {
  Rng rng(3);
  double worst = 0.0;
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 1 + rng.index(3), cin = 1 + rng.index(4), cout = 1 + rng.index(4);
    const std::size_t k = 1 + rng.index(5), stride = 1 + rng.index(2);
    const std::size_t h = k + rng.index(8), w = k + rng.index(8);
    const bool reflect = rng.bernoulli(0.5);
    const std::size_t max_pad = reflect ? std::min({h - 1, w - 1, k / 2 + 1}) : k / 2 + 1;
    const std::size_t pad = rng.index(max_pad + 1);
    auto x = random_tensor<float>({n, cin, h, w}, rng);
    auto kt = random_tensor<float>({cout, cin, k, k}, rng);
    auto y = conv2d(x, kt, stride, pad, reflect ? PadMode::kReflect : PadMode::kZero);
    auto ref = oracle::naive_conv2d(x.storage(), n, cin, h, w, kt.storage(), cout, k, k, stride, pad, reflect);
    ASSERT_EQ(y.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, double(std::abs(y.storage()[i] - ref[i])));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Conv2d, ChannelMismatchIsAnError) {
  DiffTensor<float> x({1, 2, 4, 4}), k({1, 3, 3, 3});
  try {
    conv2d(x, k, 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "ShapeMismatch");
  }
}

TEST(InstanceNorm, ConstantChannelGivesZeros) {
  DiffTensor<float> x({2, 3, 4, 4}, 3.5f);
  auto y = standardize(x, NormAxes::kInstance, 1e-5f);
  for (float v : y.storage()) EXPECT_EQ(v, 0.0f);
}

TEST(InstanceNorm, ZeroMeanUnitVariance) {
  Rng rng(4);
  auto x = random_tensor<double>({2, 3, 6, 5}, rng, 3.0);
  auto y = standardize(x, NormAxes::kInstance, 1e-5);
  for (std::size_t p = 0; p < 6; ++p) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 30; ++i) m += y.storage()[p * 30 + i];
    m /= 30;
    for (std::size_t i = 0; i < 30; ++i) v += std::pow(y.storage()[p * 30 + i] - m, 2);
    v /= 30;
    EXPECT_NEAR(m, 0.0, 1e-4);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(InstanceNorm, AffineInputInvariance) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor<double>({1, 2, 5, 5}, rng);
    const double a = rng.uniform(0.5, 5.0), b = rng.uniform(-3.0, 3.0);
    auto y1 = standardize(x, NormAxes::kInstance, 1e-5);
    auto y2 = standardize(add_scalar(scale(x, a), b), NormAxes::kInstance, 1e-5);
    for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y1.storage()[i], y2.storage()[i], 1e-4);
  }
}

TEST(InstanceNorm, SinglePixelWithoutEpsIsDegenerate) {
  DiffTensor<double> x({2, 3, 1, 1}, 1.0);
  try {
    standardize(x, NormAxes::kInstance, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "DegenerateNorm");
  }
}

TEST(Ops, ActivationAndLossExamples) {
  auto x = DiffTensor<double>(Shape{3}, std::vector<double>{-1.0, 0.0, 2.0});
  EXPECT_DOUBLE_EQ(leaky_relu(x, 0.2).storage()[0], -0.2);
  EXPECT_DOUBLE_EQ(relu(x).storage()[0], 0.0);
  EXPECT_DOUBLE_EQ(relu(x).storage()[2], 2.0);
  EXPECT_DOUBLE_EQ(l1_loss(x, x).item(), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(DiffTensor<double>::scalar(1.0), DiffTensor<double>::scalar(0.5)).item(), 0.25);
}

TEST(Ops, NonFiniteResultIsRaisedEagerly) {
  DiffTensor<double> x(Shape{2}, std::vector<double>{1.0, std::numeric_limits<double>::quiet_NaN()});
  try {
    scale(x, 2.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "NonFinite");
  }
}

TEST(Backward, SumGivesOnes) {
  Rng rng(6);
  auto x = random_tensor<double>({3, 4}, rng, 1.0, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, FanOutAccumulates) {
  auto x = DiffTensor<double>(Shape{2}, std::vector<double>{1.5, -2.0});
  x.set_requires_grad(true);
  sum(add(x, x)).backward();
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 2.0);
}

TEST(Backward, MseOfLinearMatchesClosedForm) {
  Rng rng(7);
  const std::size_t n = 3, d = 4, k = 2;
  auto x = random_tensor<double>({n, d}, rng);
  auto w = random_tensor<double>({k, d}, rng, 1.0, true);
  auto y = random_tensor<double>({n, k}, rng);
  mse_loss(linear(x, w, DiffTensor<double>()), y).backward();
  // d/dW mean((xWᵀ − y)²) = 2 (xWᵀ − y)ᵀ x / (n·k)
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t t = 0; t < d; ++t) {
      double g = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double pred = 0.0;
        for (std::size_t u = 0; u < d; ++u) pred += x.storage()[i * d + u] * w.storage()[j * d + u];
        g += 2.0 * (pred - y.storage()[i * k + j]) * x.storage()[i * d + t] / double(n * k);
      }
      EXPECT_NEAR(w.grad()[j * d + t], g, 1e-6);
    }
  }
}

TEST(Backward, NonScalarIsAnError) {
  DiffTensor<double> x(Shape{2, 2}, 1.0);
  x.set_requires_grad(true);
  try {
    scale(x, 2.0).backward();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "NonScalarBackward");
  }
}

TEST(Backward, TapeIsReleased) {
  DiffTensor<double> x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  auto y = scale(x, 3.0);
  auto loss = sum(y);
  loss.backward();
  EXPECT_TRUE(loss.node()->parents.empty());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Backward, NoGradGuardSkipsRecording) {
  DiffTensor<double> x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  NoGradGuard g;
  auto y = scale(x, 3.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Adam, FirstStepMagnitudeIsLr) {
  ParamList<double> p{{"w", DiffTensor<double>(Shape{3}, std::vector<double>{1.0, -2.0, 0.5}), true}};
  p[0].tensor.set_requires_grad(true);
  p[0].tensor.grad_storage() = {0.3, -7.0, 1e-3};
  auto st = make_adam<double>(0.01, 0.5, 0.999);
  adam_step(p, st);
  EXPECT_NEAR(p[0].tensor.storage()[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(p[0].tensor.storage()[1], -2.0 + 0.01, 1e-6);
  EXPECT_NEAR(p[0].tensor.storage()[2], 0.5 - 0.01, 1e-6);
}

TEST(Adam, ZeroGradientZeroDecayLeavesParams) {
  ParamList<double> p{{"w", DiffTensor<double>(Shape{2}, std::vector<double>{1.0, -2.0}), true}};
  p[0].tensor.grad_storage() = {0.0, 0.0};
  auto st = make_adam<double>(0.1, 0.9, 0.999);
  for (int i = 0; i < 5; ++i) adam_step(p, st);
  EXPECT_EQ(p[0].tensor.storage()[0], 1.0);
  EXPECT_EQ(p[0].tensor.storage()[1], -2.0);
}

TEST(Adam, ConvergesOnQuadratic) {
  ParamList<double> p{{"theta", DiffTensor<double>(Shape{1}, 1.0), true}};
  p[0].tensor.set_requires_grad(true);
  auto st = make_adam<double>(0.1, 0.9, 0.999);
  for (int i = 0; i < 100; ++i) {
    p[0].tensor.zero_grad();
    sum(mul(p[0].tensor, p[0].tensor)).backward();
    adam_step(p, st);
  }
  EXPECT_LT(std::abs(p[0].tensor.storage()[0]), 0.05);
}

TEST(Adam, DecoupledDecayShrinksWeights) {
  ParamList<double> p{{"w", DiffTensor<double>(Shape{1}, 2.0), true}};
  p[0].tensor.grad_storage() = {0.0};
  auto st = make_adam<double>(0.1, 0.9, 0.999, 0.01);
  adam_step(p, st);
  EXPECT_NEAR(p[0].tensor.storage()[0], 2.0 * (1.0 - 0.1 * 0.01), 1e-12);
}

TEST(Adam, StepWithoutGradientsIsAnError) {
  ParamList<double> p{{"w", DiffTensor<double>(Shape{1}, 2.0), true}};
  auto st = make_adam<double>(0.1, 0.9, 0.999);
  try {
    adam_step(p, st);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "EmptyGrad");
  }
}

TEST(GradCheck, Quadratic) {
  Rng rng(8);
  auto w = random_tensor<double>({5}, rng, 1.0, true);
  auto params = as_params({{"w", w}});
  auto r = grad_check([&] { return sum(mul(w, w)); }, params);
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.checked, 5u);
}

TEST(GradCheck, ReluAtExactZeroIsExcluded) {
  auto w = DiffTensor<double>(Shape{3}, std::vector<double>{0.0, 1.0, -1.0});
  w.set_requires_grad(true);
  auto params = as_params({{"w", w}});
  auto r = grad_check([&] { return sum(relu(w)); }, params);
  EXPECT_EQ(r.skipped_kinks, 1u);
  EXPECT_EQ(r.checked, 2u);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, ConvInstanceNormLeakyStack) {
  Rng rng(9);
  auto x = random_tensor<double>({2, 2, 6, 6}, rng);
  Conv2d<double> c1(2, 3, 3, 1, 1, PadMode::kReflect, false, Init::kNormal002, rng);
  InstanceNorm2d<double> in1(3);
  Conv2d<double> c2(3, 2, 4, 2, 1, PadMode::kZero, true, Init::kNormal002, rng);
  for (auto& v : c1.weight.storage()) v *= 20.0;
  for (auto& v : c2.weight.storage()) v *= 20.0;
  ParamList<double> params;
  c1.collect(params, "c1");
  in1.collect(params, "in1");
  c2.collect(params, "c2");
  auto r = grad_check([&] { return project(c2(leaky_relu(in1(c1(x)), 0.2)), 11); }, params);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
  EXPECT_GT(r.checked, 0u);
}

struct OpCase {
  const char* name;
  std::function<DiffTensor<double>(const DiffTensor<double>&)> fn;
  Shape shape;
};

TEST(GradCheck, EveryDifferentiableOp) {
  Rng rng(10);
  DiffTensor<double> other = random_tensor<double>({2, 3, 4, 4}, rng);
  auto k3 = random_tensor<double>({2, 3, 3, 3}, rng, 0.5);
  auto gamma = random_tensor<double>({3}, rng);
  auto lw = random_tensor<double>({4, 6}, rng);
  std::vector<double> soft(3 * 4);
  for (std::size_t i = 0; i < 3; ++i) {
    soft[i * 4 + i] = 0.7;
    soft[i * 4 + 3] = 0.3;
  }
  std::vector<OpCase> cases = {
      {"add", [&](auto& x) { return add(x, other); }, {2, 3, 4, 4}},
      {"sub", [&](auto& x) { return sub(other, x); }, {2, 3, 4, 4}},
      {"mul", [&](auto& x) { return mul(x, other); }, {2, 3, 4, 4}},
      {"leaky_relu", [&](auto& x) { return leaky_relu(x, 0.2); }, {2, 3, 4, 4}},
      {"relu", [&](auto& x) { return relu(x); }, {2, 3, 4, 4}},
      {"conv_zero_s1", [&](auto& x) { return conv2d(x, k3, 1, 1); }, {2, 3, 5, 5}},
      {"conv_zero_s2", [&](auto& x) { return conv2d(x, k3, 2, 1); }, {2, 3, 6, 6}},
      {"conv_reflect", [&](auto& x) { return conv2d(x, k3, 1, 1, PadMode::kReflect); }, {2, 3, 5, 4}},
      {"conv_reflect_s2", [&](auto& x) { return conv2d(x, k3, 2, 1, PadMode::kReflect); }, {1, 3, 6, 6}},
      {"upsample", [&](auto& x) { return upsample_nearest2x(x); }, {2, 3, 3, 2}},
      {"instance", [&](auto& x) { return standardize(x, NormAxes::kInstance, 1e-5); }, {2, 3, 4, 4}},
      {"batch", [&](auto& x) { return standardize(x, NormAxes::kBatch, 1e-5); }, {2, 3, 4, 4}},
      {"frequency", [&](auto& x) { return standardize(x, NormAxes::kFrequency, 1e-5); }, {2, 3, 4, 4}},
      {"freq_per_channel", [&](auto& x) { return standardize(x, NormAxes::kFrequencyPerChannel, 1e-5); }, {2, 3, 4, 4}},
      {"channel_affine", [&](auto& x) { return channel_affine(x, gamma, DiffTensor<double>()); }, {2, 3, 4, 4}},
      {"global_avg_pool", [&](auto& x) { return global_avg_pool(x); }, {2, 3, 4, 4}},
      {"linear", [&](auto& x) { return linear(x, lw, DiffTensor<double>()); }, {3, 6}},
      {"mse", [&](auto& x) { return mse_loss(x, other); }, {2, 3, 4, 4}},
      {"l1", [&](auto& x) { return l1_loss(x, other); }, {2, 3, 4, 4}},
      {"softmax_ce", [&](auto& x) { return softmax_cross_entropy(x, soft); }, {3, 4}},
      {"mean", [&](auto& x) { return mean(x); }, {2, 3}},
      {"lerp", [&](auto& x) { return lerp(x, standardize(x, NormAxes::kFrequency, 1e-5), 0.3); }, {2, 3, 4, 4}},
  };
  for (auto& c : cases) {
    auto x = random_tensor<double>(c.shape, rng, 1.0, true);
    auto params = as_params({{"x", x}});
    auto r = grad_check([&] { return project(c.fn(x), 12); }, params);
    EXPECT_LT(r.max_rel_error, 1e-4) << c.name;
    EXPECT_GT(r.checked, 0u) << c.name;
  }
}

TEST(Checkpoint, RoundTripsBitExactly) {
  Rng rng(11);
  Conv2d<float> c(2, 3, 3, 1, 1, PadMode::kZero, true, Init::kNormal002, rng);
  ParamList<float> params;
  c.collect(params, "conv");
  Checkpoint ck;
  ck.sections.emplace_back("F", store(params));
  std::stringstream ss;
  write_checkpoint(ss, ck);
  auto back = read_checkpoint(ss);
  Conv2d<float> d(2, 3, 3, 1, 1, PadMode::kZero, true, Init::kNormal002, rng);
  ParamList<float> dp;
  d.collect(dp, "conv");
  restore(back.section("F"), dp);
  EXPECT_EQ(d.weight.storage(), c.weight.storage());
  EXPECT_EQ(d.bias.storage(), c.bias.storage());
}

TEST(Checkpoint, BadMagicIsRejected) {
  std::stringstream ss("XXXX0000");
  try {
    read_checkpoint(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "BadMagic");
  }
}

TEST(Conv2d, ForwardBackwardIsDeterministic) {
  auto run = [] {
    Rng rng(12);
    auto x = random_tensor<float>({4, 3, 9, 9}, rng, 1.0, true);
    auto k = random_tensor<float>({4, 3, 3, 3}, rng, 1.0, true);
    sum(conv2d(x, k, 2, 1, PadMode::kReflect)).backward();
    return std::make_pair(std::vector<float>(x.grad().begin(), x.grad().end()),
                          std::vector<float>(k.grad().begin(), k.grad().end()));
  };
  EXPECT_EQ(run(), run());
}
