#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "micshift/augment/rfn.hpp"
#include "micshift/cyclegan/losses.hpp"
#include "micshift/cyclegan/networks.hpp"
#include "micshift/sec/classifier.hpp"
#include "micshift/tensor/grad_check.hpp"
#include "micshift/tensor/layers.hpp"

namespace micshift::pipeline {

struct GradCase {
  std::string family;
  std::string shape;
  tensor::GradCheckResult result;
};

struct GradSuiteReport {
  std::vector<GradCase> cases;
  double max_rel_error = 0.0;
  double seconds = 0.0;

  bool passed(double tol = 1e-4) const {
    if (cases.empty()) return false;
    for (const auto& c : cases) {
      if (c.result.checked == 0 || c.result.max_rel_error >= tol) return false;
    }
    return true;
  }
};

inline const std::vector<std::string>& grad_families() {
  static const std::vector<std::string> f = {
      "cyclegan_composite", "conv_zero",  "conv_reflect", "instance_norm", "batch_norm",  "relu",
      "leaky_relu",         "upsample",   "pool_linear",  "rfn",           "l1",          "mse",
      "softmax_ce",         "elementwise", "generator",   "discriminator", "classifier",
  };
  return f;
}

namespace detail {

using tensor::DiffTensor;
using tensor::ParamList;
using tensor::Shape;

inline DiffTensor<double> random_input(const Shape& s, Rng& rng, double scale = 1.0) {
  DiffTensor<double> t(s);
  for (auto& v : t.storage()) v = rng.normal(0.0, scale);
  t.set_requires_grad(true);
  return t;
}

/// Random linear functional, so every output element gets its own cotangent.
inline DiffTensor<double> project(const DiffTensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  DiffTensor<double> r(y.shape());
  for (auto& v : r.storage()) v = rng.normal();
  return tensor::sum(tensor::mul(y, r));
}

inline void boost_weights(ParamList<double>& params, double k) {
  for (auto& p : params) {
    if (p.name.find("weight") != std::string::npos) {
      for (auto& v : p.tensor.storage()) v *= k;
    }
  }
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

/// Builds one randomized case of a family and runs the check.
inline GradCase run_case(const std::string& family, std::uint64_t seed) {
  Rng rng(seed);
  GradCase gc;
  gc.family = family;
  ParamList<double> params;
  std::function<DiffTensor<double>()> loss;
  tensor::GradCheckOptions opt;
  opt.seed = seed;
  opt.max_per_param = 24;
  const std::size_t n = pick(rng, 1, 3), c = pick(rng, 1, 4), h = pick(rng, 4, 8), w = pick(rng, 4, 8);
  Shape xs{n, c, h, w};
  DiffTensor<double> x;
  auto add_input = [&](const Shape& s, double scale = 1.0) {
    x = random_input(s, rng, scale);
    params.push_back({"x", x, true});
  };

  if (family == "conv_zero" || family == "conv_reflect") {
    const bool reflect = family == "conv_reflect";
    const std::size_t k = reflect ? 2 * pick(rng, 1, 2) + 1 : pick(rng, 1, 4);
    const std::size_t stride = pick(rng, 1, 2);
    const std::size_t pad = reflect ? k / 2 : pick(rng, 0, 1);
    const std::size_t cout = pick(rng, 1, 5);
    add_input(xs);
    tensor::Conv2d<double> conv(c, cout, k, stride, pad, reflect ? tensor::PadMode::kReflect : tensor::PadMode::kZero,
                                rng.bernoulli(0.5), tensor::Init::kKaiming, rng);
    conv.collect(params, "conv");
    loss = [=] { return project(conv(x), seed); };
    gc.shape = tensor::shape_str(xs) + " k" + std::to_string(k) + " s" + std::to_string(stride) + " p" +
               std::to_string(pad) + " cout" + std::to_string(cout);
  } else if (family == "instance_norm") {
    add_input(xs, 2.0);
    tensor::InstanceNorm2d<double> norm(c);
    for (auto& v : norm.gamma.storage()) v = rng.normal(1.0, 0.3);
    norm.collect(params, "in");
    loss = [=] { return project(norm(x), seed); };
    gc.shape = tensor::shape_str(xs);
  } else if (family == "batch_norm") {
    xs[0] = pick(rng, 2, 3);
    add_input(xs, 2.0);
    tensor::BatchNorm2d<double> norm(c);
    for (auto& v : norm.gamma.storage()) v = rng.normal(1.0, 0.3);
    norm.collect(params, "bn");
    loss = [=]() mutable { return project(norm(x, true), seed); };
    gc.shape = tensor::shape_str(xs);
  } else if (family == "relu") {
    add_input(xs);
    loss = [=] { return project(tensor::relu(x), seed); };
    gc.shape = tensor::shape_str(xs);
  } else if (family == "leaky_relu") {
    add_input(xs);
    const double slope = rng.uniform(0.05, 0.3);
    loss = [=] { return project(tensor::leaky_relu(x, slope), seed); };
    gc.shape = tensor::shape_str(xs);
  } else if (family == "upsample") {
    add_input(xs);
    loss = [=] { return project(tensor::upsample_nearest2x(x), seed); };
    gc.shape = tensor::shape_str(xs);
  } else if (family == "pool_linear") {
    add_input(xs);
    const std::size_t out = pick(rng, 1, 5);
    tensor::Linear<double> lin(c, out, tensor::Init::kKaiming, rng);
    lin.collect(params, "linear");
    loss = [=] { return project(lin(tensor::global_avg_pool(x)), seed); };
    gc.shape = tensor::shape_str(xs) + " -> " + std::to_string(out);
  } else if (family == "rfn") {
    add_input(xs, 2.0);
    const double relax = rng.uniform(0.0, 0.9);
    const bool per_channel = rng.bernoulli(0.5);
    loss = [=] { return project(augment::rfn(x, relax, per_channel), seed); };
    gc.shape = tensor::shape_str(xs) + (per_channel ? " per-channel" : " joint");
  } else if (family == "l1" || family == "mse") {
    add_input(xs);
    DiffTensor<double> t(xs);
    for (auto& v : t.storage()) v = rng.normal();
    const bool l1 = family == "l1";
    loss = [=] { return l1 ? tensor::l1_loss(x, t) : tensor::mse_loss(x, t); };
    gc.shape = tensor::shape_str(xs);
  } else if (family == "softmax_ce") {
    const std::size_t k = pick(rng, 2, 6);
    add_input({n + 1, k}, 2.0);
    std::vector<double> y((n + 1) * k, 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      const double lam = rng.uniform(0.5, 1.0);
      y[i * k + rng.index(k)] += lam;
      y[i * k + rng.index(k)] += 1.0 - lam;
    }
    loss = [=] { return tensor::softmax_cross_entropy(x, y); };
    gc.shape = "[" + std::to_string(n + 1) + ", " + std::to_string(k) + "]";
  } else if (family == "elementwise") {
    add_input(xs);
    auto y = random_input(xs, rng);
    params.push_back({"y", y, true});
    const double s = rng.uniform(-2.0, 2.0);
    loss = [=] {
      auto a = tensor::mul(tensor::add(x, y), tensor::sub(x, tensor::scale(y, s)));
      return project(tensor::add_scalar(a, s), seed);
    };
    gc.shape = tensor::shape_str(xs);
  } else if (family == "generator") {
    const std::size_t hh = 2 * pick(rng, 2, 4), ww = 2 * pick(rng, 2, 4);
    add_input({n, 1, hh, ww});
    cyclegan::GeneratorCfg cfg{pick(rng, 1, 2), 1, 1};
    cyclegan::Generator<double> g(cfg, rng);
    auto gp = g.parameters("G");
    boost_weights(gp, 15.0);
    params.insert(params.end(), gp.begin(), gp.end());
    opt.max_per_param = 6;
    loss = [=] { return project(g(x), seed); };
    gc.shape = tensor::shape_str(x.shape()) + " base" + std::to_string(cfg.base_channels);
  } else if (family == "discriminator") {
    const std::size_t hh = pick(rng, 8, 10), ww = pick(rng, 8, 10);
    add_input({n, 1, hh, ww});
    cyclegan::DiscriminatorCfg cfg;
    cfg.base_channels = pick(rng, 1, 2);
    cyclegan::Discriminator<double> d(cfg, rng);
    auto dp = d.parameters("D");
    boost_weights(dp, 15.0);
    params.insert(params.end(), dp.begin(), dp.end());
    opt.max_per_param = 6;
    loss = [=] { return cyclegan::discriminator_loss(d(x), d(tensor::scale(x, 0.5))); };
    gc.shape = tensor::shape_str(x.shape()) + " base" + std::to_string(cfg.base_channels);
  } else if (family == "classifier") {
    const std::size_t k = pick(rng, 2, 4);
    add_input({pick(rng, 2, 3), 1, pick(rng, 6, 9), pick(rng, 6, 9)});
    sec::ClassifierCfg cfg;
    cfg.base_channels = 2;
    cfg.n_stages = 2;
    cfg.blocks_per_stage = 1;
    cfg.n_classes = k;
    cfg.rfn_enabled = rng.bernoulli(0.5);
    auto net = std::make_shared<sec::Classifier<double>>(cfg, seed);
    auto np = net->parameters();
    params.insert(params.end(), np.begin(), np.end());
    std::vector<double> y(x.dim(0) * k, 0.0);
    for (std::size_t i = 0; i < x.dim(0); ++i) y[i * k + rng.index(k)] = 1.0;
    opt.max_per_param = 8;
    loss = [=] { return tensor::softmax_cross_entropy((*net)(x, true), y); };
    gc.shape = tensor::shape_str(x.shape()) + (cfg.rfn_enabled ? " rfn" : "") + " k" + std::to_string(k);
  } else if (family == "cyclegan_composite") {
    const std::size_t side = 2 * pick(rng, 4, 5);
    cyclegan::GeneratorCfg gcfg{2, 1, 1};
    cyclegan::DiscriminatorCfg dcfg;
    dcfg.base_channels = 2;
    cyclegan::Generator<double> f(gcfg, rng), g(gcfg, rng);
    cyclegan::Discriminator<double> da(dcfg, rng), db(dcfg, rng);
    params = f.parameters("F");
    for (auto& p : g.parameters("G")) params.push_back(p);
    boost_weights(params, 15.0);
    auto xa = random_input({1, 1, side, side}, rng), xb = random_input({1, 1, side, side}, rng);
    xa.set_requires_grad(false);
    xb.set_requires_grad(false);
    const double lambda = rng.uniform(5.0, 10.0);
    opt.max_per_param = 4;
    loss = [=] {
      auto cyc = cyclegan::cycle_loss<double>(f, g, xa, xb);
      return cyclegan::total_generator_loss(cyclegan::generator_adv_loss(db(f(xa))),
                                            cyclegan::generator_adv_loss(da(g(xb))), cyc, lambda);
    };
    gc.shape = tensor::shape_str(xa.shape()) + " x2 lambda " + std::to_string(lambda).substr(0, 4);
  } else {
    throw Error("InvalidArgument", "unknown gradient family " + family);
  }
  gc.result = tensor::grad_check(loss, params, opt);
  return gc;
}

}  // namespace detail

/// `n_cases` randomized shapes cycling through every layer family, the
/// composite CycleGAN loss first.
inline GradSuiteReport run_grad_suite(std::size_t n_cases = 50, std::uint64_t seed = 2024) {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteReport rep;
  const auto& fams = grad_families();
  for (std::size_t i = 0; i < n_cases; ++i) {
    rep.cases.push_back(detail::run_case(fams[i % fams.size()], derive_seed(seed, {i})));
    rep.max_rel_error = std::max(rep.max_rel_error, rep.cases.back().result.max_rel_error);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline nlohmann::json to_json(const GradSuiteReport& r, double tol = 1e-4) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases) {
    cases.push_back({{"family", c.family},
                     {"shape", c.shape},
                     {"max_rel_error", c.result.max_rel_error},
                     {"checked", c.result.checked},
                     {"skipped_kinks", c.result.skipped_kinks},
                     {"worst_param", c.result.worst_param}});
  }
  return {{"cases", cases}, {"max_rel_error", r.max_rel_error}, {"tolerance", tol}, {"passed", r.passed(tol)}};
}

}  // namespace micshift::pipeline
