#include <malloc.h>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "micshift/pipeline/commands.hpp"

using namespace micshift;
using namespace micshift::pipeline;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c, bool config_required = true) {
  auto* opt = app->add_option("--config", c.config, "JSON run config");
  if (config_required) opt->required();
  app->add_option("--seed", c.seed, "override the config seed");
  app->add_option("--out-dir", c.out_dir, "override the run directory");
  app->add_flag("--quiet", c.quiet, "no progress output on stderr");
}

Workspace workspace(const Common& c) {
  auto cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out_dir.empty()) cfg.work_dir = c.out_dir;
  return Workspace(std::move(cfg), !c.quiet);
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

int fail(const std::string& code, const std::string& message, int status = 1) {
  std::cout << nlohmann::json{{"error", code}, {"message", message}}.dump() << '\n';
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 28);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"micshift: microphone-conversion augmentation experiments"};
  app.require_subcommand(1);

  Common synth_c, mc_c, sec_c, eval_c, analyze_c;
  auto* synth = app.add_subcommand("synth", "render, filter and split the synthetic corpus");
  add_common(synth, synth_c);

  std::vector<std::string> pairs;
  auto* train_mc = app.add_subcommand("train-mc", "train source <-> target conversion models");
  add_common(train_mc, mc_c);
  train_mc->add_option("--pair", pairs, "target device(s); default: every configured pair");

  std::string checkpoint, in_path, out_path, direction = "A2B";
  std::string convert_out_dir;
  bool no_tiling = false;
  auto* convert = app.add_subcommand("convert", "convert one MCSG spectrogram with a trained generator");
  convert->add_option("--checkpoint", checkpoint, "conversion model (.mckp)")->required();
  convert->add_option("--in", in_path, "input .mcsg")->required();
  convert->add_option("--out", out_path, "output .mcsg")->required();
  convert->add_option("--direction", direction, "A2B or B2A");
  convert->add_option("--out-dir", convert_out_dir, "directory for a relative --out");
  convert->add_flag("--no-tiling", no_tiling, "require the input width to equal the training patch");

  std::vector<std::string> sec_conditions;
  auto* train_sec = app.add_subcommand("train-sec", "train classifiers for conditions");
  add_common(train_sec, sec_c);
  train_sec->add_option("--condition", sec_conditions, "condition name(s); default: all");

  std::vector<std::string> eval_conditions;
  auto* eval = app.add_subcommand("eval", "score trained classifiers per device");
  add_common(eval, eval_c);
  eval->add_option("--condition", eval_conditions, "condition name(s); default: all");

  std::string analyze_ckpt;
  auto* analyze = app.add_subcommand("analyze", "difference spectra of the corpus or of a conversion model");
  add_common(analyze, analyze_c);
  analyze->add_option("--checkpoint", analyze_ckpt, "analyze this conversion model instead of the corpus");

  std::uint64_t grad_seed = 2024;
  std::size_t grad_cases = 50;
  std::string grad_out;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every layer (64-bit)");
  gradcheck->add_option("--seed", grad_seed, "shape/data seed");
  gradcheck->add_option("--cases", grad_cases, "number of randomized cases");
  gradcheck->add_option("--out-dir", grad_out, "write gradcheck_report.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what(), 2);
  }

  try {
    if (*synth) {
      auto ws = workspace(synth_c);
      print(cmd_synth(ws));
    } else if (*train_mc) {
      auto ws = workspace(mc_c);
      if (pairs.empty()) pairs = ws.cfg().mc_pairs();
      nlohmann::json out = nlohmann::json::array();
      for (const auto& p : pairs) out.push_back(cmd_train_mc(ws, p));
      print(out);
    } else if (*convert) {
      std::filesystem::path out = out_path;
      if (!convert_out_dir.empty() && out.is_relative()) out = std::filesystem::path(convert_out_dir) / out;
      print(cmd_convert(checkpoint, in_path, out, direction, !no_tiling));
    } else if (*train_sec) {
      auto ws = workspace(sec_c);
      if (sec_conditions.empty()) {
        for (const auto& k : ws.cfg().conditions) sec_conditions.push_back(k.name);
      }
      for (const auto& name : sec_conditions) ws.cfg().condition(name);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& name : sec_conditions) {
        for (auto& r : cmd_train_sec(ws, name)) out.push_back(std::move(r));
      }
      print(out);
    } else if (*eval) {
      auto ws = workspace(eval_c);
      const auto out = cmd_eval(ws, eval_conditions);
      std::cout << out.table;
    } else if (*analyze) {
      auto ws = workspace(analyze_c);
      print(analyze_ckpt.empty() ? cmd_analyze_corpus(ws) : cmd_analyze_checkpoint(ws, analyze_ckpt));
    } else if (*gradcheck) {
      const auto j = cmd_gradcheck(grad_out, grad_seed, grad_cases);
      print({{"max_rel_error", j["max_rel_error"]}, {"passed", j["passed"]}, {"cases", grad_cases}});
    }
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("SchemaError", e.what());
  } catch (const std::exception& e) {
    return fail("InternalError", e.what());
  }
  return 0;
}
