#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "micshift/dsp/spectrogram_io.hpp"
#include "micshift/pipeline/analysis.hpp"
#include "micshift/pipeline/config.hpp"
#include "micshift/pipeline/grad_suite.hpp"
#include "micshift/sec/eval.hpp"

namespace micshift::pipeline {

namespace fs = std::filesystem;

/// File-system safe form of a condition or device name.
inline std::string slug(const std::string& s) {
  std::string out;
  for (char ch : s) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-' ||
                    ch == '_' || ch == '.';
    out += ok ? ch : '_';
  }
  return out;
}

inline std::string join(const std::vector<std::string>& xs, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? sep : "") + xs[i];
  return out;
}

inline void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  require(static_cast<bool>(os), "IoError", "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

inline void write_text(const fs::path& path, const std::string& s) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  require(static_cast<bool>(os), "IoError", "cannot write " + path.string());
  os << s;
}

/// Layout of a run directory.
struct RunPaths {
  fs::path root;

  fs::path corpus() const { return root / "corpus"; }
  fs::path mc(const std::string& pair) const { return root / "mc" / slug(pair); }
  fs::path mc_snapshot(const std::string& pair, std::size_t epoch) const {
    std::ostringstream name;
    name << "mc_epoch" << std::setw(3) << std::setfill('0') << epoch << ".mckp";
    return mc(pair) / "checkpoints" / name.str();
  }
  fs::path sec(const std::string& condition, const std::string& device = "") const {
    auto p = root / "sec" / slug(condition);
    return device.empty() ? p : p / slug(device);
  }
  fs::path eval() const { return root / "eval"; }
  fs::path analyze() const { return root / "analyze"; }
};

/// One classifier trained for a condition. Shared-scope conditions have a
/// single unit with an empty `device`; per-device conditions have one per
/// device.
struct TrainUnit {
  std::string device;
  std::vector<std::string> train_devices;
  std::vector<std::string> eval_devices;
  std::vector<std::string> mc_targets;
};

inline std::vector<TrainUnit> train_units(const RunConfig& c, const Condition& k) {
  std::vector<TrainUnit> out;
  if (k.scope == Scope::kPerDevice) {
    if (k.uses_mc()) {
      for (const auto& t : c.mc_pairs()) out.push_back({t, {c.source_device}, {t}, {t}});
    } else {
      for (const auto& d : c.device_names()) out.push_back({d, {d}, {d}, {}});
    }
    return out;
  }
  TrainUnit u;
  u.train_devices = k.train_devices.empty() ? std::vector<std::string>{c.source_device} : k.train_devices;
  u.eval_devices = k.eval_devices.empty() ? c.device_names() : k.eval_devices;
  if (k.uses_mc()) {
    if (!k.mc_targets.empty()) {
      u.mc_targets = k.mc_targets;
    } else {
      require(u.train_devices == std::vector<std::string>{c.source_device}, "InvalidConfig",
              "condition '" + k.name + "': mc_targets must be listed when training on non-source devices");
      u.mc_targets = c.mc_pairs();
    }
  }
  out.push_back(std::move(u));
  return out;
}

/// A loaded config plus lazily loaded corpus subsets, conversion models and
/// converted training sets, shared by the commands of one process.
class Workspace {
 public:
  explicit Workspace(RunConfig cfg, bool verbose = false)
      : cfg_(std::move(cfg)), paths_{cfg_.work_dir}, hash_(config_hash(cfg_)), verbose_(verbose) {}

  const RunConfig& cfg() const { return cfg_; }
  const RunPaths& paths() const { return paths_; }
  const std::string& hash() const { return hash_; }
  bool verbose() const { return verbose_; }
  cyclegan::Provenance provenance() const { return {hash_, cfg_.seed}; }
  json provenance_json() const { return {{"config_hash", hash_}, {"seed", cfg_.seed}}; }

  void log(const std::string& msg) const {
    if (verbose_) std::fprintf(stderr, "%s\n", msg.c_str());
  }

  /// Warns when an artifact was produced by a different config.
  void check_provenance(const std::string& what, const std::string& hash) const {
    if (hash != hash_) {
      std::fprintf(stderr, "warning: %s was produced by config %s (current %s)\n", what.c_str(), hash.c_str(),
                   hash_.c_str());
    }
  }

  const sim::Corpus& subset(const std::string& name) {
    auto it = subsets_.find(name);
    if (it == subsets_.end()) {
      const auto summary = paths_.corpus() / "summary.json";
      require(fs::exists(summary), "FileNotFound", "no corpus at " + paths_.corpus().string() + " (run synth first)");
      std::ifstream is(summary);
      const auto j = json::parse(is);
      check_provenance("corpus", j.value("config_hash", ""));
      it = subsets_.emplace(name, sim::read_corpus(paths_.corpus(), name)).first;
    }
    return it->second;
  }

  const cyclegan::CycleGanModel<float>& mc_model(const std::string& pair, std::size_t epoch) {
    const auto key = pair + "@" + std::to_string(epoch);
    auto it = models_.find(key);
    if (it == models_.end()) {
      const auto path = paths_.mc_snapshot(pair, epoch);
      require(fs::exists(path), "FileNotFound", "missing conversion model " + path.string() + " (run train-mc)");
      cyclegan::Provenance prov;
      auto m = cyclegan::load_model<float>(path, &prov);
      check_provenance(path.string(), prov.config_hash);
      require(m.device_a == cfg_.source_device && m.device_b == pair, "DeviceMismatch",
              path.string() + " converts " + m.device_a + " <-> " + m.device_b + ", expected " + cfg_.source_device +
                  " <-> " + pair);
      it = models_.emplace(key, std::move(m)).first;
    }
    return it->second;
  }

  /// train_sec segments of `from`, in segment order, converted towards `to`
  /// with the snapshot of `epoch`: source -> target uses the forward generator
  /// of that target's pair, target -> source the backward one.
  const std::vector<dsp::Spectrogram>& converted(const std::string& from, const std::string& to, std::size_t epoch) {
    const auto key = from + ">" + to + "@" + std::to_string(epoch);
    auto it = converted_.find(key);
    if (it != converted_.end()) return it->second;
    const auto pairs = cfg_.mc_pairs();
    const auto has_pair = [&](const std::string& d) { return std::find(pairs.begin(), pairs.end(), d) != pairs.end(); };
    std::string pair;
    cyclegan::Direction dir;
    if (from == cfg_.source_device && has_pair(to)) {
      pair = to;
      dir = cyclegan::Direction::kAtoB;
    } else if (to == cfg_.source_device && has_pair(from)) {
      pair = from;
      dir = cyclegan::Direction::kBtoA;
    } else {
      throw Error("InvalidConfig", "no conversion model for " + from + " -> " + to);
    }
    const auto& model = mc_model(pair, epoch);
    std::vector<const dsp::Spectrogram*> specs;
    for (const auto* e : subset("train_sec").device_entries(from)) specs.push_back(&e->spectrogram);
    const auto t0 = std::chrono::steady_clock::now();
    auto out = cyclegan::convert_batch(model, specs, dir);
    log("[convert] " + from + " -> " + to + " @" + std::to_string(epoch) + ": " + std::to_string(specs.size()) +
        " segments (" +
        std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + "s)");
    return converted_.emplace(key, std::move(out)).first->second;
  }

 private:
  RunConfig cfg_;
  RunPaths paths_;
  std::string hash_;
  bool verbose_ = false;
  std::map<std::string, sim::Corpus> subsets_;
  std::map<std::string, cyclegan::CycleGanModel<float>> models_;
  std::map<std::string, std::vector<dsp::Spectrogram>> converted_;
};

// ---------------------------------------------------------------- synth

inline json subset_summary(const sim::Corpus& c, int n_classes) {
  std::vector<std::size_t> per_class(static_cast<std::size_t>(n_classes), 0);
  for (const auto& id : c.segment_ids()) per_class[static_cast<std::size_t>(c.entries[c.index.at(id).begin()->second].class_id)]++;
  return {{"segments", c.index.size()}, {"entries", c.entries.size()}, {"per_class", per_class},
          {"counterpart_complete", c.counterpart_complete()}};
}

/// Renders, filters and splits the corpus into work_dir/corpus.
inline json cmd_synth(Workspace& ws) {
  const auto& cfg = ws.cfg();
  const auto classes = sim::default_event_classes(cfg.corpus.n_classes);
  sim::CorpusOptions opt;
  opt.event_duration_s = cfg.corpus.event_duration_s;
  if (cfg.corpus.keep_waveforms) opt.keep_waveforms = {cfg.source_device};
  const auto t0 = std::chrono::steady_clock::now();
  const auto full = sim::build_corpus(classes, cfg.devices, cfg.corpus.n_events, derive_seed(cfg.seed, {10}), opt);
  const sim::ActivityThresholds th{sim::sparse_class_ids(classes), cfg.corpus.sparse_threshold,
                                   cfg.corpus.dense_threshold};
  const auto kept = sim::activity_filter(full, th);
  const auto split = sim::split_corpus(kept, cfg.corpus.split, derive_seed(cfg.seed, {11}));
  const sim::ManifestProvenance prov{ws.hash(), cfg.seed};
  const auto dir = ws.paths().corpus();
  sim::write_corpus(split.train_mc, dir, "train_mc", prov);
  sim::write_corpus(split.train_sec, dir, "train_sec", prov);
  sim::write_corpus(split.val, dir, "val", prov);
  json summary = ws.provenance_json();
  summary["command"] = "synth";
  summary["events"] = cfg.corpus.n_events;
  summary["segments_rendered"] = full.index.size();
  summary["segments_kept"] = kept.index.size();
  summary["devices"] = cfg.device_names();
  summary["subsets"] = {{"train_mc", subset_summary(split.train_mc, cfg.corpus.n_classes)},
                        {"train_sec", subset_summary(split.train_sec, cfg.corpus.n_classes)},
                        {"val", subset_summary(split.val, cfg.corpus.n_classes)}};
  write_json(dir / "summary.json", summary);
  ws.log("[synth] " + std::to_string(kept.index.size()) + "/" + std::to_string(full.index.size()) +
         " segments kept (" +
         std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + "s)");
  return summary;
}

// ---------------------------------------------------------------- train-mc

/// Trains the source <-> `pair` conversion model on the train_mc subset and
/// keeps the configured generator snapshots.
inline json cmd_train_mc(Workspace& ws, const std::string& pair) {
  const auto& cfg = ws.cfg();
  const auto pairs = cfg.mc_pairs();
  require(std::find(pairs.begin(), pairs.end(), pair) != pairs.end(), "InvalidArgument",
          pair + " is not a configured mc pair");
  const auto& corpus = ws.subset("train_mc");
  std::vector<const dsp::Spectrogram*> set_a, set_b;
  for (const auto* e : corpus.device_entries(cfg.source_device)) set_a.push_back(&e->spectrogram);
  for (const auto* e : corpus.device_entries(pair)) set_b.push_back(&e->spectrogram);
  if (cfg.mc.max_segments > 0) {
    set_a.resize(std::min(set_a.size(), cfg.mc.max_segments));
    set_b.resize(std::min(set_b.size(), cfg.mc.max_segments));
  }
  auto tc = cfg.mc.train;
  tc.seed = derive_seed(cfg.seed, {20, io::fnv1a(pair)});
  const auto out_dir = ws.paths().mc(pair);
  json summary = ws.provenance_json();
  summary["command"] = "train-mc";
  summary["device_a"] = cfg.source_device;
  summary["device_b"] = pair;
  summary["segments_a"] = set_a.size();
  summary["segments_b"] = set_b.size();

  if (cfg.mc.search.n_iter > 0) {
    // every 5th segment is held out to score proposals
    std::vector<const dsp::Spectrogram*> fit_a, fit_b, hold_a, hold_b;
    for (std::size_t i = 0; i < set_a.size(); ++i) (i % 5 == 4 ? hold_a : fit_a).push_back(set_a[i]);
    for (std::size_t i = 0; i < set_b.size(); ++i) (i % 5 == 4 ? hold_b : fit_b).push_back(set_b[i]);
    auto base = tc;
    base.epochs = cfg.mc.search.epochs;
    const auto res = cyclegan::hyperparam_search(
        base, cfg.mc.search.n_iter, cfg.mc.search.strategy,
        [&](const cyclegan::McTrainConfig& c) {
          const auto r = cyclegan::train_mc(fit_a, fit_b, c);
          const double score = cyclegan::evaluate_cycle_loss(r.model, hold_a, hold_b);
          ws.log("[search] lr=" + std::to_string(c.lr_init) + " interval=" + std::to_string(c.halve_interval) +
                 " held-out cycle=" + std::to_string(score));
          return score;
        },
        derive_seed(tc.seed, {7}));
    tc.lr_init = res.best.lr_init;
    tc.halve_interval = res.best.halve_interval;
    json trials = json::array();
    for (const auto& t : res.trials) {
      trials.push_back({{"lr_init", t.lr_init}, {"halve_interval", t.halve_interval}, {"score", t.score}});
    }
    summary["search"] = {{"trials", trials}, {"best_score", res.best_score}};
  }

  cyclegan::McTrainOptions opt;
  opt.out_dir = out_dir;
  opt.provenance = ws.provenance();
  opt.device_a = cfg.source_device;
  opt.device_b = pair;
  opt.verbose = ws.verbose();
  opt.on_epoch = [&](std::size_t epoch, const cyclegan::CycleGanModel<float>& m) {
    const bool scheduled = epoch == tc.epochs || (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0);
    const bool wanted = std::find(cfg.mc.snapshots.begin(), cfg.mc.snapshots.end(), epoch) != cfg.mc.snapshots.end();
    if (wanted && !scheduled) cyclegan::save_model(ws.paths().mc_snapshot(pair, epoch), m, opt.provenance);
  };
  ws.log("[train-mc] " + cfg.source_device + " <-> " + pair + ": " + std::to_string(set_a.size()) + " / " +
         std::to_string(set_b.size()) + " segments, " + std::to_string(tc.epochs) + " epochs");
  const auto res = cyclegan::train_mc(set_a, set_b, tc, opt);
  summary["lr_init"] = tc.lr_init;
  summary["halve_interval"] = tc.halve_interval;
  summary["epochs"] = tc.epochs;
  summary["cycle_loss_first_epoch"] = res.curve.front().loss_cycle;
  summary["cycle_loss_final_epoch"] = res.curve.back().loss_cycle;
  summary["norm_mean"] = res.model.norm_mean;
  summary["norm_std"] = res.model.norm_std;
  write_json(out_dir / "run.json", summary);
  return summary;
}

// ---------------------------------------------------------------- train-sec

/// Trains every classifier of one condition on the train_sec subset.
inline json cmd_train_sec(Workspace& ws, const std::string& condition) {
  const auto& cfg = ws.cfg();
  const auto& k = cfg.condition(condition);
  const auto& corpus = ws.subset("train_sec");
  json runs = json::array();
  for (const auto& unit : train_units(cfg, k)) {
    std::vector<sec::SecSample> data;
    for (const auto& u : unit.train_devices) {
      for (const auto* e : corpus.device_entries(u)) {
        data.push_back({&e->spectrogram, e->waveform.empty() ? nullptr : &e->waveform, e->class_id, u, data.size()});
      }
    }
    // table[key][target] -> converted spectrogram
    std::vector<std::vector<const dsp::Spectrogram*>> table;
    augment::ConverterBank bank;
    if (k.uses_mc()) {
      table.assign(data.size(), std::vector<const dsp::Spectrogram*>(unit.mc_targets.size(), nullptr));
      std::size_t base = 0;
      for (const auto& u : unit.train_devices) {
        const std::size_t n = corpus.device_entries(u).size();
        for (std::size_t t = 0; t < unit.mc_targets.size(); ++t) {
          if (unit.mc_targets[t] == u) {
            for (std::size_t i = 0; i < n; ++i) table[base + i][t] = data[base + i].spectrogram;
            continue;
          }
          const auto& conv = ws.converted(u, unit.mc_targets[t], k.mc_epochs);
          for (std::size_t i = 0; i < n; ++i) table[base + i][t] = &conv[i];
        }
        base += n;
      }
      bank.source_devices = unit.train_devices;
      bank.targets = unit.mc_targets;
      bank.convert = [&table](const dsp::Spectrogram&, std::size_t key, std::size_t t) { return *table[key][t]; };
    }
    const augment::AugmentChain chain(k.augment, dsp::FeatureConfig{}, &bank);
    auto tc = cfg.sec.train;
    tc.seed = derive_seed(cfg.seed, {30});
    sec::SecTrainOptions opt;
    opt.out_dir = ws.paths().sec(k.name, unit.device);
    opt.condition = k.name;
    opt.provenance = ws.provenance();
    opt.verbose = ws.verbose();
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = sec::train_sec(data, tc, cfg.sec.classifier, chain, opt);
    ws.log("[train-sec] " + k.name + (unit.device.empty() ? "" : " / " + unit.device) + ": " +
           std::to_string(data.size()) + " segments, final loss " + std::to_string(res.curve.back().loss) + " (" +
           std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + "s)");
    json chain_json = json::array();
    for (const auto& s : k.augment) chain_json.push_back(augment::to_json(s));
    json run = ws.provenance_json();
    run["command"] = "train-sec";
    run["condition"] = k.name;
    run["unit_device"] = unit.device;
    run["train_devices"] = unit.train_devices;
    run["eval_devices"] = unit.eval_devices;
    run["mc_targets"] = unit.mc_targets;
    run["mc_epochs"] = k.mc_epochs;
    run["augment"] = chain_json;
    run["segments"] = data.size();
    run["final_loss"] = res.curve.back().loss;
    write_json(opt.out_dir / "run.json", run);
    runs.push_back(run);
  }
  return runs;
}

// ---------------------------------------------------------------- eval

/// Scores one condition's classifiers on the val subset. Per-device
/// conditions are assembled from their per-device models.
inline sec::EvalReport evaluate_condition(Workspace& ws, const Condition& k) {
  const auto& cfg = ws.cfg();
  const auto& val = ws.subset("val");
  sec::EvalReport r;
  r.condition = k.name;
  std::vector<sec::DeviceScore> scores;
  const auto units = train_units(cfg, k);
  for (const auto& unit : units) {
    const auto path = ws.paths().sec(k.name, unit.device) / "sec_model.mckp";
    require(fs::exists(path), "FileNotFound", "missing classifier " + path.string() + " (run train-sec)");
    auto model = sec::load_sec_model(path);
    ws.check_provenance(path.string(), model.provenance.config_hash);
    for (auto& s : sec::evaluate_devices(model, val, unit.eval_devices)) scores.push_back(std::move(s));
  }
  r.source_device = k.scope == Scope::kPerDevice ? cfg.source_device : join(units.front().train_devices, "+");
  // report devices in suite order
  for (const auto& d : cfg.device_names()) {
    for (const auto& s : scores) {
      if (s.device == d) r.devices.push_back(s);
    }
  }
  sec::summarize(r);
  return r;
}

struct EvalOutput {
  std::vector<std::pair<std::string, sec::EvalReport>> reports;  // (group, report)
  json report_json;
  std::string table;
};

inline std::string render_grouped(const std::vector<std::pair<std::string, sec::EvalReport>>& reports) {
  std::vector<std::string> groups;
  for (const auto& [g, _] : reports) {
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  std::string out;
  for (const auto& g : groups) {
    std::vector<sec::EvalReport> rows;
    for (const auto& [gg, r] : reports) {
      if (gg == g) rows.push_back(r);
    }
    if (!out.empty()) out += '\n';
    out += "[" + g + "]\n" + sec::render_table(rows);
  }
  return out;
}

/// Evaluates the listed conditions (all when empty), writes
/// eval/eval_report.json and eval/eval_table.txt.
inline EvalOutput cmd_eval(Workspace& ws, const std::vector<std::string>& conditions = {}) {
  const auto& cfg = ws.cfg();
  EvalOutput out;
  for (const auto& k : cfg.conditions) {
    if (!conditions.empty() && std::find(conditions.begin(), conditions.end(), k.name) == conditions.end()) continue;
    out.reports.emplace_back(k.group, evaluate_condition(ws, k));
  }
  for (const auto& name : conditions) cfg.condition(name);
  json reps = json::array();
  for (const auto& [g, r] : out.reports) {
    auto j = sec::to_json(r);
    j["group"] = g;
    reps.push_back(j);
  }
  out.report_json = ws.provenance_json();
  out.report_json["command"] = "eval";
  out.report_json["reports"] = reps;
  out.table = render_grouped(out.reports);
  write_json(ws.paths().eval() / "eval_report.json", out.report_json);
  write_text(ws.paths().eval() / "eval_table.txt", out.table);
  return out;
}

// ---------------------------------------------------------------- convert

/// File-to-file conversion of one MCSG spectrogram; a JSON sidecar next to the
/// output records the checkpoint and its provenance.
inline json cmd_convert(const fs::path& checkpoint, const fs::path& in, const fs::path& out,
                        const std::string& direction, bool tiling = true) {
  require(fs::exists(checkpoint), "FileNotFound", "missing checkpoint " + checkpoint.string());
  require(fs::exists(in), "FileNotFound", "missing input " + in.string());
  require(fs::absolute(in) != fs::absolute(out), "InvalidArgument", "output would overwrite the input");
  const auto dir = cyclegan::direction_from_name(direction);
  cyclegan::Provenance prov;
  const auto model = cyclegan::load_model<float>(checkpoint, &prov);
  const auto x = dsp::read_mcsg(in.string());
  const auto y = cyclegan::convert(model, x, dir, tiling);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  dsp::write_mcsg(out.string(), y);
  json side{{"command", "convert"},
            {"config_hash", prov.config_hash},
            {"seed", prov.seed},
            {"checkpoint", checkpoint.string()},
            {"input", in.string()},
            {"direction", dir == cyclegan::Direction::kAtoB ? "A2B" : "B2A"},
            {"from_device", dir == cyclegan::Direction::kAtoB ? model.device_a : model.device_b},
            {"to_device", dir == cyclegan::Direction::kAtoB ? model.device_b : model.device_a},
            {"n_mels", y.n_mels},
            {"n_frames", y.n_frames}};
  write_json(fs::path(out.string() + ".json"), side);
  return side;
}

// ---------------------------------------------------------------- analyze

inline void write_columns(const fs::path& path, const std::vector<std::string>& header,
                          const std::vector<std::vector<double>>& cols) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  require(static_cast<bool>(os), "IoError", "cannot write " + path.string());
  os << join(header, ",") << '\n';
  char buf[32];
  for (std::size_t r = 0; r < cols.front().size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%s%.6g", c ? "," : "", cols[c][r]);
      os << buf;
    }
    os << '\n';
  }
}

/// Corpus mode: per-device mel difference spectra (train_mc subset) and Welch
/// difference spectra of freshly rendered events, each against the analytic
/// device difference.
inline json cmd_analyze_corpus(Workspace& ws) {
  const auto& cfg = ws.cfg();
  const auto& corpus = ws.subset("train_mc");
  const dsp::FeatureConfig fc;
  const auto fb = dsp::mel_filterbank(fc.sample_rate, fc.n_fft, fc.n_mels, fc.fmin, fc.effective_fmax());
  std::size_t src = 0;
  for (std::size_t i = 0; i < cfg.devices.size(); ++i) {
    if (cfg.devices[i].name == cfg.source_device) src = i;
  }
  const auto specs_of = [&](const std::string& d) {
    std::vector<dsp::Spectrogram> out;
    for (const auto* e : corpus.device_entries(d)) out.push_back(e->spectrogram);
    return out;
  };
  const auto source_specs = specs_of(cfg.source_device);
  std::vector<std::string> header{"mel_bin", "center_hz"};
  std::vector<std::vector<double>> cols(2);
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    cols[0].push_back(static_cast<double>(m));
    cols[1].push_back(fb.centers_hz[m]);
  }
  json summary = ws.provenance_json();
  summary["command"] = "analyze";
  summary["mode"] = "corpus";
  json mel_mae = json::object();
  for (std::size_t d = 0; d < cfg.devices.size(); ++d) {
    if (d == src) continue;
    const auto& dev = cfg.devices[d];
    const auto meas = measured_difference_db(specs_of(dev.name), source_specs);
    const auto ana = sim::analytic_difference_db(dev, cfg.devices[src], fb, fc.sample_rate);
    header.push_back(dev.name + "_measured_db");
    header.push_back(dev.name + "_analytic_db");
    cols.push_back(meas);
    cols.push_back(ana);
    mel_mae[dev.name] = mean_abs_error(meas, ana);
  }
  const auto dir = ws.paths().analyze();
  write_columns(dir / "mel_difference.csv", header, cols);

  const auto classes = sim::default_event_classes(cfg.corpus.n_classes);
  const auto w = welch_differences(cfg.devices, src, classes, 2 * classes.size(), cfg.corpus.event_duration_s,
                                   derive_seed(cfg.seed, {40}), fc.sample_rate);
  std::vector<std::string> wh{"freq_hz"};
  std::vector<std::vector<double>> wc{w.freq_hz};
  std::size_t t = 0;
  for (std::size_t d = 0; d < cfg.devices.size(); ++d) {
    if (d == src) continue;
    wh.push_back(cfg.devices[d].name + "_measured_db");
    wh.push_back(cfg.devices[d].name + "_analytic_db");
    wc.push_back(w.measured_db[t]);
    wc.push_back(w.analytic_db[t]);
    ++t;
  }
  write_columns(dir / "welch_difference.csv", wh, wc);
  summary["mel_mae_db"] = mel_mae;
  summary["files"] = {"mel_difference.csv", "welch_difference.csv"};
  write_json(dir / "analyze_corpus.json", summary);
  return summary;
}

/// Checkpoint mode: the difference spectrum a trained generator induces on
/// held-out source segments (train_sec subset) next to the measured and
/// analytic device differences.
inline json cmd_analyze_checkpoint(Workspace& ws, const fs::path& checkpoint) {
  const auto& cfg = ws.cfg();
  require(fs::exists(checkpoint), "FileNotFound", "missing checkpoint " + checkpoint.string());
  cyclegan::Provenance prov;
  const auto model = cyclegan::load_model<float>(checkpoint, &prov);
  const auto profile = [&](const std::string& name) -> const sim::DeviceProfile& {
    for (const auto& d : cfg.devices) {
      if (d.name == name) return d;
    }
    throw Error("MissingDevice", "config has no device " + name);
  };
  const auto& a = profile(model.device_a);
  const auto& b = profile(model.device_b);
  const auto& corpus = ws.subset("train_sec");
  std::vector<const dsp::Spectrogram*> in;
  std::vector<dsp::Spectrogram> src, tgt;
  for (const auto* e : corpus.device_entries(a.name)) {
    in.push_back(&e->spectrogram);
    src.push_back(e->spectrogram);
  }
  for (const auto* e : corpus.device_entries(b.name)) tgt.push_back(e->spectrogram);
  const dsp::FeatureConfig fc;
  const auto fb = dsp::mel_filterbank(fc.sample_rate, fc.n_fft, fc.n_mels, fc.fmin, fc.effective_fmax());
  const auto induced = induced_difference_db(model, in, cyclegan::Direction::kAtoB);
  const auto measured = measured_difference_db(tgt, src);
  const auto analytic = sim::analytic_difference_db(b, a, fb, fc.sample_rate);
  std::vector<double> bins, centers;
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    bins.push_back(static_cast<double>(m));
    centers.push_back(fb.centers_hz[m]);
  }
  const auto dir = ws.paths().analyze();
  const auto stem = checkpoint.parent_path().parent_path().filename().string() + "_" + checkpoint.stem().string();
  write_columns(dir / (stem + "_induced.csv"), {"mel_bin", "center_hz", "induced_db", "measured_db", "analytic_db"},
                {bins, centers, induced, measured, analytic});
  json summary{{"command", "analyze"},
               {"mode", "checkpoint"},
               {"config_hash", prov.config_hash},
               {"seed", prov.seed},
               {"checkpoint", checkpoint.string()},
               {"device_a", a.name},
               {"device_b", b.name},
               {"segments", in.size()},
               {"mae_vs_analytic_db", mean_abs_error(induced, analytic)},
               {"mae_vs_measured_db", mean_abs_error(induced, measured)}};
  write_json(dir / (stem + "_induced.json"), summary);
  return summary;
}

// ---------------------------------------------------------------- gradcheck

inline json cmd_gradcheck(const fs::path& out_dir, std::uint64_t seed, std::size_t n_cases = 50) {
  const auto report = run_grad_suite(n_cases, seed);
  auto j = to_json(report);
  j["command"] = "gradcheck";
  j["seed"] = seed;
  if (!out_dir.empty()) write_json(out_dir / "gradcheck_report.json", j);
  require(report.passed(), "GradCheckFailed",
          "gradient check failed: max relative error " + std::to_string(report.max_rel_error));
  return j;
}

}  // namespace micshift::pipeline
