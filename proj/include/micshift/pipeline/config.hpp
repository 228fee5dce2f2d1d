#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "micshift/augment/chain.hpp"
#include "micshift/core/binary_io.hpp"
#include "micshift/cyclegan/search.hpp"
#include "micshift/cyclegan/train.hpp"
#include "micshift/sec/train.hpp"
#include "micshift/sim/corpus.hpp"

namespace micshift::pipeline {

using nlohmann::json;

struct CorpusParams {
  int n_classes = 8;
  std::size_t n_events = 320;
  double event_duration_s = 1.5;
  sim::SplitSpec split;
  double sparse_threshold = 0.10;
  double dense_threshold = 0.50;
  bool keep_waveforms = true;  // source-device waveforms, for waveform augmentations
};

struct McSearchParams {
  std::size_t n_iter = 0;  // 0: no search, use the configured lr / interval
  cyclegan::SearchStrategy strategy = cyclegan::SearchStrategy::kQuantileSplit;
  std::size_t epochs = 2;  // shortened training per proposal
};

struct McParams {
  cyclegan::McTrainConfig train;
  std::vector<std::size_t> snapshots;  // epochs whose generators are kept for conversion
  std::vector<std::string> pairs;      // target devices paired with the source; empty = all targets
  McSearchParams search;
  std::size_t max_segments = 0;  // per device; 0 = all train_mc segments
};

struct SecParams {
  sec::SecTrainConfig train;
  sec::ClassifierCfg classifier;
};

enum class Scope { kShared, kPerDevice };

/// One row of the result table. `kShared`: one model trained on
/// `train_devices`, scored on `eval_devices`. `kPerDevice`: one model per
/// device d, scored on d only — trained on d itself (no mic_convert; the
/// Real row) or on the source converted towards d (mic_convert adapt).
struct Condition {
  std::string name;
  std::string group = "main";
  std::vector<augment::AugmentSpec> augment;
  std::vector<std::string> train_devices;  // empty = source device
  std::vector<std::string> eval_devices;   // empty = every device
  std::vector<std::string> mc_targets;     // empty = every paired target (gen) / the scope device (adapt)
  std::size_t mc_epochs = 0;               // generator snapshot used by mic_convert
  Scope scope = Scope::kShared;

  bool uses_mc() const {
    for (const auto& s : augment) {
      if (s.kind == augment::AugmentKind::kMicConvert) return true;
    }
    return false;
  }
  const augment::AugmentSpec* mc_spec() const {
    for (const auto& s : augment) {
      if (s.kind == augment::AugmentKind::kMicConvert) return &s;
    }
    return nullptr;
  }
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path work_dir = "run";
  std::vector<sim::DeviceProfile> devices = sim::default_device_suite();
  std::string source_device = "S_flat";
  CorpusParams corpus;
  McParams mc;
  SecParams sec;
  std::vector<Condition> conditions;

  std::vector<std::string> device_names() const {
    std::vector<std::string> out;
    for (const auto& d : devices) out.push_back(d.name);
    return out;
  }
  std::vector<std::string> target_devices() const {
    std::vector<std::string> out;
    for (const auto& d : devices) {
      if (d.name != source_device) out.push_back(d.name);
    }
    return out;
  }
  std::vector<std::string> mc_pairs() const { return mc.pairs.empty() ? target_devices() : mc.pairs; }
  const Condition& condition(const std::string& name) const {
    for (const auto& c : conditions) {
      if (c.name == name) return c;
    }
    throw Error("UnknownCondition", "config has no condition '" + name + "'");
  }
  bool has_device(const std::string& name) const {
    for (const auto& d : devices) {
      if (d.name == name) return true;
    }
    return false;
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require(j.is_object(), "SchemaError", where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    require(ok, "SchemaError", "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst) {
  if (j.contains(key)) j.at(key).get_to(dst);
}

inline const char* strategy_name(cyclegan::SearchStrategy s) {
  return s == cyclegan::SearchStrategy::kRandom ? "random" : "quantile_split";
}

inline const char* scope_name(Scope s) { return s == Scope::kShared ? "shared" : "per_device"; }

inline Scope scope_from_name(const std::string& s) {
  if (s == "shared") return Scope::kShared;
  if (s == "per_device") return Scope::kPerDevice;
  throw Error("SchemaError", "scope must be shared or per_device, got '" + s + "'");
}

inline void parse_corpus(const json& j, CorpusParams& c) {
  check_keys(j, {"n_classes", "n_events", "event_duration_s", "split", "sparse_threshold", "dense_threshold",
                 "keep_waveforms"},
             "corpus");
  read(j, "n_classes", c.n_classes);
  read(j, "n_events", c.n_events);
  read(j, "event_duration_s", c.event_duration_s);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    require(s.is_array() && s.size() == 3, "SchemaError", "corpus.split must be [train_mc, train_sec, val]");
    c.split = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
  }
  read(j, "sparse_threshold", c.sparse_threshold);
  read(j, "dense_threshold", c.dense_threshold);
  read(j, "keep_waveforms", c.keep_waveforms);
}

inline void parse_mc(const json& j, McParams& m) {
  check_keys(j, {"lr_init", "halve_interval", "beta1", "beta2", "batch", "lambda_cycle", "epochs", "buffer_capacity",
                 "patch_frames", "generator", "discriminator", "snapshots", "pairs", "search", "max_segments"},
             "mc");
  auto& t = m.train;
  read(j, "lr_init", t.lr_init);
  read(j, "halve_interval", t.halve_interval);
  read(j, "beta1", t.beta1);
  read(j, "beta2", t.beta2);
  read(j, "batch", t.batch);
  read(j, "lambda_cycle", t.lambda_cycle);
  read(j, "epochs", t.epochs);
  read(j, "buffer_capacity", t.buffer_capacity);
  read(j, "patch_frames", t.patch_frames);
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    check_keys(g, {"base_channels", "n_resblocks"}, "mc.generator");
    read(g, "base_channels", t.gen.base_channels);
    read(g, "n_resblocks", t.gen.n_resblocks);
  }
  if (j.contains("discriminator")) {
    const auto& d = j.at("discriminator");
    check_keys(d, {"base_channels", "strides"}, "mc.discriminator");
    read(d, "base_channels", t.disc.base_channels);
    read(d, "strides", t.disc.strides);
  }
  read(j, "snapshots", m.snapshots);
  read(j, "pairs", m.pairs);
  if (j.contains("search")) {
    const auto& s = j.at("search");
    check_keys(s, {"n_iter", "strategy", "epochs"}, "mc.search");
    read(s, "n_iter", m.search.n_iter);
    if (s.contains("strategy")) m.search.strategy = cyclegan::search_strategy_from_name(s["strategy"].get<std::string>());
    read(s, "epochs", m.search.epochs);
  }
  read(j, "max_segments", m.max_segments);
}

inline void parse_sec(const json& j, SecParams& s) {
  check_keys(j, {"lr", "beta1", "beta2", "weight_decay", "lr_step_epochs", "lr_gamma", "epochs", "batch", "classifier"},
             "sec");
  auto& t = s.train;
  read(j, "lr", t.lr);
  read(j, "beta1", t.beta1);
  read(j, "beta2", t.beta2);
  read(j, "weight_decay", t.weight_decay);
  read(j, "lr_step_epochs", t.lr_step_epochs);
  read(j, "lr_gamma", t.lr_gamma);
  read(j, "epochs", t.epochs);
  read(j, "batch", t.batch);
  if (j.contains("classifier")) {
    const auto& c = j.at("classifier");
    check_keys(c, {"base_channels", "n_stages", "blocks_per_stage"}, "sec.classifier");
    read(c, "base_channels", s.classifier.base_channels);
    read(c, "n_stages", s.classifier.n_stages);
    read(c, "blocks_per_stage", s.classifier.blocks_per_stage);
  }
}

inline Condition parse_condition(const json& j) {
  check_keys(j, {"name", "group", "augment", "train_devices", "eval_devices", "mc_targets", "mc_epochs", "scope"},
             "condition");
  Condition c;
  require(j.contains("name"), "SchemaError", "condition needs a name");
  c.name = j.at("name").get<std::string>();
  require(!c.name.empty(), "SchemaError", "condition name must be non-empty");
  read(j, "group", c.group);
  if (j.contains("augment")) {
    require(j["augment"].is_array(), "SchemaError", "condition.augment must be an array");
    for (const auto& a : j["augment"]) c.augment.push_back(augment::spec_from_json(a));
  }
  read(j, "train_devices", c.train_devices);
  read(j, "eval_devices", c.eval_devices);
  read(j, "mc_targets", c.mc_targets);
  read(j, "mc_epochs", c.mc_epochs);
  if (j.contains("scope")) c.scope = scope_from_name(j["scope"].get<std::string>());
  return c;
}

}  // namespace detail

/// Cross-field checks; everything is validated before any work starts.
inline void validate(const RunConfig& c) {
  require(!c.devices.empty(), "InvalidConfig", "device suite is empty");
  for (std::size_t i = 0; i < c.devices.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      require(c.devices[i].name != c.devices[k].name, "InvalidConfig", "duplicate device " + c.devices[i].name);
    }
  }
  require(c.has_device(c.source_device), "InvalidConfig", "source device " + c.source_device + " is not in the suite");
  require(c.corpus.n_classes >= 2 && c.corpus.n_classes <= 8, "InvalidConfig", "corpus.n_classes must lie in [2, 8]");
  require(c.corpus.n_events >= 10 * static_cast<std::size_t>(c.corpus.n_classes), "InvalidConfig",
          "corpus.n_events must be >= 10 * n_classes");
  c.mc.train.validate();
  for (auto s : c.mc.snapshots) {
    require(s >= 1 && s <= c.mc.train.epochs, "InvalidConfig", "mc.snapshots must lie in [1, mc.epochs]");
  }
  for (const auto& p : c.mc.pairs) {
    require(c.has_device(p) && p != c.source_device, "InvalidConfig", "mc.pairs entry " + p + " is not a target");
  }
  c.sec.train.validate();
  require(c.sec.classifier.n_classes == static_cast<std::size_t>(c.corpus.n_classes), "InvalidConfig",
          "classifier classes differ from corpus classes");
  c.sec.classifier.validate();
  const auto pairs = c.mc_pairs();
  for (std::size_t i = 0; i < c.conditions.size(); ++i) {
    const auto& cond = c.conditions[i];
    for (std::size_t k = 0; k < i; ++k) {
      require(c.conditions[k].name != cond.name, "InvalidConfig", "duplicate condition " + cond.name);
    }
    const std::string where = "condition '" + cond.name + "': ";
    augment::AugmentChain probe;
    try {
      augment::ConverterBank dummy;
      probe = augment::AugmentChain(cond.augment, {}, &dummy);
    } catch (const Error& e) {
      throw Error("InvalidConfig", where + e.what());
    }
    for (const auto& list : {cond.train_devices, cond.eval_devices, cond.mc_targets}) {
      for (const auto& d : list) require(c.has_device(d), "InvalidConfig", where + "unknown device " + d);
    }
    if (cond.uses_mc()) {
      const bool listed = std::find(c.mc.snapshots.begin(), c.mc.snapshots.end(), cond.mc_epochs) != c.mc.snapshots.end();
      require(cond.mc_epochs == c.mc.train.epochs || listed, "InvalidConfig",
              where + "mc_epochs must be mc.epochs or one of mc.snapshots");
      const auto* spec = cond.mc_spec();
      if (spec->mode == augment::McMode::kAdapt) {
        require(cond.scope == Scope::kPerDevice || cond.mc_targets.size() == 1, "InvalidConfig",
                where + "adapt mode needs one mc target (or per_device scope)");
      }
      for (const auto& t : cond.mc_targets) {
        const auto& train = cond.train_devices.empty() ? std::vector<std::string>{c.source_device} : cond.train_devices;
        for (const auto& u : train) {
          const bool fwd = u == c.source_device && std::find(pairs.begin(), pairs.end(), t) != pairs.end();
          const bool back = t == c.source_device && std::find(pairs.begin(), pairs.end(), u) != pairs.end();
          require(fwd || back, "InvalidConfig", where + "no conversion model for " + u + " -> " + t);
        }
      }
    }
    if (cond.scope == Scope::kPerDevice) {
      require(cond.train_devices.empty() && cond.eval_devices.empty() && cond.mc_targets.empty(), "InvalidConfig",
              where + "per_device scope derives train/eval/target devices itself");
    }
  }
}

inline json to_json(const RunConfig& c) {
  json devices = json::array();
  for (const auto& d : c.devices) devices.push_back(sim::to_json(d));
  const auto& m = c.mc.train;
  json mc{{"lr_init", m.lr_init},
          {"halve_interval", m.halve_interval},
          {"beta1", m.beta1},
          {"beta2", m.beta2},
          {"batch", m.batch},
          {"lambda_cycle", m.lambda_cycle},
          {"epochs", m.epochs},
          {"buffer_capacity", m.buffer_capacity},
          {"patch_frames", m.patch_frames},
          {"generator", {{"base_channels", m.gen.base_channels}, {"n_resblocks", m.gen.n_resblocks}}},
          {"discriminator", {{"base_channels", m.disc.base_channels}, {"strides", m.disc.strides}}},
          {"snapshots", c.mc.snapshots},
          {"pairs", c.mc.pairs},
          {"search",
           {{"n_iter", c.mc.search.n_iter},
            {"strategy", detail::strategy_name(c.mc.search.strategy)},
            {"epochs", c.mc.search.epochs}}},
          {"max_segments", c.mc.max_segments}};
  const auto& s = c.sec.train;
  json sec{{"lr", s.lr},
           {"beta1", s.beta1},
           {"beta2", s.beta2},
           {"weight_decay", s.weight_decay},
           {"lr_step_epochs", s.lr_step_epochs},
           {"lr_gamma", s.lr_gamma},
           {"epochs", s.epochs},
           {"batch", s.batch},
           {"classifier",
            {{"base_channels", c.sec.classifier.base_channels},
             {"n_stages", c.sec.classifier.n_stages},
             {"blocks_per_stage", c.sec.classifier.blocks_per_stage}}}};
  json conds = json::array();
  for (const auto& k : c.conditions) {
    json a = json::array();
    for (const auto& spec : k.augment) a.push_back(augment::to_json(spec));
    conds.push_back({{"name", k.name},
                     {"group", k.group},
                     {"augment", a},
                     {"train_devices", k.train_devices},
                     {"eval_devices", k.eval_devices},
                     {"mc_targets", k.mc_targets},
                     {"mc_epochs", k.mc_epochs},
                     {"scope", detail::scope_name(k.scope)}});
  }
  const auto& cp = c.corpus;
  return {{"seed", c.seed},
          {"paths", {{"work_dir", c.work_dir.string()}}},
          {"devices", devices},
          {"source_device", c.source_device},
          {"corpus",
           {{"n_classes", cp.n_classes},
            {"n_events", cp.n_events},
            {"event_duration_s", cp.event_duration_s},
            {"split", {cp.split.train_mc, cp.split.train_sec, cp.split.val}},
            {"sparse_threshold", cp.sparse_threshold},
            {"dense_threshold", cp.dense_threshold},
            {"keep_waveforms", cp.keep_waveforms}}},
          {"mc", mc},
          {"sec", sec},
          {"conditions", conds}};
}

/// Parses and validates a run config; unknown keys anywhere are rejected.
inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  try {
    detail::check_keys(j, {"seed", "paths", "devices", "source_device", "corpus", "mc", "sec", "conditions"}, "config");
    detail::read(j, "seed", c.seed);
    if (j.contains("paths")) {
      detail::check_keys(j["paths"], {"work_dir"}, "paths");
      if (j["paths"].contains("work_dir")) c.work_dir = j["paths"]["work_dir"].get<std::string>();
    }
    if (j.contains("devices")) {
      const auto& d = j["devices"];
      if (d.is_string()) {
        require(d.get<std::string>() == "default", "SchemaError", "devices must be \"default\" or a list of profiles");
      } else {
        require(d.is_array(), "SchemaError", "devices must be \"default\" or a list of profiles");
        c.devices.clear();
        for (const auto& p : d) c.devices.push_back(sim::device_from_json(p));
      }
    }
    detail::read(j, "source_device", c.source_device);
    if (j.contains("corpus")) detail::parse_corpus(j["corpus"], c.corpus);
    if (j.contains("mc")) detail::parse_mc(j["mc"], c.mc);
    if (j.contains("sec")) detail::parse_sec(j["sec"], c.sec);
    c.sec.classifier.n_classes = static_cast<std::size_t>(c.corpus.n_classes);
    if (j.contains("conditions")) {
      require(j["conditions"].is_array(), "SchemaError", "conditions must be an array");
      for (const auto& k : j["conditions"]) c.conditions.push_back(detail::parse_condition(k));
    }
  } catch (const json::exception& e) {
    throw Error("SchemaError", std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "FileNotFound", "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw Error("SchemaError", "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

/// Hash of the normalized config (defaults filled in, keys sorted). The work
/// directory is excluded so relocating a run keeps its identity.
inline std::string config_hash(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("paths");
  return io::hex64(io::fnv1a(j.dump()));
}

}  // namespace micshift::pipeline
