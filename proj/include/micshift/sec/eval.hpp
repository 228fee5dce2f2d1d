#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "micshift/core/parallel.hpp"
#include "micshift/sec/metrics.hpp"
#include "micshift/sec/train.hpp"
#include "micshift/sim/corpus.hpp"

namespace micshift::sec {

struct DeviceScore {
  std::string device;
  double f1 = 0.0;
  std::size_t n_segments = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
};

/// One condition evaluated on every device of the validation corpus.
struct EvalReport {
  std::string condition;
  std::string source_device;
  std::vector<DeviceScore> devices;  // corpus device order; source included
  double overall = 0.0;              // mean over targets (source excluded)
  double ci95 = 0.0;                 // Student-t half-width over the target scores

  const DeviceScore& device(const std::string& name) const {
    for (const auto& d : devices) {
      if (d.device == name) return d;
    }
    throw Error("MissingDevice", "report has no device " + name);
  }
};

inline void summarize(EvalReport& r) {
  std::vector<double> targets;
  for (const auto& d : r.devices) {
    if (d.device != r.source_device) targets.push_back(d.f1);
  }
  const auto ci = targets.empty() ? MeanCi{} : mean_ci95(targets);
  r.overall = ci.mean;
  r.ci95 = ci.half_width;
}

/// Weighted F1 of one model on each listed device's validation segments.
/// Segments are visited in segment-id order, so scores do not depend on
/// corpus entry order.
inline std::vector<DeviceScore> evaluate_devices(SecModel& model, const sim::Corpus& val,
                                                 const std::vector<std::string>& devices) {
  require(val.counterpart_complete(), "IncompleteCounterparts", "validation corpus is not counterpart-complete");
  for (const auto& d : devices) {
    require(std::find(val.devices.begin(), val.devices.end(), d) != val.devices.end(), "MissingDevice",
            "validation corpus has no device " + d);
  }
  std::vector<DeviceScore> out(devices.size());
  parallel_for(devices.size(), [&](std::size_t i) {
    const auto entries = val.device_entries(devices[i]);
    std::vector<const dsp::Spectrogram*> specs;
    std::vector<int> labels;
    for (const auto* e : entries) {
      specs.push_back(&e->spectrogram);
      labels.push_back(e->class_id);
    }
    require(!specs.empty(), "EmptyInput", "no validation segments for " + devices[i]);
    const auto pred = predict(model, specs);
    auto& d = out[i];
    d.device = devices[i];
    d.f1 = weighted_f1(pred, labels);
    d.n_segments = specs.size();
    d.confusion = confusion_matrix(pred, labels, model.cfg.n_classes);
  });
  return out;
}

/// One condition on every listed device; overall and CI over the targets.
inline EvalReport evaluate_matrix(SecModel& model, const sim::Corpus& val, const std::vector<std::string>& devices,
                                  const std::string& source_device, const std::string& condition) {
  require(std::find(devices.begin(), devices.end(), source_device) != devices.end(), "MissingDevice",
          "source device " + source_device + " is not among the evaluated devices");
  EvalReport r;
  r.condition = condition;
  r.source_device = source_device;
  r.devices = evaluate_devices(model, val, devices);
  summarize(r);
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json devs = nlohmann::json::array();
  for (const auto& d : r.devices) {
    devs.push_back({{"device", d.device}, {"f1", d.f1}, {"n_segments", d.n_segments}, {"confusion", d.confusion}});
  }
  return {{"condition", r.condition}, {"source_device", r.source_device}, {"devices", devs},
          {"overall_minus_source", r.overall}, {"ci95", r.ci95}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.condition = j.at("condition").get<std::string>();
    r.source_device = j.at("source_device").get<std::string>();
    for (const auto& d : j.at("devices")) {
      DeviceScore s;
      s.device = d.at("device").get<std::string>();
      s.f1 = d.at("f1").get<double>();
      s.n_segments = d.at("n_segments").get<std::size_t>();
      s.confusion = d.at("confusion").get<std::vector<std::vector<std::size_t>>>();
      r.devices.push_back(std::move(s));
    }
    r.overall = j.at("overall_minus_source").get<double>();
    r.ci95 = j.at("ci95").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("SchemaError", std::string("eval report: ") + e.what());
  }
  return r;
}

/// Text table: rows = conditions, columns = every device seen (in order of
/// first appearance) then Overall(-S). Devices a condition was not scored
/// on print as "-".
inline std::string render_table(const std::vector<EvalReport>& reports) {
  if (reports.empty()) return "";
  std::vector<std::string> columns;
  for (const auto& r : reports) {
    for (const auto& d : r.devices) {
      if (std::find(columns.begin(), columns.end(), d.device) == columns.end()) columns.push_back(d.device);
    }
  }
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-24s", "Condition");
  out += buf;
  for (const auto& c : columns) {
    std::snprintf(buf, sizeof buf, " %12.12s", c.c_str());
    out += buf;
  }
  out += "   Overall(-S)\n";
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-24.24s", r.condition.c_str());
    out += buf;
    for (const auto& c : columns) {
      const auto it = std::find_if(r.devices.begin(), r.devices.end(), [&](const DeviceScore& d) { return d.device == c; });
      if (it == r.devices.end()) {
        std::snprintf(buf, sizeof buf, " %12s", "-");
      } else {
        std::snprintf(buf, sizeof buf, " %12.3f", it->f1);
      }
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "   %.3f ± %.3f\n", r.overall, r.ci95);
    out += buf;
  }
  return out;
}

/// One CSV row per segment: segment id, class, device, embedding values.
inline void write_embeddings_csv(const std::filesystem::path& path, const std::vector<const sim::CorpusEntry*>& entries,
                                 const std::vector<std::vector<float>>& rows) {
  require(entries.size() == rows.size(), "ShapeMismatch", "one embedding row per segment expected");
  std::ofstream os(path);
  require(static_cast<bool>(os), "IoError", "cannot write " + path.string());
  const std::size_t d = rows.empty() ? 0 : rows.front().size();
  os << "segment_id,class_id,device";
  for (std::size_t i = 0; i < d; ++i) os << ",e" << i;
  os << '\n';
  char buf[32];
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << entries[r]->segment_id << ',' << entries[r]->class_id << ',' << entries[r]->device;
    for (float v : rows[r]) {
      std::snprintf(buf, sizeof buf, ",%.7g", static_cast<double>(v));
      os << buf;
    }
    os << '\n';
  }
}

}  // namespace micshift::sec
