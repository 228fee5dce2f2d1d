#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "micshift/core/error.hpp"
#include "micshift/core/parallel.hpp"
#include "micshift/core/rng.hpp"
#include "micshift/dsp/features.hpp"
#include "micshift/dsp/spectrogram_io.hpp"
#include "micshift/dsp/wav_io.hpp"
#include "micshift/sim/device.hpp"
#include "micshift/sim/events.hpp"

namespace micshift::sim {

struct CorpusEntry {
  std::string segment_id;
  int class_id = 0;
  std::string device;
  dsp::Spectrogram spectrogram;
  double activity = 1.0;             // fraction of active samples in the window
  std::vector<float> waveform;       // kept only for devices listed in CorpusOptions
};

/// Segments rendered on every device. `index` maps segment_id -> device -> entry.
struct Corpus {
  std::vector<std::string> devices;
  std::vector<CorpusEntry> entries;
  std::map<std::string, std::map<std::string, std::size_t>> index;

  void rebuild_index() {
    index.clear();
    for (std::size_t i = 0; i < entries.size(); ++i) index[entries[i].segment_id][entries[i].device] = i;
  }

  std::vector<std::string> segment_ids() const {
    std::vector<std::string> ids;
    ids.reserve(index.size());
    for (const auto& [id, _] : index) ids.push_back(id);
    return ids;
  }

  /// Entries recorded by one device, in segment_id order.
  std::vector<const CorpusEntry*> device_entries(const std::string& device) const {
    std::vector<const CorpusEntry*> out;
    for (const auto& [id, by_dev] : index) {
      auto it = by_dev.find(device);
      if (it != by_dev.end()) out.push_back(&entries[it->second]);
    }
    return out;
  }

  const CorpusEntry& counterpart(const std::string& segment_id, const std::string& device) const {
    auto it = index.find(segment_id);
    require(it != index.end(), "MissingSegment", "unknown segment " + segment_id);
    auto jt = it->second.find(device);
    require(jt != it->second.end(), "MissingDevice", segment_id + " has no counterpart on " + device);
    return entries[jt->second];
  }

  bool counterpart_complete() const {
    for (const auto& [id, by_dev] : index) {
      if (by_dev.size() != devices.size()) return false;
    }
    return true;
  }
};

struct CorpusOptions {
  double event_duration_s = 1.5;
  double window_ms = 930.0;
  double overlap = 0.5;
  dsp::FeatureConfig features;
  SynthOptions synth;
  std::set<std::string> keep_waveforms;  // devices whose segment waveforms are retained
};

inline std::string segment_id_for(std::size_t event, std::size_t seg) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "e%05zu-s%02zu", event, seg);
  return buf;
}

/// Renders each event once, passes it through every device and segments all
/// device versions at the same offsets.
inline Corpus build_corpus(const std::vector<EventClass>& classes, const std::vector<DeviceProfile>& devices,
                           std::size_t n_events, std::uint64_t seed, const CorpusOptions& opt = {}) {
  require(classes.size() >= 2, "InvalidArgument", "need at least two classes");
  require(!devices.empty(), "InvalidArgument", "need at least one device");
  require(n_events >= 10 * classes.size(), "InvalidArgument", "n_events must be >= 10 * n_classes");
  std::vector<DeviceChain> chains;
  for (const auto& d : devices) chains.emplace_back(d, opt.features.sample_rate);
  const dsp::LogMelExtractor extract(opt.features);
  const auto geom = dsp::segment_geometry(opt.features.sample_rate, opt.window_ms, opt.overlap);

  std::vector<std::vector<CorpusEntry>> per_event(n_events);
  parallel_for(n_events, [&](std::size_t e) {
    const auto& cls = classes[e % classes.size()];
    auto opts = opt.synth;
    opts.sample_rate = opt.features.sample_rate;
    const auto ev = synth_event_with_activity(cls, opt.event_duration_s, derive_seed(seed, {1, e}), opts);
    const auto offsets = dsp::segment_offsets(ev.waveform.samples.size(), geom);
    std::vector<double> activity(offsets.size());
    for (std::size_t s = 0; s < offsets.size(); ++s) {
      std::size_t active = 0;
      for (std::size_t i = 0; i < geom.window; ++i) active += ev.activity[offsets[s] + i];
      activity[s] = static_cast<double>(active) / static_cast<double>(geom.window);
    }
    for (std::size_t d = 0; d < chains.size(); ++d) {
      const auto rec = chains[d].apply(ev.waveform, derive_seed(seed, {2, e, d}));
      for (std::size_t s = 0; s < offsets.size(); ++s) {
        dsp::Waveform seg;
        seg.sample_rate = rec.sample_rate;
        seg.samples.assign(rec.samples.begin() + static_cast<std::ptrdiff_t>(offsets[s]),
                           rec.samples.begin() + static_cast<std::ptrdiff_t>(offsets[s] + geom.window));
        CorpusEntry entry;
        entry.segment_id = segment_id_for(e, s);
        entry.class_id = cls.id;
        entry.device = devices[d].name;
        entry.spectrogram = extract(seg);
        entry.activity = activity[s];
        if (opt.keep_waveforms.count(devices[d].name)) entry.waveform.assign(seg.samples.begin(), seg.samples.end());
        per_event[e].push_back(std::move(entry));
      }
    }
  });

  Corpus corpus;
  for (const auto& d : devices) corpus.devices.push_back(d.name);
  for (auto& list : per_event) {
    for (auto& entry : list) corpus.entries.push_back(std::move(entry));
  }
  corpus.rebuild_index();
  return corpus;
}

struct ActivityThresholds {
  std::set<int> sparse_classes;
  double sparse = 0.10;
  double dense = 0.50;
};

inline bool keep_segment(int class_id, double activity, const ActivityThresholds& t) {
  return activity >= (t.sparse_classes.count(class_id) ? t.sparse : t.dense);
}

inline std::set<int> sparse_class_ids(const std::vector<EventClass>& classes) {
  std::set<int> out;
  for (const auto& c : classes) {
    if (c.sparse) out.insert(c.id);
  }
  return out;
}

/// Keeps a segment iff its active fraction reaches its class threshold.
inline Corpus activity_filter(const Corpus& c, const ActivityThresholds& t) {
  Corpus out;
  out.devices = c.devices;
  for (const auto& e : c.entries) {
    if (keep_segment(e.class_id, e.activity, t)) out.entries.push_back(e);
  }
  out.rebuild_index();
  return out;
}

struct SplitSpec {
  double train_mc = 0.45;
  double train_sec = 0.45;
  double val = 0.10;
};

struct CorpusSplit {
  Corpus train_mc;
  Corpus train_sec;
  Corpus val;
};

/// Per-subset segment counts for each class: floor quotas per class, then the
/// leftover units go to the subsets with the largest remaining global deficit,
/// at most one extra per (class, subset). Keeps every class within +-1 of its
/// exact share and subset totals within +-1 of theirs.
inline std::vector<std::array<std::size_t, 3>> allocate_split(const std::vector<std::size_t>& class_sizes,
                                                               const SplitSpec& spec) {
  const std::array<double, 3> frac{spec.train_mc, spec.train_sec, spec.val};
  std::size_t total = 0;
  for (auto n : class_sizes) total += n;
  std::array<std::size_t, 3> target{};
  std::size_t assigned = 0;
  for (int s = 0; s < 2; ++s) {
    target[s] = static_cast<std::size_t>(std::llround(frac[s] * static_cast<double>(total)));
    assigned += target[s];
  }
  target[2] = total - assigned;

  std::vector<std::array<std::size_t, 3>> out(class_sizes.size());
  std::array<long long, 3> deficit{};
  for (int s = 0; s < 3; ++s) deficit[s] = static_cast<long long>(target[s]);
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    for (int s = 0; s < 3; ++s) {
      out[c][s] = static_cast<std::size_t>(std::floor(frac[s] * static_cast<double>(class_sizes[c]) + 1e-9));
      deficit[s] -= static_cast<long long>(out[c][s]);
    }
  }
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    std::size_t left = class_sizes[c] - out[c][0] - out[c][1] - out[c][2];
    std::array<bool, 3> used{};
    while (left > 0) {
      int best = -1;
      for (int s = 0; s < 3; ++s) {
        if (used[s]) continue;
        if (best < 0 || deficit[s] > deficit[best]) best = s;
      }
      ++out[c][best];
      --deficit[best];
      used[best] = true;
      --left;
    }
  }
  return out;
}

/// Stratified split at segment_id level so every device version of a segment
/// lands in the same subset.
inline CorpusSplit split_corpus(const Corpus& c, const SplitSpec& spec, std::uint64_t seed) {
  require(std::abs(spec.train_mc + spec.train_sec + spec.val - 1.0) < 1e-9, "InvalidArgument",
          "split fractions must sum to 1");
  require(c.counterpart_complete(), "IncompleteCounterparts", "corpus is not counterpart-complete");
  std::map<int, std::vector<std::string>> by_class;
  for (const auto& [id, by_dev] : c.index) by_class[c.entries[by_dev.begin()->second].class_id].push_back(id);
  std::vector<std::size_t> sizes;
  for (const auto& [cls, ids] : by_class) {
    require(ids.size() >= 10, "TooSparseToStratify",
            "class " + std::to_string(cls) + " has only " + std::to_string(ids.size()) + " segments");
    sizes.push_back(ids.size());
  }
  const auto alloc = allocate_split(sizes, spec);
  std::map<std::string, int> subset_of;
  Rng rng(seed);
  std::size_t ci = 0;
  for (auto& [cls, ids] : by_class) {
    rng.shuffle(ids.begin(), ids.end());
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < alloc[ci][s]; ++k) subset_of[ids[pos++]] = s;
    }
    ++ci;
  }
  CorpusSplit out;
  Corpus* parts[3] = {&out.train_mc, &out.train_sec, &out.val};
  for (auto* p : parts) p->devices = c.devices;
  for (const auto& e : c.entries) parts[subset_of.at(e.segment_id)]->entries.push_back(e);
  for (auto* p : parts) p->rebuild_index();
  return out;
}

// ---------------------------------------------------------------------------
// On-disk layout: <dir>/manifest.jsonl plus one MCSG file per entry.

struct ManifestProvenance {
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline void write_corpus(const Corpus& c, const std::filesystem::path& dir, const std::string& subset,
                         const ManifestProvenance& prov) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "spectrograms");
  std::ofstream manifest(dir / (subset + ".jsonl"));
  require(static_cast<bool>(manifest), "IoError", "cannot write manifest in " + dir.string());
  for (const auto& e : c.entries) {
    const std::string rel = "spectrograms/" + e.segment_id + "_" + e.device + ".mcsg";
    dsp::write_mcsg((dir / rel).string(), e.spectrogram);
    nlohmann::json rec{{"segment_id", e.segment_id}, {"class_id", e.class_id}, {"device", e.device},
                       {"spectrogram_path", rel}, {"activity", e.activity}, {"subset", subset},
                       {"config_hash", prov.config_hash}, {"seed", prov.seed}};
    if (!e.waveform.empty()) {
      const std::string wav = "waveforms/" + e.segment_id + "_" + e.device + ".wav";
      fs::create_directories(dir / "waveforms");
      dsp::Waveform w{std::vector<double>(e.waveform.begin(), e.waveform.end()),
                      static_cast<int>(e.spectrogram.sample_rate)};
      dsp::write_wav((dir / wav).string(), w);
      rec["waveform_path"] = wav;
    }
    manifest << rec.dump() << '\n';
  }
}

}  // namespace micshift::sim

namespace micshift::sim {

/// Loads one subset manifest written by write_corpus().
inline Corpus read_corpus(const std::filesystem::path& dir, const std::string& subset) {
  std::ifstream manifest(dir / (subset + ".jsonl"));
  require(static_cast<bool>(manifest), "FileNotFound", "missing manifest " + (dir / (subset + ".jsonl")).string());
  Corpus c;
  std::set<std::string> devices;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    CorpusEntry e;
    e.segment_id = rec.at("segment_id").get<std::string>();
    e.class_id = rec.at("class_id").get<int>();
    e.device = rec.at("device").get<std::string>();
    e.activity = rec.value("activity", 1.0);
    e.spectrogram = dsp::read_mcsg((dir / rec.at("spectrogram_path").get<std::string>()).string());
    if (rec.contains("waveform_path")) {
      const auto w = dsp::read_wav((dir / rec["waveform_path"].get<std::string>()).string());
      e.waveform.assign(w.samples.begin(), w.samples.end());
    }
    if (devices.insert(e.device).second) c.devices.push_back(e.device);
    c.entries.push_back(std::move(e));
  }
  c.rebuild_index();
  return c;
}

}  // namespace micshift::sim
