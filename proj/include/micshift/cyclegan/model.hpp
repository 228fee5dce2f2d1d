#pragma once

#include <cmath>
#include <map>
#include <string>

#include "micshift/cyclegan/networks.hpp"
#include "micshift/dsp/features.hpp"
#include "micshift/tensor/checkpoint.hpp"
#include "micshift/tensor/optim.hpp"

namespace micshift::cyclegan {

enum class Direction { kAtoB, kBtoA };

inline Direction direction_from_name(const std::string& s) {
  if (s == "A2B" || s == "a2b" || s == "AtoB") return Direction::kAtoB;
  if (s == "B2A" || s == "b2a" || s == "BtoA") return Direction::kBtoA;
  throw Error("InvalidArgument", "direction must be A2B or B2A, got '" + s + "'");
}

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
};

/// F: A → B and G: B → A with discriminators D_A (judges domain A) and D_B,
/// their optimizers, and the scalar input standardization shared by both
/// domains (spectrogram values are fed as (x − norm_mean) / norm_std).
template <typename T>
struct CycleGanModel {
  GeneratorCfg gen_cfg;
  DiscriminatorCfg disc_cfg;
  Generator<T> F, G;
  Discriminator<T> D_A, D_B;
  tensor::AdamState<T> opt_g, opt_d;
  double norm_mean = 0.0;
  double norm_std = 1.0;
  std::string device_a, device_b;
  std::size_t patch_frames = 80;
  std::size_t epochs_trained = 0;

  CycleGanModel() = default;
  CycleGanModel(const GeneratorCfg& g, const DiscriminatorCfg& d, std::uint64_t seed) : gen_cfg(g), disc_cfg(d) {
    Rng rng(seed);
    F = Generator<T>(g, rng);
    G = Generator<T>(g, rng);
    D_A = Discriminator<T>(d, rng);
    D_B = Discriminator<T>(d, rng);
  }

  ParamList<T> generator_params() const {
    auto p = F.parameters("F");
    auto q = G.parameters("G");
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }
  ParamList<T> discriminator_params() const {
    auto p = D_A.parameters("D_A");
    auto q = D_B.parameters("D_B");
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }

  const Generator<T>& generator(Direction d) const { return d == Direction::kAtoB ? F : G; }
};

namespace detail {

inline tensor::StoredTensor meta_value(const std::string& name, double v) {
  return {name, {1}, {static_cast<float>(v)}};
}
inline tensor::StoredTensor meta_string(const std::string& key, const std::string& value) {
  return {key + "=" + value, {0}, {}};
}

struct MetaView {
  std::map<std::string, std::vector<float>> values;
  std::map<std::string, std::string> strings;

  explicit MetaView(const std::vector<tensor::StoredTensor>& meta) {
    for (const auto& t : meta) {
      if (tensor::numel(t.shape) == 0) {
        const auto eq = t.name.find('=');
        if (eq != std::string::npos) strings[t.name.substr(0, eq)] = t.name.substr(eq + 1);
      } else {
        values[t.name] = t.data;
      }
    }
  }
  double num(const std::string& k) const {
    auto it = values.find(k);
    require(it != values.end() && !it->second.empty(), "MissingParameter", "checkpoint meta lacks '" + k + "'");
    return it->second[0];
  }
  std::string str(const std::string& k) const {
    auto it = strings.find(k);
    return it == strings.end() ? std::string() : it->second;
  }
};

template <typename T>
void store_adam(std::vector<tensor::StoredTensor>& out, const std::string& tag, const ParamList<T>& params,
                const tensor::AdamState<T>& st) {
  if (st.m.empty()) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({tag + ".m." + params[i].name, params[i].tensor.shape(), {st.m[i].begin(), st.m[i].end()}});
    out.push_back({tag + ".v." + params[i].name, params[i].tensor.shape(), {st.v[i].begin(), st.v[i].end()}});
  }
}

template <typename T>
void restore_adam(const std::vector<tensor::StoredTensor>& stored, const std::string& tag, const ParamList<T>& params,
                  tensor::AdamState<T>& st) {
  std::map<std::string, const tensor::StoredTensor*> by_name;
  for (const auto& s : stored) by_name[s.name] = &s;
  if (by_name.find(tag + ".m." + params.front().name) == by_name.end()) return;
  st.m.assign(params.size(), {});
  st.v.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (auto [key, dst] : {std::pair{".m.", &st.m[i]}, std::pair{".v.", &st.v[i]}}) {
      auto it = by_name.find(tag + key + params[i].name);
      require(it != by_name.end(), "MissingParameter", "optimizer state lacks " + tag + key + params[i].name);
      dst->assign(it->second->data.begin(), it->second->data.end());
    }
  }
}

}  // namespace detail

template <typename T>
tensor::Checkpoint to_checkpoint(const CycleGanModel<T>& m, const Provenance& prov) {
  tensor::Checkpoint ck;
  ck.sections.emplace_back("F", tensor::store(m.F.parameters("F")));
  ck.sections.emplace_back("G", tensor::store(m.G.parameters("G")));
  ck.sections.emplace_back("D_A", tensor::store(m.D_A.parameters("D_A")));
  ck.sections.emplace_back("D_B", tensor::store(m.D_B.parameters("D_B")));
  std::vector<tensor::StoredTensor> opt;
  detail::store_adam(opt, "opt_g", m.generator_params(), m.opt_g);
  detail::store_adam(opt, "opt_d", m.discriminator_params(), m.opt_d);
  opt.push_back(detail::meta_value("opt_g.t", static_cast<double>(m.opt_g.t)));
  opt.push_back(detail::meta_value("opt_g.lr", m.opt_g.lr));
  opt.push_back(detail::meta_value("opt_d.t", static_cast<double>(m.opt_d.t)));
  opt.push_back(detail::meta_value("opt_d.lr", m.opt_d.lr));
  ck.sections.emplace_back("opt", std::move(opt));

  std::vector<tensor::StoredTensor> meta;
  meta.push_back(detail::meta_value("gen.base_channels", static_cast<double>(m.gen_cfg.base_channels)));
  meta.push_back(detail::meta_value("gen.n_resblocks", static_cast<double>(m.gen_cfg.n_resblocks)));
  meta.push_back(detail::meta_value("gen.n_sampling_layers", static_cast<double>(m.gen_cfg.n_sampling_layers)));
  meta.push_back(detail::meta_value("disc.base_channels", static_cast<double>(m.disc_cfg.base_channels)));
  meta.push_back(detail::meta_value("disc.kernel", static_cast<double>(m.disc_cfg.kernel)));
  meta.push_back(detail::meta_value("disc.instance_norm", m.disc_cfg.instance_norm ? 1.0 : 0.0));
  tensor::StoredTensor strides{"disc.strides", {m.disc_cfg.strides.size()}, {}};
  for (auto s : m.disc_cfg.strides) strides.data.push_back(static_cast<float>(s));
  meta.push_back(std::move(strides));
  meta.push_back(detail::meta_value("norm_mean", m.norm_mean));
  meta.push_back(detail::meta_value("norm_std", m.norm_std));
  meta.push_back(detail::meta_value("patch_frames", static_cast<double>(m.patch_frames)));
  meta.push_back(detail::meta_value("epochs_trained", static_cast<double>(m.epochs_trained)));
  meta.push_back(detail::meta_string("device_a", m.device_a));
  meta.push_back(detail::meta_string("device_b", m.device_b));
  meta.push_back(detail::meta_string("config_hash", prov.config_hash));
  meta.push_back(detail::meta_string("seed", std::to_string(prov.seed)));
  ck.sections.emplace_back("meta", std::move(meta));
  return ck;
}

template <typename T>
CycleGanModel<T> from_checkpoint(const tensor::Checkpoint& ck, Provenance* prov = nullptr) {
  detail::MetaView meta(ck.section("meta"));
  GeneratorCfg g;
  g.base_channels = static_cast<std::size_t>(meta.num("gen.base_channels"));
  g.n_resblocks = static_cast<std::size_t>(meta.num("gen.n_resblocks"));
  g.n_sampling_layers = static_cast<std::size_t>(meta.num("gen.n_sampling_layers"));
  DiscriminatorCfg d;
  d.base_channels = static_cast<std::size_t>(meta.num("disc.base_channels"));
  d.kernel = static_cast<std::size_t>(meta.num("disc.kernel"));
  d.instance_norm = meta.num("disc.instance_norm") != 0.0;
  d.strides.clear();
  for (float s : meta.values.at("disc.strides")) d.strides.push_back(static_cast<std::size_t>(s));

  CycleGanModel<T> m(g, d, 0);
  auto fp = m.F.parameters("F");
  auto gp = m.G.parameters("G");
  auto dap = m.D_A.parameters("D_A");
  auto dbp = m.D_B.parameters("D_B");
  tensor::restore(ck.section("F"), fp);
  tensor::restore(ck.section("G"), gp);
  tensor::restore(ck.section("D_A"), dap);
  tensor::restore(ck.section("D_B"), dbp);
  if (ck.has_section("opt")) {
    const auto& opt = ck.section("opt");
    detail::restore_adam(opt, "opt_g", m.generator_params(), m.opt_g);
    detail::restore_adam(opt, "opt_d", m.discriminator_params(), m.opt_d);
    detail::MetaView om(opt);
    m.opt_g.t = static_cast<std::uint64_t>(om.num("opt_g.t"));
    m.opt_g.lr = om.num("opt_g.lr");
    m.opt_d.t = static_cast<std::uint64_t>(om.num("opt_d.t"));
    m.opt_d.lr = om.num("opt_d.lr");
  }
  m.norm_mean = meta.num("norm_mean");
  m.norm_std = meta.num("norm_std");
  m.patch_frames = static_cast<std::size_t>(meta.num("patch_frames"));
  m.epochs_trained = static_cast<std::size_t>(meta.num("epochs_trained"));
  m.device_a = meta.str("device_a");
  m.device_b = meta.str("device_b");
  if (prov) {
    prov->config_hash = meta.str("config_hash");
    const auto s = meta.str("seed");
    prov->seed = s.empty() ? 0 : std::stoull(s);
  }
  return m;
}

template <typename T>
void save_model(const std::filesystem::path& path, const CycleGanModel<T>& m, const Provenance& prov) {
  tensor::save_checkpoint(path, to_checkpoint(m, prov));
}

template <typename T>
CycleGanModel<T> load_model(const std::filesystem::path& path, Provenance* prov = nullptr) {
  return from_checkpoint<T>(tensor::load_checkpoint(path), prov);
}

/// Stacks the first `frames` columns of each spectrogram into a standardized
/// [N, 1, n_mels, frames] batch.
template <typename T>
DiffTensor<T> to_batch(const std::vector<const dsp::Spectrogram*>& specs, std::size_t frames, double mean,
                       double stddev, std::size_t offset = 0) {
  require(!specs.empty(), "EmptyInput", "empty batch");
  const std::size_t h = specs.front()->n_mels;
  DiffTensor<T> x(tensor::Shape{specs.size(), 1, h, frames});
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& sp = *specs[s];
    require(sp.n_mels == h && sp.n_frames >= offset + frames, "ShapeMismatch",
            "spectrogram " + std::to_string(sp.n_mels) + "x" + std::to_string(sp.n_frames) + " cannot supply a " +
                std::to_string(h) + "x" + std::to_string(frames) + " patch");
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < frames; ++j) {
        x.storage()[(s * h + i) * frames + j] = static_cast<T>((sp.at(i, offset + j) - mean) / stddev);
      }
    }
  }
  return x;
}

/// Tile offsets covering [0, width) with patches of `patch`: stride-`patch`
/// windows plus a final window flush with the right edge.
inline std::vector<std::size_t> tile_offsets(std::size_t width, std::size_t patch) {
  require(width >= patch, "ShapeMismatch",
          "input width " + std::to_string(width) + " is shorter than the patch width " + std::to_string(patch));
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + patch <= width; o += patch) out.push_back(o);
  if (out.back() + patch < width) out.push_back(width - patch);
  return out;
}

/// Applies a trained generator. Inputs wider than the patch are tiled along
/// time with overlaps averaged (only when `tiling`); otherwise the width must
/// equal the training patch width.
template <typename T>
std::vector<dsp::Spectrogram> convert_batch(const CycleGanModel<T>& m, const std::vector<const dsp::Spectrogram*>& xs,
                                            Direction dir, bool tiling = true, std::size_t batch = 16) {
  tensor::NoGradGuard guard;
  const auto& gen = m.generator(dir);
  const std::size_t patch = m.patch_frames;
  std::vector<dsp::Spectrogram> out;
  out.reserve(xs.size());
  // (spectrogram index, offset) work items, processed in fixed-size batches
  std::vector<std::pair<std::size_t, std::size_t>> items;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto& x = *xs[i];
    require(tiling || x.n_frames == patch, "ShapeMismatch",
            "convert: input has " + std::to_string(x.n_frames) + " frames, model expects " + std::to_string(patch) +
                " (enable tiling)");
    for (auto o : tile_offsets(x.n_frames, patch)) items.emplace_back(i, o);
    dsp::Spectrogram y = x;
    std::fill(y.values.begin(), y.values.end(), 0.0f);
    out.push_back(std::move(y));
  }
  std::vector<std::vector<float>> acc(xs.size());
  std::vector<std::vector<float>> count(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc[i].assign(xs[i]->values.size(), 0.0f);
    count[i].assign(xs[i]->n_frames, 0.0f);
  }
  for (std::size_t b0 = 0; b0 < items.size(); b0 += batch) {
    const std::size_t b1 = std::min(items.size(), b0 + batch);
    const std::size_t h = xs[items[b0].first]->n_mels;
    DiffTensor<T> x(tensor::Shape{b1 - b0, 1, h, patch});
    for (std::size_t k = b0; k < b1; ++k) {
      const auto& sp = *xs[items[k].first];
      require(sp.n_mels == h, "ShapeMismatch", "convert: mixed mel counts in one batch");
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < patch; ++j) {
          x.storage()[((k - b0) * h + i) * patch + j] =
              static_cast<T>((sp.at(i, items[k].second + j) - m.norm_mean) / m.norm_std);
        }
      }
    }
    auto y = gen(x);
    for (std::size_t k = b0; k < b1; ++k) {
      const auto [idx, off] = items[k];
      const std::size_t w = xs[idx]->n_frames;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < patch; ++j) {
          acc[idx][i * w + off + j] += static_cast<float>(y.storage()[((k - b0) * h + i) * patch + j]);
        }
      }
      for (std::size_t j = 0; j < patch; ++j) count[idx][off + j] += 1.0f;
    }
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t w = xs[i]->n_frames;
    for (std::size_t r = 0; r < xs[i]->n_mels; ++r) {
      for (std::size_t j = 0; j < w; ++j) {
        const double v = acc[i][r * w + j] / count[i][j] * m.norm_std + m.norm_mean;
        out[i].values[r * w + j] = static_cast<float>(v);
      }
    }
  }
  return out;
}

template <typename T>
dsp::Spectrogram convert(const CycleGanModel<T>& m, const dsp::Spectrogram& x, Direction dir, bool tiling = true) {
  return convert_batch(m, {&x}, dir, tiling).front();
}

}  // namespace micshift::cyclegan
