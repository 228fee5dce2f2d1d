#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "micshift/core/binary_io.hpp"
#include "micshift/tensor/diff_tensor.hpp"

namespace micshift::tensor {

/// A named, shaped f32 blob as stored in an MCKP file.
struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Ordered sections of stored tensors, e.g. {F, G, D_A, D_B, opt}.
struct Checkpoint {
  std::vector<std::pair<std::string, std::vector<StoredTensor>>> sections;

  const std::vector<StoredTensor>& section(const std::string& tag) const {
    for (const auto& [t, v] : sections) {
      if (t == tag) return v;
    }
    throw Error("MissingSection", "checkpoint has no section '" + tag + "'");
  }
  bool has_section(const std::string& tag) const {
    for (const auto& s : sections) {
      if (s.first == tag) return true;
    }
    return false;
  }
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
std::vector<StoredTensor> store(const ParamList<T>& params) {
  std::vector<StoredTensor> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    StoredTensor s{p.name, p.tensor.shape(), {}};
    s.data.assign(p.tensor.storage().begin(), p.tensor.storage().end());
    out.push_back(std::move(s));
  }
  return out;
}

/// Loads values into parameters matched by name; every parameter must be present.
template <typename T>
void restore(const std::vector<StoredTensor>& stored, ParamList<T>& params) {
  std::map<std::string, const StoredTensor*> by_name;
  for (const auto& s : stored) by_name[s.name] = &s;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    require(it != by_name.end(), "MissingParameter", "checkpoint lacks parameter '" + p.name + "'");
    require(it->second->shape == p.tensor.shape(), "ShapeMismatch",
            "parameter '" + p.name + "': checkpoint shape " + shape_str(it->second->shape) + " vs model " +
                shape_str(p.tensor.shape()));
    auto& d = p.tensor.storage();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(it->second->data[i]);
  }
}

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  io::write_bytes(os, "MCKP");
  io::write_le<std::uint16_t>(os, kCheckpointVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.sections.size()));
  for (const auto& [tag, tensors] : ck.sections) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tag.size()));
    io::write_bytes(os, tag);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
      io::write_bytes(os, t.name);
      io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
      for (float v : t.data) io::write_le<float>(os, v);
    }
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  require(io::read_bytes(is, 4) == "MCKP", "BadMagic", "not an MCKP checkpoint");
  const auto version = io::read_le<std::uint16_t>(is);
  require(version == kCheckpointVersion, "UnsupportedVersion", "MCKP version " + std::to_string(version));
  Checkpoint ck;
  const auto n_sections = io::read_le<std::uint32_t>(is);
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    std::string tag = io::read_bytes(is, io::read_le<std::uint32_t>(is));
    std::vector<StoredTensor> tensors(io::read_le<std::uint32_t>(is));
    for (auto& t : tensors) {
      t.name = io::read_bytes(is, io::read_le<std::uint32_t>(is));
      t.shape.resize(io::read_le<std::uint32_t>(is));
      for (auto& d : t.shape) d = io::read_le<std::uint32_t>(is);
      t.data.resize(numel(t.shape));
      for (auto& v : t.data) v = io::read_le<float>(is);
    }
    ck.sections.emplace_back(std::move(tag), std::move(tensors));
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "IoError", "cannot write " + path.string());
  write_checkpoint(os, ck);
  require(static_cast<bool>(os), "IoError", "failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "MissingFile", "cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace micshift::tensor
