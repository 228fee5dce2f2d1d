#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include "micshift/core/binary_io.hpp"
#include "micshift/dsp/features.hpp"

namespace micshift::dsp {

// MCSG layout (little-endian):
//   "MCSG" | u16 version | u32 n_mels | u32 n_frames | u32 hop | u32 sample_rate | f32 values[n_mels * n_frames]
inline constexpr std::uint16_t kMcsgVersion = 1;

inline void write_mcsg(std::ostream& os, const Spectrogram& s) {
  require(s.values.size() == s.n_mels * s.n_frames, "ShapeMismatch", "spectrogram value count mismatch");
  io::write_bytes(os, "MCSG");
  io::write_le<std::uint16_t>(os, kMcsgVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.n_mels));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.n_frames));
  io::write_le<std::uint32_t>(os, s.hop);
  io::write_le<std::uint32_t>(os, s.sample_rate);
  for (float v : s.values) io::write_le<float>(os, v);
}

inline Spectrogram read_mcsg(std::istream& is) {
  require(io::read_bytes(is, 4) == "MCSG", "InvalidSpectrogramFile", "bad MCSG magic");
  const auto version = io::read_le<std::uint16_t>(is);
  require(version == kMcsgVersion, "InvalidSpectrogramFile", "unsupported MCSG version " + std::to_string(version));
  Spectrogram s;
  s.n_mels = io::read_le<std::uint32_t>(is);
  s.n_frames = io::read_le<std::uint32_t>(is);
  s.hop = io::read_le<std::uint32_t>(is);
  s.sample_rate = io::read_le<std::uint32_t>(is);
  s.values.resize(s.n_mels * s.n_frames);
  for (auto& v : s.values) {
    v = io::read_le<float>(is);
    require(std::isfinite(v), "InvalidSpectrogramFile", "non-finite spectrogram value");
  }
  return s;
}

inline void write_mcsg(const std::string& path, const Spectrogram& s) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "IoError", "cannot write " + path);
  write_mcsg(os, s);
}

inline Spectrogram read_mcsg(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "FileNotFound", "cannot open " + path);
  return read_mcsg(is);
}

}  // namespace micshift::dsp
