#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "micshift/core/binary_io.hpp"
#include "micshift/core/error.hpp"
#include "micshift/dsp/waveform.hpp"

namespace micshift::dsp {

enum class WavEncoding { kPcm16, kFloat32 };

/// Reads a RIFF/WAVE file (PCM 16-bit or IEEE float 32-bit). Multi-channel
/// input is averaged to mono.
inline Waveform read_wav(std::istream& is) {
  using io::read_le;
  require(io::read_bytes(is, 4) == "RIFF", "InvalidWav", "missing RIFF header");
  read_le<std::uint32_t>(is);
  require(io::read_bytes(is, 4) == "WAVE", "InvalidWav", "missing WAVE tag");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    const std::string id = io::read_bytes(is, 4);
    const auto size = read_le<std::uint32_t>(is);
    if (id == "fmt ") {
      format = read_le<std::uint16_t>(is);
      channels = read_le<std::uint16_t>(is);
      rate = read_le<std::uint32_t>(is);
      read_le<std::uint32_t>(is);  // byte rate
      read_le<std::uint16_t>(is);  // block align
      bits = read_le<std::uint16_t>(is);
      std::uint32_t consumed = 16;
      if (format == 0xFFFE && size >= 40) {
        read_le<std::uint16_t>(is);  // cbSize
        read_le<std::uint16_t>(is);  // valid bits
        read_le<std::uint32_t>(is);  // channel mask
        format = read_le<std::uint16_t>(is);
        io::read_bytes(is, 14);
        consumed = 40;
      }
      if (size > consumed) io::read_bytes(is, size - consumed);
      have_fmt = true;
    } else if (id == "data") {
      require(have_fmt, "InvalidWav", "data chunk before fmt chunk");
      require(channels > 0, "InvalidWav", "zero channels");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      require(pcm16 || f32, "UnsupportedWav", "only PCM16 and float32 WAV are supported");
      const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
      const std::size_t frames = size / frame_bytes;
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) {
          acc += pcm16 ? read_le<std::int16_t>(is) / 32768.0 : static_cast<double>(read_le<float>(is));
        }
        w.samples[i] = acc / channels;
      }
      validate(w);
      return w;
    } else {
      io::read_bytes(is, size + (size & 1u));
    }
  }
}

inline Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "FileNotFound", "cannot open " + path);
  return read_wav(is);
}

inline void write_wav(std::ostream& os, const Waveform& w, WavEncoding enc = WavEncoding::kFloat32) {
  using io::write_le;
  validate(w);
  const std::uint16_t bits = enc == WavEncoding::kPcm16 ? 16 : 32;
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * (bits / 8));
  io::write_bytes(os, "RIFF");
  write_le<std::uint32_t>(os, 36 + data_bytes);
  io::write_bytes(os, "WAVEfmt ");
  write_le<std::uint32_t>(os, 16);
  write_le<std::uint16_t>(os, enc == WavEncoding::kPcm16 ? 1 : 3);
  write_le<std::uint16_t>(os, 1);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate) * (bits / 8));
  write_le<std::uint16_t>(os, bits / 8);
  write_le<std::uint16_t>(os, bits);
  io::write_bytes(os, "data");
  write_le<std::uint32_t>(os, data_bytes);
  for (double s : w.samples) {
    if (enc == WavEncoding::kPcm16) {
      const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
      write_le<std::int16_t>(os, static_cast<std::int16_t>(std::lround(c * 32768.0)));
    } else {
      write_le<float>(os, static_cast<float>(s));
    }
  }
}

inline void write_wav(const std::string& path, const Waveform& w, WavEncoding enc = WavEncoding::kFloat32) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "IoError", "cannot write " + path);
  write_wav(os, w, enc);
}

}  // namespace micshift::dsp
