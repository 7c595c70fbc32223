#pragma once

// 16-bit PCM mono RIFF/WAVE reader and writer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "freeaudio/errors.hpp"

namespace freeaudio {

struct WavData {
  std::uint32_t sample_rate = 0;
  std::vector<double> samples;  // [-1, 1]

  double duration() const {
    return sample_rate ? double(samples.size()) / double(sample_rate) : 0.0;
  }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(std::uint8_t(v >> (8 * i)));
}
inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(std::uint8_t(v));
  b.push_back(std::uint8_t(v >> 8));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
inline std::uint16_t get_u16(const std::uint8_t* p) {
  return std::uint16_t(p[0] | p[1] << 8);
}

}  // namespace detail

inline std::int16_t to_pcm16(double x) {
  const double c = std::clamp(x, -1.0, 1.0);
  return std::int16_t(std::lround(c * 32767.0));
}

inline std::vector<std::uint8_t> encode_wav(std::span<const double> samples,
                                            std::uint32_t sample_rate) {
  std::vector<std::uint8_t> b;
  const auto data_bytes = std::uint32_t(samples.size() * 2);
  b.reserve(44 + data_bytes);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(b, 16);
  detail::put_u16(b, 1);  // PCM
  detail::put_u16(b, 1);  // mono
  detail::put_u32(b, sample_rate);
  detail::put_u32(b, sample_rate * 2);
  detail::put_u16(b, 2);
  detail::put_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(b, data_bytes);
  for (double s : samples) detail::put_u16(b, std::uint16_t(to_pcm16(s)));
  return b;
}

inline WavData decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("wav: not a RIFF/WAVE file");
  }
  WavData out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t len = detail::get_u32(chunk + 4);
    if (pos + 8 + std::size_t(len) > bytes.size()) throw FormatError("wav: truncated chunk");
    const std::uint8_t* body = chunk + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError("wav: short fmt chunk");
      const auto format = detail::get_u16(body);
      const auto channels = detail::get_u16(body + 2);
      const auto bits = detail::get_u16(body + 14);
      if (format != 1 || channels != 1 || bits != 16) {
        throw FormatError("wav: only 16-bit PCM mono is supported");
      }
      out.sample_rate = detail::get_u32(body + 4);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      out.samples.resize(len / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i) {
        out.samples[i] = double(std::int16_t(detail::get_u16(body + 2 * i))) / 32767.0;
      }
      return out;
    }
    pos += 8 + len + (len & 1);
  }
  throw FormatError("wav: no data chunk");
}

inline void write_wav(const std::string& path, std::span<const double> samples,
                      std::uint32_t sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("wav: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw FormatError("wav: write failed for " + path);
}

inline WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("wav: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

}  // namespace freeaudio
