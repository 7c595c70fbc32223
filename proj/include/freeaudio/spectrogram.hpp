#pragma once

// Log-magnitude STFT rendered as a binary PGM (P5). Time runs left to right,
// frequency bottom to top.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "freeaudio/errors.hpp"
#include "freeaudio/numerics.hpp"

namespace freeaudio {

struct SpectrogramConfig {
  std::size_t window = 256;
  std::size_t hop = 64;
  double dynamic_range_db = 80.0;
};

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, top row first

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

// Hann-windowed magnitude, frames x (window/2 + 1).
inline Tensor2D<double> stft_magnitude(std::span<const double> wave, const SpectrogramConfig& cfg = {}) {
  if (wave.empty()) throw RangeError("spectrogram: empty waveform");
  if (cfg.window < 2 || cfg.hop == 0) throw RangeError("spectrogram: bad window or hop");
  const std::size_t n = cfg.window;
  const std::size_t bins = n / 2 + 1;
  const std::size_t frames = wave.size() < n ? 1 : 1 + (wave.size() - n) / cfg.hop;
  std::vector<double> hann(n), cosv(n), sinv(n);
  for (std::size_t i = 0; i < n; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
    cosv[i] = std::cos(2.0 * std::numbers::pi * double(i) / double(n));
    sinv[i] = std::sin(2.0 * std::numbers::pi * double(i) / double(n));
  }
  Tensor2D<double> mag(frames, bins);
  std::vector<double> buf(n);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t s0 = f * cfg.hop;
    for (std::size_t i = 0; i < n; ++i) buf[i] = s0 + i < wave.size() ? wave[s0 + i] * hann[i] : 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = (k * i) % n;
        re += buf[i] * cosv[idx];
        im -= buf[i] * sinv[idx];
      }
      mag(f, k) = std::sqrt(re * re + im * im);
    }
  }
  return mag;
}

inline GrayImage render_spectrogram(std::span<const double> wave, const SpectrogramConfig& cfg = {}) {
  const Tensor2D<double> mag = stft_magnitude(wave, cfg);
  GrayImage img;
  img.width = mag.rows();
  img.height = mag.cols();
  img.pixels.assign(img.width * img.height, 0);
  double peak = 0.0;
  for (double v : mag.values()) peak = std::max(peak, v);
  if (peak <= 0.0) return img;
  const double top = 20.0 * std::log10(peak);
  const double floor_db = top - cfg.dynamic_range_db;
  for (std::size_t f = 0; f < img.width; ++f) {
    for (std::size_t k = 0; k < img.height; ++k) {
      const double db = mag(f, k) > 0.0 ? 20.0 * std::log10(mag(f, k)) : floor_db;
      const double u = std::clamp((db - floor_db) / cfg.dynamic_range_db, 0.0, 1.0);
      img.pixels[(img.height - 1 - k) * img.width + f] = std::uint8_t(std::lround(255.0 * u));
    }
  }
  return img;
}

inline std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  const auto bytes = encode_pgm(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("pgm: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw FormatError("pgm: write failed for " + path);
}

}  // namespace freeaudio
