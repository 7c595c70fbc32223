#pragma once

// Fixed, invertible waveform <-> latent transform: non-overlapping frames of
// R samples, each mapped through an orthonormal DCT-II basis. A separate
// rectangular projection picks the channels the denoiser works on.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "freeaudio/errors.hpp"
#include "freeaudio/numerics.hpp"

namespace freeaudio {

struct CodecConfig {
  double sample_rate = 4000.0;
  std::size_t frame_size = 160;  // R
  std::size_t channels = 160;    // C; C == R is lossless
  std::string transform_id = "dct2-orthonormal";

  double frame_rate() const { return sample_rate / double(frame_size); }
};

struct Latent {
  double frame_rate = 0.0;
  Tensor2D<double> data;  // channels x frames

  std::size_t channels() const { return data.rows(); }
  std::size_t frames() const { return data.cols(); }
};

// Round-half-up conversion used everywhere seconds become frame counts.
inline std::size_t seconds_to_frames(double seconds, double frame_rate) {
  const double f = std::floor(seconds * frame_rate + 0.5);
  return f <= 0.0 ? 0 : std::size_t(f);
}

inline std::size_t seconds_to_samples(double seconds, double sample_rate) {
  return seconds_to_frames(seconds, sample_rate);
}

class Codec {
 public:
  explicit Codec(CodecConfig config = {}) : config_(std::move(config)) {
    if (config_.frame_size == 0 || config_.channels == 0 || config_.channels > config_.frame_size) {
      throw RangeError("codec: need 0 < channels <= frame_size");
    }
    if (config_.transform_id != "dct2-orthonormal") {
      throw RangeError("codec: unknown transform " + config_.transform_id);
    }
    const std::size_t r = config_.frame_size;
    basis_ = Tensor2D<double>(config_.channels, r);
    for (std::size_t k = 0; k < config_.channels; ++k) {
      const double s = k == 0 ? std::sqrt(1.0 / double(r)) : std::sqrt(2.0 / double(r));
      for (std::size_t n = 0; n < r; ++n) {
        basis_(k, n) = s * std::cos(std::numbers::pi * double(k) * (double(n) + 0.5) / double(r));
      }
    }
  }

  const CodecConfig& config() const { return config_; }
  const Tensor2D<double>& basis() const { return basis_; }
  double frame_rate() const { return config_.frame_rate(); }

  std::size_t frames_for_samples(std::size_t samples) const {
    return (samples + config_.frame_size - 1) / config_.frame_size;
  }

  // Zero-pads to a whole number of frames.
  Latent encode(std::span<const double> waveform) const {
    if (waveform.empty()) throw RangeError("codec: empty waveform");
    const std::size_t r = config_.frame_size;
    const std::size_t frames = frames_for_samples(waveform.size());
    Tensor2D<double> blocks(r, frames);
    for (std::size_t i = 0; i < waveform.size(); ++i) blocks(i % r, i / r) = waveform[i];
    Latent out;
    out.frame_rate = frame_rate();
    out.data = matmul(basis_, blocks);
    return out;
  }

  // Inverse of encode; `samples` trims the padded tail.
  std::vector<double> decode(const Latent& latent, std::optional<std::size_t> samples = {}) const {
    if (latent.channels() != config_.channels) {
      throw DimensionError("codec: latent has " + std::to_string(latent.channels()) +
                           " channels, expected " + std::to_string(config_.channels));
    }
    const std::size_t r = config_.frame_size;
    const Tensor2D<double> blocks = matmul_tn(basis_, latent.data);
    const std::size_t total = latent.frames() * r;
    const std::size_t n = samples ? std::min(*samples, total) : total;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = blocks(i % r, i / r);
    if (samples && *samples > total) out.resize(*samples, 0.0);
    return out;
  }

 private:
  CodecConfig config_;
  Tensor2D<double> basis_;  // channels x R, orthonormal rows
};

// Orthonormal row-selection that maps full codec latents onto the reduced
// channel set the denoiser models, with a fixed scale so model latents are
// roughly unit magnitude. lift() is the transpose (pseudo-inverse).
class LatentProjection {
 public:
  LatentProjection() = default;
  LatentProjection(std::size_t full_channels, std::vector<std::size_t> selected, double scale)
      : full_channels_(full_channels), selected_(std::move(selected)), scale_(scale) {
    for (std::size_t s : selected_) {
      if (s >= full_channels_) throw RangeError("projection: channel index out of range");
    }
    if (scale_ <= 0.0) throw RangeError("projection: scale must be positive");
  }

  // Evenly spaced even DCT indices: a tone on an even basis index has
  // continuous phase across frames, so it stays a clean sinusoid.
  static LatentProjection even_spaced(std::size_t full_channels, std::size_t count,
                                      std::size_t offset, std::size_t stride, double scale) {
    std::vector<std::size_t> sel(count);
    for (std::size_t i = 0; i < count; ++i) sel[i] = offset + stride * i;
    return LatentProjection(full_channels, std::move(sel), scale);
  }

  std::size_t model_channels() const { return selected_.size(); }
  std::size_t full_channels() const { return full_channels_; }
  const std::vector<std::size_t>& selected() const { return selected_; }
  double scale() const { return scale_; }

  Tensor2D<double> matrix() const {
    Tensor2D<double> p(selected_.size(), full_channels_);
    for (std::size_t i = 0; i < selected_.size(); ++i) p(i, selected_[i]) = 1.0;
    return p;
  }

  Latent project(const Latent& full) const {
    if (full.channels() != full_channels_) throw DimensionError("projection: channel mismatch");
    Latent out;
    out.frame_rate = full.frame_rate;
    out.data = Tensor2D<double>(selected_.size(), full.frames());
    for (std::size_t i = 0; i < selected_.size(); ++i) {
      for (std::size_t f = 0; f < full.frames(); ++f) {
        out.data(i, f) = full.data(selected_[i], f) / scale_;
      }
    }
    return out;
  }

  Latent lift(const Latent& model) const {
    if (model.channels() != selected_.size()) throw DimensionError("projection: channel mismatch");
    Latent out;
    out.frame_rate = model.frame_rate;
    out.data = Tensor2D<double>(full_channels_, model.frames());
    for (std::size_t i = 0; i < selected_.size(); ++i) {
      for (std::size_t f = 0; f < model.frames(); ++f) {
        out.data(selected_[i], f) = model.data(i, f) * scale_;
      }
    }
    return out;
  }

 private:
  std::size_t full_channels_ = 0;
  std::vector<std::size_t> selected_;
  double scale_ = 1.0;
};

}  // namespace freeaudio
