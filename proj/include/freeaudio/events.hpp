#pragma once

// Synthetic sound-event vocabulary. Every class is a band-limited tone placed
// on one even DCT basis index of the codec, so it lands on exactly one model
// latent channel and has a disjoint detection band.

#include <cstddef>
#include <string>
#include <vector>

namespace freeaudio {

enum class Envelope { sustained, burst };

struct EventClass {
  std::string name;
  double low_hz = 0.0;
  double high_hz = 0.0;
  Envelope envelope = Envelope::sustained;
  std::size_t dct_index = 0;      // codec coefficient the tone sits on
  std::size_t model_channel = 0;  // row of the latent projection

  double center_hz(double sample_rate, std::size_t frame_size) const {
    return double(dct_index) * sample_rate / (2.0 * double(frame_size));
  }
};

struct ToyGeometry {
  double sample_rate = 4000.0;
  std::size_t frame_size = 160;
  std::size_t model_channels = 16;
  std::size_t dct_offset = 6;
  std::size_t dct_stride = 10;
  double latent_scale = 4.0;
  double band_half_width_hz = 90.0;
};

inline std::vector<EventClass> default_event_classes(const ToyGeometry& g = {}) {
  struct Spec {
    const char* name;
    Envelope env;
  };
  static const Spec specs[] = {
      {"frying", Envelope::sustained}, {"dog", Envelope::burst},
      {"water", Envelope::sustained},  {"alarm", Envelope::burst},
      {"speech", Envelope::burst},     {"owl", Envelope::burst},
      {"crickets", Envelope::sustained}, {"engine", Envelope::sustained},
  };
  std::vector<EventClass> out;
  std::size_t i = 0;
  for (const auto& s : specs) {
    EventClass c;
    c.name = s.name;
    c.envelope = s.env;
    c.model_channel = 2 * i;
    c.dct_index = g.dct_offset + g.dct_stride * c.model_channel;
    const double f = c.center_hz(g.sample_rate, g.frame_size);
    c.low_hz = f - g.band_half_width_hz;
    c.high_hz = f + g.band_half_width_hz;
    out.push_back(std::move(c));
    ++i;
  }
  return out;
}

inline std::vector<std::string> default_connectives() { return {"while", "and", "with", "then"}; }

inline std::vector<std::string> default_vocabulary() {
  std::vector<std::string> v;
  for (const auto& c : default_event_classes()) v.push_back(c.name);
  for (const auto& w : default_connectives()) v.push_back(w);
  return v;
}

}  // namespace freeaudio
