#pragma once

// Glue between waveforms, model latents and the sampler: the toy world
// (codec + channel projection + event classes) and timing-controlled
// generation over a 1 + k batch.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "freeaudio/attention_control.hpp"
#include "freeaudio/codec.hpp"
#include "freeaudio/diffusion.hpp"
#include "freeaudio/dit.hpp"
#include "freeaudio/eval.hpp"
#include "freeaudio/events.hpp"
#include "freeaudio/timing_plan.hpp"

namespace freeaudio {

class ToyWorld {
 public:
  explicit ToyWorld(ToyGeometry g = {})
      : geometry_(g),
        codec_(CodecConfig{g.sample_rate, g.frame_size, g.frame_size, "dct2-orthonormal"}),
        projection_(LatentProjection::even_spaced(g.frame_size, g.model_channels, g.dct_offset,
                                                  g.dct_stride, g.latent_scale)),
        classes_(default_event_classes(g)) {}

  const ToyGeometry& geometry() const { return geometry_; }
  const Codec& codec() const { return codec_; }
  const LatentProjection& projection() const { return projection_; }
  const std::vector<EventClass>& classes() const { return classes_; }
  double sample_rate() const { return geometry_.sample_rate; }
  double frame_rate() const { return codec_.frame_rate(); }

  DitConfig model_config() const {
    DitConfig c;
    c.channels = geometry_.model_channels;
    c.frame_rate = frame_rate();
    c.max_seconds = 10.0;
    c.max_frames = seconds_to_frames(c.max_seconds, c.frame_rate);
    c.prior_sigma = 0.3;
    return c;
  }

  // Waveform -> frames x channels model latent, zero-padded to `rows`.
  template <Real T>
  Tensor2D<T> to_model(std::span<const double> wave, std::size_t rows) const {
    const Latent full = codec_.encode(wave);
    const Latent m = projection_.project(full);
    if (m.frames() > rows) throw DimensionError("to_model: clip longer than the model window");
    Tensor2D<T> out(rows, m.channels());
    for (std::size_t f = 0; f < m.frames(); ++f) {
      for (std::size_t c = 0; c < m.channels(); ++c) out(f, c) = T(m.data(c, f));
    }
    return out;
  }

  // First `frames` rows of a model latent -> waveform of `samples` samples.
  template <Real T>
  std::vector<double> to_waveform(const Tensor2D<T>& latent, std::size_t frames, std::size_t samples) const {
    if (frames > latent.rows()) throw DimensionError("to_waveform: more frames than the latent holds");
    Latent m;
    m.frame_rate = frame_rate();
    m.data = Tensor2D<double>(latent.cols(), frames);
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t c = 0; c < latent.cols(); ++c) m.data(c, f) = double(latent(f, c));
    }
    return codec_.decode(projection_.lift(m), samples);
  }

  template <Real T>
  std::vector<double> to_waveform(const Tensor2D<T>& latent, double seconds) const {
    return to_waveform(latent, seconds_to_frames(seconds, frame_rate()),
                       seconds_to_samples(seconds, sample_rate()));
  }

  template <Real T>
  std::vector<TrainingExample<T>> training_examples(const std::vector<SynthClip>& clips,
                                                    std::size_t rows) const {
    std::vector<TrainingExample<T>> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back({to_model<T>(c.waveform, rows), c.caption, c.duration_s});
    return out;
  }

 private:
  ToyGeometry geometry_;
  Codec codec_;
  LatentProjection projection_;
  std::vector<EventClass> classes_;
};

template <Real T>
struct ControlledResult {
  std::vector<Tensor2D<T>> latents;  // [base, sub_1, ..., sub_k]
  std::vector<std::string> captions;
  std::vector<double> seconds;
  TimingLayout layout;
  bool controlled = false;
};

// Generates plan.total_s seconds. With `control` unset, only the base latent
// is sampled from the global caption. With it set, the 1 + k batch is sampled
// under attention control. The base always uses noise stream 0, so an inert
// control reproduces the uncontrolled base bitwise.
template <Real T>
ControlledResult<T> generate_controlled(const DitModel<T>& model, const NoiseSchedule& schedule,
                                        const WindowPlan& plan, const std::optional<ControlConfig>& control,
                                        SamplerConfig<T> sampler) {
  plan.validate();
  const double fr = model.config().frame_rate;
  ControlledResult<T> r;
  r.layout = layout_from_plan(plan, fr, model.config().max_frames);
  r.captions.push_back(plan.global_caption);
  r.seconds.push_back(double(r.layout.base_active_frames) / fr);
  if (control) {
    for (std::size_t j = 0; j < r.layout.k(); ++j) {
      r.captions.push_back(plan.windows[r.layout.windows[j].plan_window].recaption);
      r.seconds.push_back(r.layout.sub_seconds(j));
    }
  }
  std::vector<TextCondition<T>> text;
  std::vector<DurationCondition> durs;
  for (std::size_t b = 0; b < r.captions.size(); ++b) {
    text.push_back(model.embed_text(r.captions[b]));
    durs.push_back({r.seconds[b]});
  }
  sampler.noise_streams.clear();
  for (std::size_t b = 0; b < r.captions.size(); ++b) sampler.noise_streams.push_back(b);
  if (!control) {
    r.latents = sample(model, schedule, text, durs, sampler);
    return r;
  }
  HookSet<T> hooks;
  AttentionControl<T> ctl(r.layout, *control);
  ctl.install(hooks, model.config().layers);
  r.latents = sample(model, schedule, text, durs, sampler, &hooks);
  r.controlled = true;
  return r;
}

}  // namespace freeaudio
