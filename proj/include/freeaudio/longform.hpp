#pragma once

// Generation past the model window: overlapping segments sampled in lockstep,
// per-step overlap composition, self-attention guidance toward a reference
// segment, and trim-and-concatenate of the decoded segments.
//
// Ownership rule shared by composition and trimming: segment s owns global
// frames [start_s + eps/2, start_{s+1} + eps/2) (segment 0 from frame 0, the
// last segment to the end). In an overlap the predecessor's tail therefore
// covers the earlier half and the successor's head the later half.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "freeaudio/attention_control.hpp"
#include "freeaudio/diffusion.hpp"
#include "freeaudio/dit.hpp"
#include "freeaudio/errors.hpp"
#include "freeaudio/pipeline.hpp"
#include "freeaudio/timing_plan.hpp"

namespace freeaudio {

struct Segment {
  double start_s = 0.0;
  double end_s = 0.0;
  std::size_t start_frame = 0;
  std::size_t frames = 0;
  std::string caption;
  WindowPlan sub_plan;  // plan windows clipped to the segment, in local time
};

struct SegmentLayout {
  double total_s = 0.0;
  double seg_len_s = 0.0;
  double overlap_s = 0.0;
  double frame_rate = 0.0;
  std::size_t total_frames = 0;
  std::size_t overlap_frames = 0;
  std::vector<Segment> segments;

  std::size_t size() const { return segments.size(); }

  std::size_t own_begin(std::size_t s) const {
    return s == 0 ? 0 : segments[s].start_frame + overlap_frames / 2;
  }
  std::size_t own_end(std::size_t s) const {
    return s + 1 == segments.size() ? total_frames : segments[s + 1].start_frame + overlap_frames / 2;
  }
  std::size_t owner_of(std::size_t frame) const {
    for (std::size_t s = 0; s < segments.size(); ++s) {
      if (frame < own_end(s)) return s;
    }
    return segments.size() - 1;
  }
};

namespace detail {

inline bool near_integer(double x) { return std::abs(x - std::round(x)) < 1e-6; }

}  // namespace detail

// n = ceil((M' - eps) / (M_max - eps)) segments starting at multiples of the
// stride M_max - eps. The last one ends at M', so every adjacent pair overlaps
// by exactly eps.
inline SegmentLayout plan_segments(const WindowPlan& plan, double max_seconds, double overlap_s,
                                   double frame_rate) {
  plan.validate();
  if (!(overlap_s >= 0.0) || overlap_s >= max_seconds) {
    throw RangeError("overlap must satisfy 0 <= eps < segment length");
  }
  const double ef = overlap_s * frame_rate;
  if (!detail::near_integer(ef) || std::llround(ef) % 2 != 0) {
    throw RangeError("overlap must be an even number of frames");
  }
  const double stride_f = (max_seconds - overlap_s) * frame_rate;
  if (!detail::near_integer(stride_f)) throw RangeError("segment stride must be a whole number of frames");
  SegmentLayout L;
  L.total_s = plan.total_s;
  L.seg_len_s = max_seconds;
  L.overlap_s = overlap_s;
  L.frame_rate = frame_rate;
  L.overlap_frames = std::size_t(std::llround(ef));
  L.total_frames = std::size_t(std::ceil(plan.total_s * frame_rate - 1e-9));
  const auto stride = std::size_t(std::llround(stride_f));
  const auto seg_frames = std::size_t(std::llround(max_seconds * frame_rate));
  std::size_t n = 1;
  if (plan.total_s > max_seconds + 1e-9) {
    n = std::size_t(std::ceil((plan.total_s - overlap_s) / (max_seconds - overlap_s) - 1e-9));
  }
  for (std::size_t s = 0; s < n; ++s) {
    Segment seg;
    seg.start_frame = s * stride;
    seg.frames = s + 1 == n ? L.total_frames - seg.start_frame : seg_frames;
    seg.start_s = double(seg.start_frame) / frame_rate;
    seg.end_s = s + 1 == n ? plan.total_s : double(seg.start_frame + seg.frames) / frame_rate;
    WindowPlan& sp = seg.sub_plan;
    sp.total_s = seg.end_s - seg.start_s;
    std::vector<std::string> parts;
    for (const auto& w : plan.windows) {
      const double a = std::max(w.start_s, seg.start_s);
      const double b = std::min(w.end_s, seg.end_s);
      if (b - a <= kTimeMergeTolerance) continue;
      PlanWindow pw = w;
      pw.start_s = a - seg.start_s;
      pw.end_s = b - seg.start_s;
      sp.windows.push_back(std::move(pw));
      parts.push_back(w.recaption.empty() ? template_recaption(w.events) : w.recaption);
    }
    sp.windows.front().start_s = 0.0;
    sp.windows.back().end_s = sp.total_s;
    std::string caption;
    for (std::size_t i = 0; i < parts.size(); ++i) caption += (i ? " and " : "") + parts[i];
    seg.caption = caption.empty() ? plan.global_caption : caption;
    sp.global_caption = seg.caption;
    L.segments.push_back(std::move(seg));
  }
  return L;
}

// Writes the owner's rows into every segment that holds each global frame.
// `latents[index[s]]` is segment s (frames x channels, local time).
template <Real T>
void compose_latents(std::vector<Tensor2D<T>>& latents, const SegmentLayout& L,
                     const std::vector<std::size_t>& index) {
  if (index.size() != L.size()) throw DimensionError("compose: one batch index per segment required");
  if (L.size() < 2) return;
  for (std::size_t s = 0; s < L.size(); ++s) {
    const auto& seg = L.segments[s];
    const Tensor2D<T>& src = latents.at(index[s]);
    if (src.rows() < seg.frames) throw DimensionError("compose: segment latent shorter than its span");
    const std::size_t cols = src.cols();
    for (std::size_t g = L.own_begin(s); g < L.own_end(s); ++g) {
      for (std::size_t o = 0; o < L.size(); ++o) {
        if (o == s) continue;
        const auto& other = L.segments[o];
        if (g < other.start_frame || g >= other.start_frame + other.frames) continue;
        Tensor2D<T>& dst = latents.at(index[o]);
        if (dst.cols() != cols) throw DimensionError("compose: channel mismatch");
        const T* from = src.data() + (g - seg.start_frame) * cols;
        std::copy(from, from + cols, dst.data() + (g - other.start_frame) * cols);
      }
    }
  }
}

template <Real T>
void compose_latents(std::vector<Tensor2D<T>>& latents, const SegmentLayout& L) {
  std::vector<std::size_t> index(L.size());
  for (std::size_t s = 0; s < L.size(); ++s) index[s] = s;
  compose_latents(latents, L, index);
}

// Keys and values of the reference segment at one self-attention site.
template <Real T>
struct ReferenceState {
  double lambda = 0.2;
  std::vector<Tensor2D<T>> k_ref;  // per layer, active rows only
  std::vector<Tensor2D<T>> v_ref;

  void capture(std::size_t layer, const Tensor2D<T>& k, const Tensor2D<T>& v, std::size_t active) {
    if (k_ref.size() <= layer) {
      k_ref.resize(layer + 1);
      v_ref.resize(layer + 1);
    }
    k_ref[layer] = Tensor2D<T>(active, k.cols());
    v_ref[layer] = Tensor2D<T>(active, v.cols());
    std::copy(k.data(), k.data() + active * k.cols(), k_ref[layer].data());
    std::copy(v.data(), v.data() + active * v.cols(), v_ref[layer].data());
  }
};

// o' = lambda * MHA(q, k_ref, v_ref) + (1 - lambda) * o on the first `rows` rows.
template <Real T>
void reference_guidance(const Tensor2D<T>& q, Tensor2D<T>& o, const Tensor2D<T>& k_ref,
                        const Tensor2D<T>& v_ref, std::size_t heads, double lambda,
                        std::optional<std::size_t> rows = std::nullopt) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw RangeError("reference guidance: lambda must be in [0, 1]");
  if (q.rows() != o.rows() || q.cols() != k_ref.cols() || o.cols() != v_ref.cols()) {
    throw DimensionError("reference guidance: shape mismatch");
  }
  if (lambda == 0.0) return;
  const std::size_t n = rows.value_or(q.rows());
  if (n > q.rows()) throw DimensionError("reference guidance: too many rows");
  Tensor2D<T> qa(n, q.cols());
  std::copy(q.data(), q.data() + n * q.cols(), qa.data());
  const Tensor2D<T> a = multihead_attention(qa, k_ref, v_ref, heads);
  const T l = T(lambda), w = T(1.0 - lambda);
  for (std::size_t e = 0; e < a.size(); ++e) o.data()[e] = l * a.data()[e] + w * o.data()[e];
}

// Keeps each segment's owned frames once and concatenates them. Output has
// round(M' * sample_rate) samples.
inline std::vector<double> trim_concat(const std::vector<std::vector<double>>& segments, const SegmentLayout& L,
                                       double sample_rate) {
  if (segments.size() != L.size()) throw DimensionError("trim_concat: segment count mismatch");
  const double spf = sample_rate / L.frame_rate;
  if (!detail::near_integer(spf)) throw RangeError("trim_concat: samples per frame must be integral");
  const auto R = std::size_t(std::llround(spf));
  const std::size_t total = seconds_to_samples(L.total_s, sample_rate);
  std::vector<double> out;
  out.reserve(total);
  for (std::size_t s = 0; s < L.size(); ++s) {
    const auto& seg = L.segments[s];
    const auto& wave = segments[s];
    const std::size_t expect = seg.frames * R;
    const std::size_t want = std::min(expect, seconds_to_samples(seg.end_s - seg.start_s, sample_rate));
    if (wave.size() != expect && wave.size() != want) {
      throw DimensionError("trim_concat: segment " + std::to_string(s) + " has " + std::to_string(wave.size()) +
                           " samples, expected " + std::to_string(expect));
    }
    const std::size_t a = (L.own_begin(s) - seg.start_frame) * R;
    const std::size_t b = std::min(wave.size(), (L.own_end(s) - seg.start_frame) * R);
    out.insert(out.end(), wave.begin() + std::ptrdiff_t(a), wave.begin() + std::ptrdiff_t(b));
  }
  out.resize(total, 0.0);
  return out;
}

struct LongFormConfig {
  double max_seconds = 10.0;
  double overlap_s = 2.0;
  double lambda = 0.2;
  bool compose = true;
  std::optional<ControlConfig> control;  // timing control inside each segment
};

template <Real T>
struct LongFormResult {
  SegmentLayout layout;
  std::vector<double> waveform;
  std::vector<Tensor2D<T>> segment_latents;
  std::vector<std::vector<double>> segment_waves;
};

// Noise stream of element j (0 = base) of segment s.
inline std::uint64_t segment_noise_stream(std::size_t s, std::size_t j) { return std::uint64_t(s) * 1000 + j; }

template <Real T>
LongFormResult<T> generate_long(const DitModel<T>& model, const NoiseSchedule& schedule, const ToyWorld& world,
                                const WindowPlan& plan, const LongFormConfig& cfg, SamplerConfig<T> sampler) {
  const double fr = model.config().frame_rate;
  if (cfg.max_seconds > model.config().max_seconds + 1e-9) {
    throw RangeError("segment length exceeds the model window");
  }
  LongFormResult<T> res;
  res.layout = plan_segments(plan, cfg.max_seconds, cfg.overlap_s, fr);
  const SegmentLayout& L = res.layout;

  std::vector<std::string> captions;
  std::vector<double> seconds;
  std::vector<std::size_t> base_index;
  std::vector<ControlGroup> groups;
  sampler.noise_streams.clear();
  for (std::size_t s = 0; s < L.size(); ++s) {
    const auto& seg = L.segments[s];
    base_index.push_back(captions.size());
    captions.push_back(seg.caption);
    seconds.push_back(double(seg.frames) / fr);
    sampler.noise_streams.push_back(segment_noise_stream(s, 0));
    if (cfg.control) {
      ControlGroup g{base_index.back(), layout_from_plan(seg.sub_plan, fr, seg.frames)};
      for (std::size_t j = 0; j < g.layout.k(); ++j) {
        captions.push_back(seg.sub_plan.windows[g.layout.windows[j].plan_window].recaption);
        seconds.push_back(g.layout.sub_seconds(j));
        sampler.noise_streams.push_back(segment_noise_stream(s, j + 1));
      }
      groups.push_back(std::move(g));
    }
  }
  std::vector<TextCondition<T>> text;
  std::vector<DurationCondition> durs;
  for (std::size_t b = 0; b < captions.size(); ++b) {
    text.push_back(model.embed_text(captions[b]));
    durs.push_back({seconds[b]});
  }

  std::optional<AttentionControl<T>> control;
  if (cfg.control) control.emplace(groups, *cfg.control);
  const bool guide = cfg.lambda > 0.0 && L.size() > 1;
  ReferenceState<T> ref;
  ref.lambda = cfg.lambda;
  const std::size_t heads = model.config().heads;

  HookSet<T> hooks;
  for (std::size_t l = 0; l < model.config().layers; ++l) {
    if (control) {
      hooks.set({AttentionKind::cross_attn, l}, HookPhase::pre_query, [&](AttentionBatch<T>& v) { control->apply(v); });
      hooks.set({AttentionKind::cross_attn, l}, HookPhase::post_output, [&](AttentionBatch<T>& v) { control->apply(v); });
    }
    if (control || guide) {
      hooks.set({AttentionKind::self_attn, l}, HookPhase::post_output, [&, l](AttentionBatch<T>& v) {
        if (control) control->apply(v);
        if (!guide) return;
        const std::size_t r0 = base_index[0];
        ref.capture(l, *v.k[r0], *v.v[r0], L.segments[0].frames);
        for (std::size_t s = 1; s < L.size(); ++s) {
          const std::size_t b = base_index[s];
          reference_guidance(*v.q[b], *v.out[b], ref.k_ref[l], ref.v_ref[l], heads, ref.lambda,
                             L.segments[s].frames);
        }
      });
    }
  }
  // A caller-supplied step callback runs after composition.
  if (cfg.compose && L.size() > 1) {
    sampler.callback = [&L, &base_index, user = sampler.callback](SamplerStep<T>& step) {
      compose_latents(step.x0, L, base_index);
      compose_latents(step.eps, L, base_index);
      if (user) user(step);
    };
  }
  auto latents = sample(model, schedule, text, durs, sampler, hooks.empty() ? nullptr : &hooks);
  for (std::size_t s = 0; s < L.size(); ++s) {
    res.segment_latents.push_back(latents[base_index[s]]);
    res.segment_waves.push_back(world.to_waveform(latents[base_index[s]], L.segments[s].frames,
                                                  L.segments[s].frames * world.geometry().frame_size));
  }
  res.waveform = trim_concat(res.segment_waves, L, world.sample_rate());
  return res;
}

}  // namespace freeaudio
