#pragma once

// Window-wise attention control over a batch of one base latent followed by
// k sub-latents, one per plan window.
//
// Decoupling copies the base's cross-attention queries for window j into the
// first len_j query rows of sub-latent j. Aggregation concatenates the active
// outputs of the sub-latents in window order and blends them into the base's
// active prefix.

#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "freeaudio/codec.hpp"
#include "freeaudio/dit.hpp"
#include "freeaudio/errors.hpp"
#include "freeaudio/timing_plan.hpp"

namespace freeaudio {

struct LayoutWindow {
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;
  std::size_t batch_index = 0;   // 1..k, relative to the base
  std::size_t plan_window = 0;   // index into the source plan

  std::size_t length() const { return end_frame - start_frame; }
  bool operator==(const LayoutWindow&) const = default;
};

struct TimingLayout {
  double frame_rate = 0.0;
  std::vector<LayoutWindow> windows;
  std::size_t base_active_frames = 0;

  std::size_t k() const { return windows.size(); }

  void validate() const {
    std::size_t cursor = 0;
    for (std::size_t j = 0; j < windows.size(); ++j) {
      const auto& w = windows[j];
      if (w.start_frame != cursor || w.end_frame <= w.start_frame) {
        throw DimensionError("timing layout windows must tile the base prefix without gaps");
      }
      if (w.batch_index != j + 1) throw DimensionError("timing layout batch indices must run 1..k");
      cursor = w.end_frame;
    }
    if (cursor != base_active_frames) {
      throw DimensionError("timing layout covers " + std::to_string(cursor) + " frames, base has " +
                           std::to_string(base_active_frames));
    }
  }

  // Seconds each sub-latent is conditioned on so its active prefix is len_j frames.
  double sub_seconds(std::size_t j) const { return double(windows.at(j).length()) / frame_rate; }
};

// Boundaries are rounded half-up to frames; windows that collapse to zero
// frames are dropped so their frames (none) fold into the left neighbour.
inline TimingLayout layout_from_plan(const WindowPlan& plan, double frame_rate,
                                     std::optional<std::size_t> base_active_frames = std::nullopt) {
  plan.validate();
  if (!(frame_rate > 0.0)) throw RangeError("layout: frame rate must be positive");
  const std::size_t total = seconds_to_frames(plan.total_s, frame_rate);
  if (base_active_frames && total > *base_active_frames) {
    throw RangeError("layout: plan spans " + std::to_string(total) + " frames but the base has " +
                     std::to_string(*base_active_frames));
  }
  TimingLayout layout;
  layout.frame_rate = frame_rate;
  layout.base_active_frames = total;
  std::size_t prev_end = 0;
  for (std::size_t j = 0; j < plan.windows.size(); ++j) {
    const bool last = j + 1 == plan.windows.size();
    std::size_t end = last ? total : seconds_to_frames(plan.windows[j].end_s, frame_rate);
    end = std::min(std::max(end, prev_end), total);
    if (end == prev_end) continue;
    layout.windows.push_back({prev_end, end, layout.windows.size() + 1, j});
    prev_end = end;
  }
  if (layout.windows.empty()) throw RangeError("layout: plan maps to zero frames");
  layout.validate();
  return layout;
}

// Sub-latent j's query rows [0, len_j) become the base's rows [start_j, end_j).
template <Real T>
void decouple_queries(const std::vector<Tensor2D<T>*>& q, const TimingLayout& layout, std::size_t base = 0) {
  if (base + layout.k() >= q.size()) throw DimensionError("decouple: batch smaller than 1 + k");
  const Tensor2D<T>& b = *q[base];
  for (const auto& w : layout.windows) {
    Tensor2D<T>& sub = *q[base + w.batch_index];
    if (sub.cols() != b.cols() || sub.rows() < w.length() || b.rows() < w.end_frame) {
      throw DimensionError("decouple: query shapes do not fit the layout");
    }
    std::copy(b.data() + w.start_frame * b.cols(), b.data() + w.end_frame * b.cols(), sub.data());
  }
}

// o_timing: the concatenated active outputs of the sub-latents in window order.
template <Real T>
Tensor2D<T> timing_output(const std::vector<Tensor2D<T>*>& o, const TimingLayout& layout, std::size_t base = 0) {
  if (base + layout.k() >= o.size()) throw DimensionError("aggregate: batch smaller than 1 + k");
  std::size_t sum = 0;
  for (const auto& w : layout.windows) sum += w.length();
  if (sum != layout.base_active_frames) {
    throw DimensionError("aggregate: window lengths do not add up to the base active length");
  }
  const std::size_t cols = o[base]->cols();
  Tensor2D<T> out(layout.base_active_frames, cols);
  for (const auto& w : layout.windows) {
    const Tensor2D<T>& sub = *o[base + w.batch_index];
    if (sub.cols() != cols || sub.rows() < w.length()) throw DimensionError("aggregate: output shapes do not fit");
    std::copy(sub.data(), sub.data() + w.length() * cols, out.data() + w.start_frame * cols);
  }
  return out;
}

// Base active prefix <- ratio * o_base + (1 - ratio) * o_timing.
template <Real T>
void aggregate_outputs(const std::vector<Tensor2D<T>*>& o, const TimingLayout& layout, double ratio,
                       std::size_t base = 0) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw RangeError("aggregate: ratio must be in [0, 1]");
  const Tensor2D<T> timing = timing_output(o, layout, base);
  if (ratio == 1.0) return;
  Tensor2D<T>& b = *o[base];
  if (b.rows() < layout.base_active_frames) throw DimensionError("aggregate: base shorter than layout");
  const std::size_t n = timing.size();
  if (ratio == 0.0) {
    std::copy(timing.data(), timing.data() + n, b.data());
    return;
  }
  const T r = T(ratio), w = T(1.0 - ratio);
  for (std::size_t e = 0; e < n; ++e) b.data()[e] = r * b.data()[e] + w * timing.data()[e];
}

struct ControlConfig {
  double alpha = 0.2;  // weight kept on the base at cross-attention
  double beta = 0.8;   // self-attention fusion ratio
  // true: base <- (1 - beta) base + beta timing; false: beta weights the base as alpha does.
  bool beta_weights_timing = true;
  bool decouple_enabled = true;
  bool aggregate_self = true;
  bool aggregate_cross = true;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0) || !(beta >= 0.0 && beta <= 1.0)) {
      throw RangeError("control ratios must be in [0, 1]");
    }
  }

  double self_ratio() const { return beta_weights_timing ? 1.0 - beta : beta; }
};

// One base and its sub-latents inside a larger batch.
struct ControlGroup {
  std::size_t base_index = 0;
  TimingLayout layout;
};

template <Real T>
class AttentionControl {
 public:
  AttentionControl(std::vector<ControlGroup> groups, ControlConfig config)
      : groups_(std::move(groups)), config_(config) {
    config_.validate();
    for (const auto& g : groups_) g.layout.validate();
  }

  AttentionControl(const TimingLayout& layout, ControlConfig config)
      : AttentionControl(std::vector<ControlGroup>{{0, layout}}, config) {}

  const ControlConfig& config() const { return config_; }
  const std::vector<ControlGroup>& groups() const { return groups_; }

  // Applies the control action for whatever site and phase the view belongs to.
  void apply(AttentionBatch<T>& view) const {
    const bool cross = view.site.kind == AttentionKind::cross_attn;
    if (view.phase == HookPhase::pre_query) {
      if (!cross || !config_.decouple_enabled) return;
      for (const auto& g : groups_) decouple_queries(view.q, g.layout, g.base_index);
      return;
    }
    if (cross && !config_.aggregate_cross) return;
    if (!cross && !config_.aggregate_self) return;
    const double ratio = cross ? config_.alpha : config_.self_ratio();
    for (const auto& g : groups_) aggregate_outputs(view.out, g.layout, ratio, g.base_index);
  }

  void install(HookSet<T>& hooks, std::size_t layers) {
    if (installed_) throw StateError("attention control is already installed");
    for (std::size_t l = 0; l < layers; ++l) {
      hooks.set({AttentionKind::cross_attn, l}, HookPhase::pre_query, [this](AttentionBatch<T>& v) { apply(v); });
      hooks.set({AttentionKind::cross_attn, l}, HookPhase::post_output, [this](AttentionBatch<T>& v) { apply(v); });
      hooks.set({AttentionKind::self_attn, l}, HookPhase::post_output, [this](AttentionBatch<T>& v) { apply(v); });
    }
    installed_ = &hooks;
    layers_ = layers;
  }

  void uninstall() {
    if (!installed_) return;
    for (std::size_t l = 0; l < layers_; ++l) {
      installed_->clear({AttentionKind::cross_attn, l}, HookPhase::pre_query);
      installed_->clear({AttentionKind::cross_attn, l}, HookPhase::post_output);
      installed_->clear({AttentionKind::self_attn, l}, HookPhase::post_output);
    }
    installed_ = nullptr;
  }

  bool installed() const { return installed_ != nullptr; }

 private:
  std::vector<ControlGroup> groups_;
  ControlConfig config_;
  HookSet<T>* installed_ = nullptr;
  std::size_t layers_ = 0;
};

}  // namespace freeaudio
