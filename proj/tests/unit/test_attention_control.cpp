#include <gtest/gtest.h>

#include "freeaudio/attention_control.hpp"
#include "freeaudio/pipeline.hpp"
#include "support/gradcheck.hpp"

using namespace freeaudio;

namespace {

WindowPlan plan_of(std::vector<std::pair<double, double>> spans, double total,
                   std::vector<std::string> captions = {}) {
  WindowPlan p;
  p.total_s = total;
  p.global_caption = "dog and frying and water";
  for (std::size_t j = 0; j < spans.size(); ++j) {
    const std::string cap = j < captions.size() ? captions[j] : "event" + std::to_string(j);
    p.windows.push_back({spans[j].first, spans[j].second, {cap}, cap});
  }
  return p;
}

struct Batch {
  std::vector<Tensor2D<double>> storage;
  std::vector<Tensor2D<double>*> ptrs;
  explicit Batch(std::vector<Tensor2D<double>> s) : storage(std::move(s)) {
    for (auto& t : storage) ptrs.push_back(&t);
  }
};

Batch random_batch(std::size_t n, std::size_t rows, std::size_t cols, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<Tensor2D<double>> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(random_normal<double>(rows, cols, rng));
  return Batch(std::move(s));
}

DitModel<double> small_model(std::uint64_t seed) {
  DitConfig c = freeaudio::testing::gradcheck_config();
  c.max_frames = 12;
  c.prior_sigma = 0.3;
  DitModel<double> m(c);
  m.initialize(seed, 0.3);
  return m;
}

SamplerConfig<double> quick_sampler(std::uint64_t seed) {
  SamplerConfig<double> s;
  s.steps = 6;
  s.seed = seed;
  s.guidance_scale = 2.0;
  return s;
}

}  // namespace

TEST(Layout, ThreeWindowsMapToFrames) {
  const auto l = layout_from_plan(plan_of({{0, 4}, {4, 8}, {8, 10}}, 10), 25.0);
  ASSERT_EQ(l.k(), 3u);
  EXPECT_EQ(l.windows[0], (LayoutWindow{0, 100, 1, 0}));
  EXPECT_EQ(l.windows[1], (LayoutWindow{100, 200, 2, 1}));
  EXPECT_EQ(l.windows[2], (LayoutWindow{200, 250, 3, 2}));
  EXPECT_EQ(l.base_active_frames, 250u);
  EXPECT_DOUBLE_EQ(l.sub_seconds(0), 4.0);
}

TEST(Layout, FractionalBoundaryRoundsToNearestFrame) {
  const auto l = layout_from_plan(plan_of({{0, 4.02}, {4.02, 10}}, 10), 25.0);
  EXPECT_EQ(l.windows[0].end_frame, 100u);
  const auto m = layout_from_plan(plan_of({{0, 4.03}, {4.03, 10}}, 10), 25.0);
  EXPECT_EQ(m.windows[0].end_frame, 101u);
}

TEST(Layout, SubFrameWindowIsDropped) {
  const auto l = layout_from_plan(plan_of({{0, 4.0}, {4.0, 4.01}, {4.01, 10}}, 10), 25.0);
  ASSERT_EQ(l.k(), 2u);
  EXPECT_EQ(l.windows[1].plan_window, 2u);
  EXPECT_EQ(l.windows[1].batch_index, 2u);
  EXPECT_NO_THROW(l.validate());
}

TEST(Layout, RandomPlansTileThePrefix) {
  SeededRng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const double total = 1.0 + rng.uniform(0.0, 9.0);
    std::vector<double> cuts{0.0, total};
    for (std::size_t i = rng.index(6); i > 0; --i) cuts.push_back(rng.uniform(0.0, total));
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::vector<std::pair<double, double>> spans;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) spans.push_back({cuts[i], cuts[i + 1]});
    const auto l = layout_from_plan(plan_of(spans, total), 25.0);
    std::size_t sum = 0;
    for (const auto& w : l.windows) sum += w.length();
    EXPECT_EQ(sum, l.base_active_frames);
    EXPECT_EQ(l.base_active_frames, seconds_to_frames(total, 25.0));
  }
}

TEST(Layout, PlanLongerThanBaseIsRangeError) {
  EXPECT_THROW(layout_from_plan(plan_of({{0, 12}}, 12), 25.0, 250), RangeError);
}

TEST(Decouple, SubQueriesCopyBaseRows) {
  const auto l = layout_from_plan(plan_of({{0, 0.2}, {0.2, 0.4}}, 0.4), 25.0);  // 5 + 5 frames
  auto b = random_batch(3, 10, 4, 2);
  const Tensor2D<double> base = b.storage[0];
  const Tensor2D<double> tail = b.storage[1];
  decouple_queries(b.ptrs, l);
  EXPECT_EQ(b.storage[0], base);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_EQ(b.storage[1](r, c), base(r, c));
      EXPECT_EQ(b.storage[2](r, c), base(r + 5, c));
      EXPECT_EQ(b.storage[1](r + 5, c), tail(r + 5, c));
    }
  }
  auto small = random_batch(2, 10, 4, 3);
  EXPECT_THROW(decouple_queries(small.ptrs, l), DimensionError);
}

TEST(Aggregate, RatioOneLeavesBaseBitwise) {
  const auto l = layout_from_plan(plan_of({{0, 0.2}, {0.2, 0.4}}, 0.4), 25.0);
  auto b = random_batch(3, 12, 4, 4);
  const auto before = b.storage;
  aggregate_outputs(b.ptrs, l, 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(b.storage[i], before[i]);
}

TEST(Aggregate, RatioZeroIsConcatenation) {
  const auto l = layout_from_plan(plan_of({{0, 0.12}, {0.12, 0.4}}, 0.4), 25.0);  // 3 + 7
  auto b = random_batch(3, 12, 4, 5);
  const auto before = b.storage;
  aggregate_outputs(b.ptrs, l, 0.0);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(b.storage[0](r, c), before[1](r, c));
    for (std::size_t r = 0; r < 7; ++r) EXPECT_EQ(b.storage[0](3 + r, c), before[2](r, c));
    for (std::size_t r = 10; r < 12; ++r) EXPECT_EQ(b.storage[0](r, c), before[0](r, c));
  }
  EXPECT_EQ(b.storage[1], before[1]);
  EXPECT_EQ(b.storage[2], before[2]);
}

TEST(Aggregate, HalfRatioInterpolates) {
  const auto l = layout_from_plan(plan_of({{0, 0.4}}, 0.4), 25.0);
  auto b = random_batch(2, 10, 3, 6);
  const auto before = b.storage;
  aggregate_outputs(b.ptrs, l, 0.5);
  for (std::size_t e = 0; e < 30; ++e) {
    EXPECT_NEAR(b.storage[0].data()[e], 0.5 * (before[0].data()[e] + before[1].data()[e]), 1e-15);
  }
}

TEST(Aggregate, ResultStaysBetweenBaseAndTiming) {
  SeededRng rng(7);
  const auto l = layout_from_plan(plan_of({{0, 0.2}, {0.2, 0.4}}, 0.4), 25.0);
  for (int trial = 0; trial < 100; ++trial) {
    auto b = random_batch(3, 10, 4, 100 + trial);
    const auto before = b.storage;
    const Tensor2D<double> timing = timing_output(b.ptrs, l);
    aggregate_outputs(b.ptrs, l, rng.uniform());
    for (std::size_t e = 0; e < timing.size(); ++e) {
      const double lo = std::min(before[0].data()[e], timing.data()[e]);
      const double hi = std::max(before[0].data()[e], timing.data()[e]);
      EXPECT_GE(b.storage[0].data()[e], lo - 1e-12);
      EXPECT_LE(b.storage[0].data()[e], hi + 1e-12);
    }
  }
  auto b = random_batch(3, 10, 4, 8);
  EXPECT_THROW(aggregate_outputs(b.ptrs, l, 1.5), RangeError);
}

TEST(ControlConfig, BetaSemantics) {
  ControlConfig c;
  c.beta = 0.8;
  EXPECT_DOUBLE_EQ(c.self_ratio(), 0.2);
  c.beta_weights_timing = false;
  EXPECT_DOUBLE_EQ(c.self_ratio(), 0.8);
  c.alpha = -0.1;
  EXPECT_THROW(c.validate(), RangeError);
}

TEST(Install, DoubleInstallIsStateError) {
  const auto l = layout_from_plan(plan_of({{0, 0.48}}, 0.48), 25.0);
  HookSet<double> hooks;
  AttentionControl<double> ctl(l, ControlConfig{});
  ctl.install(hooks, 2);
  EXPECT_EQ(hooks.size(), 6u);
  EXPECT_THROW(ctl.install(hooks, 2), StateError);
  AttentionControl<double> other(l, ControlConfig{});
  EXPECT_THROW(other.install(hooks, 2), StateError);
  ctl.uninstall();
  EXPECT_TRUE(hooks.empty());
  EXPECT_FALSE(ctl.installed());
  EXPECT_NO_THROW(ctl.install(hooks, 2));
}

TEST(Install, InertControlIsTransparent) {
  const auto m = small_model(9);
  const NoiseSchedule s;
  const auto plan = plan_of({{0, 0.2}, {0.2, 0.48}}, 0.48, {"dog", "frying"});
  const auto plain = generate_controlled(m, s, plan, std::nullopt, quick_sampler(10));
  ControlConfig inert;
  inert.decouple_enabled = inert.aggregate_self = inert.aggregate_cross = false;
  const auto ctl = generate_controlled(m, s, plan, inert, quick_sampler(10));
  ASSERT_EQ(ctl.latents.size(), 3u);
  EXPECT_EQ(ctl.latents[0], plain.latents[0]);
  ControlConfig unit;
  unit.alpha = 1.0;
  unit.beta = 0.0;
  unit.decouple_enabled = false;
  EXPECT_EQ(generate_controlled(m, s, plan, unit, quick_sampler(10)).latents[0], plain.latents[0]);
}

TEST(Control, ChangesTheBase) {
  const auto m = small_model(11);
  const NoiseSchedule s;
  const auto plan = plan_of({{0, 0.2}, {0.2, 0.48}}, 0.48, {"dog", "frying"});
  const auto plain = generate_controlled(m, s, plan, std::nullopt, quick_sampler(12));
  const auto ctl = generate_controlled(m, s, plan, ControlConfig{}, quick_sampler(12));
  EXPECT_TRUE(ctl.controlled);
  EXPECT_GT(max_abs_diff(ctl.latents[0], plain.latents[0]), 1e-6);
}

TEST(Control, AggregationDoesNotFeedBackIntoSubLatents) {
  const auto m = small_model(13);
  const NoiseSchedule s;
  const auto plan = plan_of({{0, 0.2}, {0.2, 0.48}}, 0.48, {"dog", "frying"});
  ControlConfig agg_only;
  agg_only.decouple_enabled = false;
  const auto ctl = generate_controlled(m, s, plan, agg_only, quick_sampler(14));
  // The same sub-latents sampled on their own with the same noise streams.
  std::vector<TextCondition<double>> text{m.embed_text("dog"), m.embed_text("frying")};
  std::vector<DurationCondition> durs{{0.2}, {0.28}};
  auto sc = quick_sampler(14);
  sc.noise_streams = {1, 2};
  const auto alone = sample(m, s, text, durs, sc);
  EXPECT_EQ(ctl.latents[1], alone[0]);
  EXPECT_EQ(ctl.latents[2], alone[1]);
}

TEST(Control, SingleFullWindowWithSameCaptionIsIdentityAtCrossAttention) {
  const auto m = small_model(15);
  const NoiseSchedule s;
  auto plan = plan_of({{0, 0.48}}, 0.48);
  plan.windows[0].recaption = plan.global_caption;
  const auto plain = generate_controlled(m, s, plan, std::nullopt, quick_sampler(16));
  ControlConfig c;
  c.alpha = 0.0;
  c.aggregate_self = false;
  const auto ctl = generate_controlled(m, s, plan, c, quick_sampler(16));
  EXPECT_LT(max_abs_diff(ctl.latents[0], plain.latents[0]), 1e-12);
}

TEST(Control, GroupsInOneBatchMatchSeparateRuns) {
  const auto l = layout_from_plan(plan_of({{0, 0.2}, {0.2, 0.4}}, 0.4), 25.0);
  auto joint = random_batch(6, 10, 4, 17);
  Batch a(std::vector<Tensor2D<double>>(joint.storage.begin(), joint.storage.begin() + 3));
  Batch b(std::vector<Tensor2D<double>>(joint.storage.begin() + 3, joint.storage.end()));
  AttentionControl<double> both({{0, l}, {3, l}}, ControlConfig{});
  AttentionControl<double> one(l, ControlConfig{});
  for (auto* batch : {&joint, &a, &b}) {
    AttentionBatch<double> v;
    v.site = {AttentionKind::self_attn, 0};
    v.phase = HookPhase::post_output;
    v.out = batch->ptrs;
    (batch == &joint ? both : one).apply(v);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(joint.storage[i], a.storage[i]);
    EXPECT_EQ(joint.storage[3 + i], b.storage[i]);
  }
}
