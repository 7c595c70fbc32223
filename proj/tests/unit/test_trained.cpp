#include <gtest/gtest.h>

#include <cstdlib>

#include "freeaudio/app.hpp"

using namespace freeaudio;

namespace {

std::string checkpoint_path() {
  const char* p = std::getenv("FREEAUDIO_TOY_CHECKPOINT");
  return p ? p : "";
}

class Trained : public ::testing::Test {
 protected:
  void SetUp() override {
    if (checkpoint_path().empty()) GTEST_SKIP() << "FREEAUDIO_TOY_CHECKPOINT not set";
  }
  const ToyWorld world;
};

std::vector<double> generate_wave(const LoadedModel& lm, const ToyWorld& world, const std::string& caption,
                                  double seconds, std::uint64_t seed) {
  SamplerConfig<float> sc;
  sc.steps = 50;
  sc.seed = seed;
  sc.guidance_scale = 3.0f;
  const auto r = generate_controlled(lm.model, lm.schedule, make_plan(caption, "", seconds), std::nullopt, sc);
  return world.to_waveform(r.latents[0], seconds);
}

}  // namespace

TEST_F(Trained, MetadataWithinBudget) {
  const auto ck = load_checkpoint<float>(checkpoint_path());
  ck.config.validate();
  EXPECT_EQ(ck.config.channels, world.model_config().channels);
  EXPECT_GT(ck.metadata.value("steps_run", 0), 0);
  const double secs = ck.metadata.value("seconds", -1.0);
  EXPECT_GE(secs, 0.0);
  EXPECT_LE(secs, 900.0);
}

// At low noise the predicted clean latent is far closer to the truth than
// the all-zero guess.
TEST_F(Trained, DenoisesAtLowNoise) {
  const auto lm = load_model(checkpoint_path());
  const auto clips = synth_dataset(world.classes(), 8, 4040);
  SeededRng rng(3);
  const std::size_t frames = lm.model.config().max_frames, ch = lm.model.config().channels;
  double err = 0.0, ref = 0.0;
  for (const auto& c : clips) {
    const auto x0 = world.to_model<float>(c.waveform, frames);
    const auto eps = random_normal<float>(frames, ch, rng);
    const std::size_t t = 50;
    const auto xt = lm.schedule.add_noise(x0, eps, t);
    const std::vector<Tensor2D<float>> xs{xt};
    const auto e = guided_forward(lm.model, lm.schedule, xs, t, {lm.model.embed_text(c.caption)},
                                  {DurationCondition{c.duration_s}}, 1.0, (const HookSet<float>*)nullptr);
    const auto x0h = lm.schedule.predict_x0(xt, e[0], t);
    const std::size_t active = seconds_to_frames(c.duration_s, 25.0);
    for (std::size_t f = 0; f < active; ++f) {
      for (std::size_t k = 0; k < ch; ++k) {
        const double d = x0h(f, k) - x0(f, k);
        err += d * d;
        ref += double(x0(f, k)) * x0(f, k);
      }
    }
  }
  EXPECT_LT(std::sqrt(err / ref), 0.5);
}

TEST_F(Trained, CaptionedClassIsHeard) {
  const auto lm = load_model(checkpoint_path());
  std::size_t heard = 0;
  for (std::size_t c = 0; c < world.classes().size(); ++c) {
    const auto wave = generate_wave(lm, world, world.classes()[c].name, 4.0, 5);
    for (const auto& e : detect_events(wave, world.classes(), world.sample_rate())) {
      if (e.class_index == c) {
        ++heard;
        break;
      }
    }
  }
  EXPECT_GE(heard, world.classes().size() - 2);
}

TEST_F(Trained, SeedDeterminesOutput) {
  const auto lm = load_model(checkpoint_path());
  const auto a = generate_wave(lm, world, "dog", 2.0, 8);
  const auto b = generate_wave(lm, world, "dog", 2.0, 8);
  const auto c = generate_wave(lm, world, "dog", 2.0, 9);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(a.size(), 8000u);
}

TEST_F(Trained, ControlledGenerationKeepsShapes) {
  const auto lm = load_model(checkpoint_path());
  const auto plan = make_plan("dog then owl", "Dog. <0,3>, Owl. <3,6>", 6.0);
  SamplerConfig<float> sc;
  sc.steps = 10;
  sc.seed = 1;
  const auto r = generate_controlled(lm.model, lm.schedule, plan, control_config(0.2, 0.8), sc);
  ASSERT_TRUE(r.controlled);
  ASSERT_EQ(r.latents.size(), 1 + plan.k());
  for (const auto& l : r.latents) {
    for (float v : l.values()) ASSERT_TRUE(std::isfinite(v));
  }
  EXPECT_EQ(world.to_waveform(r.latents[0], 6.0).size(), 24000u);
}
