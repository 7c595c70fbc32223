#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "freeaudio/eval.hpp"

using namespace freeaudio;

namespace {

const ToyGeometry kGeom;

std::vector<double> tone_clip(const EventClass& c, double onset, double offset, double total,
                              double amplitude = 0.5) {
  std::vector<double> wave(seconds_to_samples(total, kGeom.sample_rate), 0.0);
  SynthEvent e;
  e.annotation = {0, onset, offset};
  e.amplitude = amplitude;
  render_event(wave, c, e, kGeom);
  return wave;
}

EventAnnotation ev(std::size_t c, double a, double b) { return {c, a, b}; }

// Per-class presence F1 from a clips x classes truth table, macro over
// classes that appear in the reference.
double brute_force_at(const std::vector<std::vector<EventAnnotation>>& ref,
                      const std::vector<std::vector<EventAnnotation>>& hyp, std::size_t classes) {
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    int tp = 0, fp = 0, fn = 0;
    bool any = false;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      bool r = false, h = false;
      for (const auto& a : ref[i]) r = r || a.class_index == c;
      for (const auto& a : hyp[i]) h = h || a.class_index == c;
      any = any || r;
      tp += r && h;
      fp += !r && h;
      fn += r && !h;
    }
    if (!any) continue;
    ++present;
    sum += 2.0 * tp / double(2 * tp + fp + fn);
  }
  return present == 0 ? 1.0 : sum / present;
}

}  // namespace

TEST(Synth, DatasetIsDeterministicAndAnnotationsFit) {
  const auto classes = default_event_classes();
  const auto a = synth_dataset(classes, 20, 7);
  const auto b = synth_dataset(classes, 20, 7);
  const auto c = synth_dataset(classes, 20, 8);
  ASSERT_EQ(a.size(), 20u);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].waveform, b[i].waveform);
    EXPECT_EQ(a[i].caption, b[i].caption);
    EXPECT_EQ(a[i].timing_text, b[i].timing_text);
    differs = differs || a[i].waveform != c[i].waveform;
    EXPECT_EQ(a[i].waveform.size(), seconds_to_samples(a[i].duration_s, kGeom.sample_rate));
    EXPECT_GE(a[i].duration_s, 1.0 - 1e-9);
    EXPECT_LE(a[i].duration_s, 10.0 + 1e-9);
    EXPECT_FALSE(a[i].annotations.empty());
    for (const auto& an : a[i].annotations) {
      EXPECT_GE(an.onset_s, 0.0);
      EXPECT_LE(an.offset_s, a[i].duration_s + 1e-9);
      EXPECT_LT(an.onset_s, an.offset_s);
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Synth, TimingTextParsesBackToAnnotations) {
  const auto classes = default_event_classes();
  for (const auto& clip : synth_dataset(classes, 10, 3)) {
    const auto prompts = parse_prompts(clip.timing_text);
    ASSERT_EQ(prompts.size(), clip.annotations.size());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      EXPECT_EQ(prompts[i].caption, classes[clip.annotations[i].class_index].name);
      EXPECT_NEAR(prompts[i].start_s, clip.annotations[i].onset_s, 1e-9);
      EXPECT_NEAR(prompts[i].end_s, clip.annotations[i].offset_s, 1e-9);
    }
  }
}

TEST(Detector, SilenceHasNoEvents) {
  const auto classes = default_event_classes();
  const std::vector<double> silence(40000, 0.0);
  EXPECT_TRUE(detect_events(silence, classes, kGeom.sample_rate).empty());
  EXPECT_TRUE(detect_events(std::vector<double>{}, classes, kGeom.sample_rate).empty());
}

TEST(Detector, SingleToneOnsetWithinOneHop) {
  const auto classes = default_event_classes();
  const double hop_s = 200.0 / kGeom.sample_rate;
  for (std::size_t c : {std::size_t(0), std::size_t(1), std::size_t(7)}) {
    const auto wave = tone_clip(classes[c], 1.3, 3.7, 5.0);
    const auto found = detect_events(wave, classes, kGeom.sample_rate);
    ASSERT_EQ(found.size(), 1u) << classes[c].name;
    EXPECT_EQ(found[0].class_index, c);
    EXPECT_LT(std::abs(found[0].onset_s - 1.3), hop_s);
    EXPECT_LT(std::abs(found[0].offset_s - 3.7), hop_s);
  }
}

TEST(Detector, OverlappingBandsGiveTwoEvents) {
  const auto classes = default_event_classes();
  auto wave = tone_clip(classes[2], 0.5, 3.0, 4.0);
  const auto second = tone_clip(classes[5], 1.5, 4.0, 4.0);
  for (std::size_t i = 0; i < wave.size(); ++i) wave[i] += second[i];
  const auto found = detect_events(wave, classes, kGeom.sample_rate);
  ASSERT_EQ(found.size(), 2u);
  EXPECT_EQ(found[0].class_index, 2u);
  EXPECT_EQ(found[1].class_index, 5u);
  EXPECT_EQ(eb_score({ev(2, 0.5, 3.0), ev(5, 1.5, 4.0)}, found), 1.0);
}

TEST(Detector, ShortBlipBelowMinimumLengthIsIgnored) {
  const auto classes = default_event_classes();
  const auto wave = tone_clip(classes[0], 1.0, 1.1, 3.0);
  EXPECT_TRUE(detect_events(wave, classes, kGeom.sample_rate).empty());
}

TEST(Detector, ClosedLoopOnSyntheticData) {
  const auto classes = default_event_classes();
  const auto data = synth_dataset(classes, 40, 11);
  std::vector<std::vector<EventAnnotation>> ref, hyp;
  for (const auto& clip : data) {
    ref.push_back(clip.annotations);
    hyp.push_back(detect_events(clip.waveform, classes, kGeom.sample_rate));
  }
  EXPECT_EQ(eb_score(ref, hyp), 1.0);
  EXPECT_EQ(at_score(ref, hyp), 1.0);
}

TEST(EbScore, Examples) {
  const std::vector<EventAnnotation> ref = {ev(0, 1.0, 3.0), ev(1, 4.0, 6.0)};
  EXPECT_EQ(eb_score(ref, ref), 1.0);
  EXPECT_EQ(eb_score(ref, std::vector<EventAnnotation>{}), 0.0);
  EXPECT_EQ(eb_score(std::vector<EventAnnotation>{}, std::vector<EventAnnotation>{}), 1.0);
  // One hypothesis on time, the other shifted far beyond the collar.
  const std::vector<EventAnnotation> hyp = {ev(0, 1.0, 3.0), ev(1, 5.0, 7.0)};
  EXPECT_DOUBLE_EQ(eb_score(ref, hyp), 0.5);
}

TEST(EbScore, CollarAndOffsetTolerance) {
  const std::vector<EventAnnotation> ref = {ev(0, 1.0, 6.0)};
  EXPECT_EQ(eb_score(ref, {ev(0, 1.19, 6.0)}), 1.0);
  EXPECT_EQ(eb_score(ref, {ev(0, 1.21, 6.0)}), 0.0);
  // Offset tolerance is 20% of a 5 s event.
  EXPECT_EQ(eb_score(ref, {ev(0, 1.0, 6.99)}), 1.0);
  EXPECT_EQ(eb_score(ref, {ev(0, 1.0, 7.01)}), 0.0);
  EXPECT_EQ(eb_score(ref, {ev(1, 1.0, 6.0)}), 0.0);
}

TEST(EbScore, OneToOneMatching) {
  const std::vector<EventAnnotation> ref = {ev(0, 1.0, 2.0)};
  const std::vector<EventAnnotation> hyp = {ev(0, 1.0, 2.0), ev(0, 1.05, 2.0)};
  const auto m = match_events(ref, hyp);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 0u);
  EXPECT_NEAR(eb_score(ref, hyp), 2.0 / 3.0, 1e-12);
}

TEST(EbScore, PoolsCountsOverClips) {
  const std::vector<std::vector<EventAnnotation>> ref = {{ev(0, 0, 1)}, {ev(1, 0, 1), ev(2, 2, 3)}};
  const std::vector<std::vector<EventAnnotation>> hyp = {{ev(0, 0, 1)}, {}};
  EXPECT_NEAR(eb_score(ref, hyp), 2.0 / 4.0, 1e-12);
  EXPECT_THROW(eb_score(ref, {{}}), DimensionError);
}

TEST(AtScore, MatchesBruteForceOnRandomSets) {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.45);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t clips = 1 + rng() % 6;
    std::vector<std::vector<EventAnnotation>> ref(clips), hyp(clips);
    for (std::size_t i = 0; i < clips; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        if (coin(rng)) ref[i].push_back(ev(c, 0.0, 1.0));
        if (coin(rng)) hyp[i].push_back(ev(c, 2.0, 4.0));
        if (coin(rng) && coin(rng)) hyp[i].push_back(ev(c, 5.0, 6.0));
      }
    }
    EXPECT_NEAR(at_score(ref, hyp), brute_force_at(ref, hyp, 3), 1e-12) << trial;
  }
}

TEST(AtScore, IgnoresTimingAndPenalisesMissedClass) {
  const std::vector<std::vector<EventAnnotation>> ref = {{ev(0, 0, 1), ev(1, 0, 1)}, {ev(0, 2, 3)}};
  const std::vector<std::vector<EventAnnotation>> shifted = {{ev(0, 5, 9), ev(1, 5, 9)}, {ev(0, 0, 1)}};
  EXPECT_EQ(at_score(ref, shifted), 1.0);
  const std::vector<std::vector<EventAnnotation>> never_one = {{ev(0, 0, 1)}, {ev(0, 2, 3)}};
  EXPECT_DOUBLE_EQ(at_score(ref, never_one), 0.5);
}

TEST(Frechet, AnalyticMomentCases) {
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd mu_a = Eigen::VectorXd::Zero(3), mu_b = Eigen::VectorXd::Zero(3);
  mu_b(1) = 0.7;
  EXPECT_NEAR(frechet_from_moments(mu_a, id, mu_b, id).distance, 0.49, 1e-10);
  EXPECT_NEAR(frechet_from_moments(mu_a, id, mu_a, id).distance, 0.0, 1e-12);
  // Diagonal covariances: sum of squared standard deviation gaps.
  Eigen::MatrixXd da = Eigen::MatrixXd::Zero(3, 3), db = Eigen::MatrixXd::Zero(3, 3);
  const double sa[] = {1.0, 4.0, 0.25}, sb[] = {9.0, 1.0, 0.25};
  double oracle = 0.49;
  for (int i = 0; i < 3; ++i) {
    da(i, i) = sa[i];
    db(i, i) = sb[i];
    oracle += std::pow(std::sqrt(sa[i]) - std::sqrt(sb[i]), 2);
  }
  const auto r = frechet_from_moments(mu_a, da, mu_b, db);
  EXPECT_NEAR(r.distance, oracle, 1e-9);
  EXPECT_FALSE(r.ridge_applied);
}

TEST(Frechet, SampledSetsAndSymmetry) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  const double delta = 1.5;
  std::vector<FeatureVector> a, b;
  for (int i = 0; i < 20000; ++i) {
    a.push_back({n01(rng), n01(rng)});
    b.push_back({n01(rng) + delta, n01(rng)});
  }
  const double d_ab = frechet_distance(a, b).distance;
  EXPECT_NEAR(d_ab, delta * delta, 0.1);
  EXPECT_NEAR(d_ab, frechet_distance(b, a).distance, 1e-9);
  EXPECT_LT(frechet_distance(a, a).distance, 1e-8);
}

TEST(Frechet, RidgeForSingularCovariance) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  std::vector<FeatureVector> a, b;
  for (int i = 0; i < 50; ++i) {
    const double x = n01(rng), y = n01(rng);
    a.push_back({x, x, n01(rng)});
    b.push_back({y, n01(rng), n01(rng)});
  }
  const auto r = frechet_distance(a, b);
  EXPECT_TRUE(r.ridge_applied);
  EXPECT_TRUE(std::isfinite(r.distance));
  EXPECT_FALSE(frechet_distance(b, b).ridge_applied);
}

TEST(Frechet, RejectsTooFewSamples) {
  const std::vector<FeatureVector> three = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  std::vector<FeatureVector> four = three;
  four.push_back({0, 0, 1});
  EXPECT_THROW(frechet_distance(three, four), RangeError);
  EXPECT_THROW(frechet_distance({}, four), RangeError);
  EXPECT_NO_THROW(frechet_distance(four, four));
  std::vector<FeatureVector> wide(5, FeatureVector{0, 0});
  EXPECT_THROW(frechet_distance(four, wide), DimensionError);
}

TEST(Features, ShapeAndSilence) {
  const std::vector<double> silence(4000, 0.0);
  const auto f = clip_features(silence, kGeom.sample_rate);
  ASSERT_EQ(f.size(), 16u);
  for (double v : f) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(clip_features(std::vector<double>(399, 0.0), kGeom.sample_rate), RangeError);
}

TEST(Features, ToneLightsItsBand) {
  const auto classes = default_event_classes();
  const auto wave = tone_clip(classes[3], 0.0, 2.0, 2.0);
  const auto f = clip_features(wave, kGeom.sample_rate);
  const double hz = classes[3].center_hz(kGeom.sample_rate, kGeom.frame_size);
  const auto band = std::size_t(hz / (kGeom.sample_rate / 2.0 / 8.0));
  for (std::size_t b = 0; b < 8; ++b) {
    if (b != band) {
      EXPECT_LT(f[b], 0.1 * f[band]) << b;
    }
  }
}

TEST(IntraCosine, ConstantContentScoresOne) {
  // 600 Hz repeats with the same phase every 200 samples, so every window is identical.
  std::vector<double> wave(seconds_to_samples(30.0, kGeom.sample_rate));
  for (std::size_t n = 0; n < wave.size(); ++n) {
    wave[n] = 0.4 * std::cos(2.0 * std::numbers::pi * 600.0 * double(n) / kGeom.sample_rate);
  }
  EXPECT_NEAR(intra_cosine(wave, kGeom.sample_rate), 1.0, 1e-6);
}

TEST(IntraCosine, DisjointHalvesScoreLow) {
  const auto classes = default_event_classes();
  auto wave = tone_clip(classes[0], 0.0, 10.0, 20.0);
  const auto later = tone_clip(classes[6], 10.0, 20.0, 20.0);
  for (std::size_t i = 0; i < wave.size(); ++i) wave[i] += later[i];
  EXPECT_LT(intra_cosine(wave, kGeom.sample_rate, 10.0, 10.0), 0.5);
}

TEST(IntraCosine, InvariantToGain) {
  const auto data = synth_dataset(default_event_classes(), 3, 4,
                                  SynthOptions{.min_seconds = 20.0, .max_seconds = 20.0});
  for (const auto& clip : data) {
    std::vector<double> loud = clip.waveform;
    for (double& v : loud) v *= 3.5;
    EXPECT_NEAR(intra_cosine(clip.waveform, kGeom.sample_rate), intra_cosine(loud, kGeom.sample_rate), 1e-9);
  }
}

TEST(IntraCosine, RejectsShortClips) {
  const std::vector<double> short_clip(seconds_to_samples(14.9, kGeom.sample_rate), 0.1);
  EXPECT_THROW(intra_cosine(short_clip, kGeom.sample_rate), RangeError);
  EXPECT_THROW(intra_cosine(short_clip, kGeom.sample_rate, 0.0, 5.0), RangeError);
}

TEST(Report, FormatsRows) {
  const std::string s = format_metrics({{"Eb", 0.5, "full"}, {"At", 1.0, "full"}});
  EXPECT_EQ(s, "metric\tvalue\tconfig\nEb\t0.500000\tfull\nAt\t1.000000\tfull\n");
}
