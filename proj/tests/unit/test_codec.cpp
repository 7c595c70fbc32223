#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "freeaudio/codec.hpp"
#include "freeaudio/events.hpp"
#include "freeaudio/wav.hpp"

using namespace freeaudio;

namespace {

std::vector<double> random_wave(std::size_t n, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<double> w(n);
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

double energy(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace

TEST(Codec, BasisIsOrthonormal) {
  const Codec codec;
  const auto& b = codec.basis();
  const auto g = matmul_nt(b, b);
  EXPECT_LT(max_abs_diff(g, Tensor2D<double>::identity(b.rows())), 1e-9);
}

TEST(Codec, ZeroWaveformGivesZeroLatent) {
  const Codec codec;
  const auto lat = codec.encode(std::vector<double>(800, 0.0));
  for (double v : lat.data.values()) EXPECT_EQ(v, 0.0);
  for (double v : codec.decode(lat)) EXPECT_EQ(v, 0.0);
}

TEST(Codec, RoundTripOfOneSecondIsExact) {
  const Codec codec;
  const auto w = random_wave(4000, 1);
  const auto lat = codec.encode(w);
  EXPECT_EQ(lat.frames(), 25u);
  EXPECT_DOUBLE_EQ(lat.frame_rate, 25.0);
  const auto back = codec.decode(lat, w.size());
  ASSERT_EQ(back.size(), w.size());
  double m = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) m = std::max(m, std::abs(back[i] - w[i]));
  EXPECT_LT(m, 1e-9);
}

TEST(Codec, PaddedTailIsTrimmedOnDecode) {
  const Codec codec;
  const auto w = random_wave(1000, 2);  // not a multiple of 160
  const auto lat = codec.encode(w);
  EXPECT_EQ(lat.frames(), 7u);
  const auto back = codec.decode(lat, w.size());
  ASSERT_EQ(back.size(), w.size());
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(back[i], w[i], 1e-9);
}

TEST(Codec, BasisToneConcentratesInOneChannel) {
  const Codec codec;
  const std::size_t k = 26;
  std::vector<double> w(4000);
  for (std::size_t n = 0; n < w.size(); ++n) {
    w[n] = 0.5 * std::cos(std::numbers::pi * double(k) * (double(n % 160) + 0.5) / 160.0);
  }
  const auto lat = codec.encode(w);
  double total = 0.0, on = 0.0;
  for (std::size_t c = 0; c < lat.channels(); ++c) {
    for (std::size_t f = 0; f < lat.frames(); ++f) {
      total += lat.data(c, f) * lat.data(c, f);
      if (c == k) on += lat.data(c, f) * lat.data(c, f);
    }
  }
  EXPECT_GT(on / total, 0.99);
}

TEST(Codec, ParsevalEnergyPreserved) {
  const Codec codec;
  for (std::uint64_t seed = 3; seed < 8; ++seed) {
    const auto w = random_wave(160 * 13, seed);
    const auto lat = codec.encode(w);
    EXPECT_NEAR(energy(lat.data.values()) / energy(w), 1.0, 1e-6);
  }
}

TEST(Codec, RejectsBadConfigAndInputs) {
  EXPECT_THROW(Codec(CodecConfig{4000.0, 160, 200, "dct2-orthonormal"}), RangeError);
  EXPECT_THROW(Codec(CodecConfig{4000.0, 160, 160, "wavelet"}), RangeError);
  const Codec codec;
  EXPECT_THROW(codec.encode(std::vector<double>{}), RangeError);
  Latent bad;
  bad.data = Tensor2D<double>(3, 2);
  EXPECT_THROW(codec.decode(bad), DimensionError);
}

TEST(Projection, LiftThenProjectIsIdentityOnModelChannels) {
  const ToyGeometry g;
  const auto p = LatentProjection::even_spaced(g.frame_size, g.model_channels, g.dct_offset, g.dct_stride,
                                               g.latent_scale);
  SeededRng rng(9);
  Latent m;
  m.frame_rate = 25.0;
  m.data = random_normal<double>(16, 10, rng);
  const auto back = p.project(p.lift(m));
  EXPECT_LT(max_abs_diff(back.data, m.data), 1e-15);
  const auto pm = p.matrix();
  EXPECT_LT(max_abs_diff(matmul_nt(pm, pm), Tensor2D<double>::identity(16)), 1e-15);
}

TEST(Projection, SelectedIndicesAreEvenAndDistinct) {
  const ToyGeometry g;
  const auto p = LatentProjection::even_spaced(g.frame_size, g.model_channels, g.dct_offset, g.dct_stride,
                                               g.latent_scale);
  for (std::size_t i = 0; i < p.selected().size(); ++i) {
    EXPECT_EQ(p.selected()[i] % 2, 0u);
    if (i) {
      EXPECT_GT(p.selected()[i], p.selected()[i - 1]);
    }
  }
  EXPECT_LT(p.selected().back(), g.frame_size);
}

TEST(EventClasses, BandsAreDisjointAndOnModelChannels) {
  const ToyGeometry g;
  const auto classes = default_event_classes(g);
  ASSERT_EQ(classes.size(), 8u);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    EXPECT_EQ(classes[i].dct_index, g.dct_offset + g.dct_stride * classes[i].model_channel);
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      EXPECT_TRUE(classes[i].high_hz < classes[j].low_hz || classes[j].high_hz < classes[i].low_hz);
    }
  }
}

TEST(Wav, RoundTripWithinQuantization) {
  const auto w = random_wave(777, 4);
  const auto bytes = encode_wav(w, 4000);
  EXPECT_EQ(bytes.size(), 44u + 2u * 777u);
  const auto d = decode_wav(bytes);
  EXPECT_EQ(d.sample_rate, 4000u);
  ASSERT_EQ(d.samples.size(), w.size());
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(d.samples[i], w[i], 1.0 / 32767.0);
}

TEST(Wav, ClipsOutOfRangeSamples) {
  const std::vector<double> w{2.0, -3.0};
  const auto d = decode_wav(encode_wav(w, 8000));
  EXPECT_DOUBLE_EQ(d.samples[0], 1.0);
  EXPECT_DOUBLE_EQ(d.samples[1], -1.0);
}

TEST(Wav, RejectsGarbage) {
  const std::vector<std::uint8_t> junk{'R', 'I', 'F', 'X', 0, 0, 0, 0, 'W', 'A', 'V', 'E'};
  EXPECT_THROW(decode_wav(junk), FormatError);
  auto bytes = encode_wav(std::vector<double>(10, 0.1), 4000);
  bytes.resize(30);
  EXPECT_THROW(decode_wav(bytes), FormatError);
}

TEST(Frames, RoundHalfUp) {
  EXPECT_EQ(seconds_to_frames(1.25, 2.0), 3u);
  EXPECT_EQ(seconds_to_frames(1.75, 2.0), 4u);
  EXPECT_EQ(seconds_to_frames(4.02, 25.0), 100u);  // 4.02 * 25 is just below 100.5 in binary
  EXPECT_EQ(seconds_to_frames(4.0, 25.0), 100u);
  EXPECT_EQ(seconds_to_frames(0.02, 25.0), 1u);
  EXPECT_EQ(seconds_to_frames(0.0, 25.0), 0u);
}
