#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "protoseg/encoder.hpp"
#include "test_util.hpp"

using namespace protoseg;
using protoseg::testing::random_volume;

namespace {

EncoderConfig tiny(std::uint64_t seed) {
  EncoderConfig c;
  c.levels = 1;
  c.base_channels = 3;
  c.feature_dim = 2;
  c.seed = seed;
  return c;
}

Tensor random_tensor(int channels, Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor t(channels, d);
  for (double& v : t.data()) v = g(rng);
  return t;
}

double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

// Central-difference gradient of <forward(p, x), c> with respect to every parameter.
Parameters numeric_gradient(const Parameters& params, const Tensor& x, const Tensor& c, double h) {
  Parameters g = params.zeros_like();
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    for (std::size_t j = 0; j < params.tensors[t].values.size(); ++j) {
      Parameters p = params;
      p.tensors[t].values[j] += h;
      const double up = inner(forward(p, x), c);
      p.tensors[t].values[j] -= 2 * h;
      const double down = inner(forward(p, x), c);
      g.tensors[t].values[j] = (up - down) / (2 * h);
    }
  }
  return g;
}

}  // namespace

TEST(EncoderParams, DeterministicInSeed) {
  EXPECT_EQ(init_params(tiny(4)), init_params(tiny(4)));
  EXPECT_NE(init_params(tiny(4)), init_params(tiny(5)));
}

TEST(EncoderParams, SingleLevelHasNoResampling) {
  for (const auto& t : init_params(tiny(0)).tensors) {
    EXPECT_EQ(t.name.find("down"), std::string::npos) << t.name;
    EXPECT_EQ(t.name.find("up"), std::string::npos) << t.name;
  }
}

TEST(EncoderParams, DefaultCountByHand) {
  // Channels 8, 16, 32. A block is 27*cin*cout weights + cout bias + 2*cout norm affine.
  //   enc0 (1->8): 240
  //   level 1: down 8->16 3504, enc 16->16 6960, up 16->8 (8*16*8 + 8) 1032, dec 16->8 3480
  //   level 2: down 16->32 13920, enc 32->32 27744, up 32->16 4112, dec 32->16 13872
  //   head 8->16: 144
  const std::size_t by_hand = 240 + (3504 + 6960 + 1032 + 3480) + (13920 + 27744 + 4112 + 13872) + 144;
  EXPECT_EQ(by_hand, 75008u);
  EXPECT_EQ(init_params(EncoderConfig{}).count(), by_hand);
  EXPECT_EQ(expected_parameter_count(EncoderConfig{}), by_hand);
}

TEST(EncoderParams, CountMatchesClosedFormAcrossConfigs) {
  for (int levels = 1; levels <= 4; ++levels)
    for (bool norm : {false, true}) {
      EncoderConfig c;
      c.levels = levels;
      c.base_channels = 2;
      c.feature_dim = 3;
      c.instance_norm = norm;
      EXPECT_EQ(init_params(c).count(), expected_parameter_count(c));
    }
}

TEST(EncoderParams, InvalidConfigRejected) {
  EncoderConfig c;
  c.levels = 0;
  EXPECT_THROW(init_params(c), Error);
  c = EncoderConfig{};
  c.feature_dim = 0;
  EXPECT_THROW(init_params(c), Error);
}

TEST(EncoderParams, VectorOps) {
  Parameters a = init_params(tiny(1));
  const Parameters b = init_params(tiny(2));
  const double ab = a.dot(b), aa = a.squared_norm();
  Parameters c = a;
  c.add_scaled(b, 2.0);
  EXPECT_NEAR(c.dot(a), aa + 2.0 * ab, 1e-9);
  c.scale(0.0);
  EXPECT_EQ(c.squared_norm(), 0.0);
  EXPECT_TRUE(a.same_layout(b));
  EXPECT_TRUE(a.all_finite());
  a.tensors[0].values[0] = std::nan("");
  EXPECT_FALSE(a.all_finite());
}

TEST(EncoderForward, ShapeContract) {
  EncoderConfig c;
  c.feature_dim = 16;
  const FeatureMap f = forward(init_params(c), random_volume({16, 16, 8}, 1));
  EXPECT_EQ(f.channels(), 16);
  EXPECT_EQ(f.dims(), (Dims{16, 16, 8}));
}

TEST(EncoderForward, ShapePreservedForAllLevels) {
  for (int levels = 1; levels <= 3; ++levels) {
    EncoderConfig c;
    c.levels = levels;
    c.base_channels = 2;
    c.feature_dim = 4;
    const Dims d{8, 4, 4};
    EXPECT_EQ(forward(init_params(c), random_volume(d, 2)).dims(), d);
  }
}

TEST(EncoderForward, IndivisiblePatchRejected) {
  EncoderConfig c;
  c.levels = 3;
  EXPECT_THROW(forward(init_params(c), random_volume({16, 16, 6}, 1)), Error);
}

TEST(EncoderForward, ZeroInputWithoutNormGivesZero) {
  EncoderConfig c;
  c.instance_norm = false;
  c.levels = 2;
  const FeatureMap f = forward(init_params(c), Volume3D(Dims{8, 8, 4}));
  for (double v : f.data()) EXPECT_EQ(v, 0.0);
}

TEST(EncoderForward, BitwiseDeterministic) {
  const Parameters p = init_params(EncoderConfig{});
  const Volume3D x = random_volume({8, 8, 4}, 3);
  EXPECT_EQ(forward(p, x), forward(p, x));
}

TEST(EncoderForward, NonFiniteInputRejected) {
  Volume3D x(Dims{4, 4, 4});
  x[5] = std::nanf("");
  EXPECT_THROW(forward(init_params(tiny(0)), x), Error);
}

TEST(EncoderBackward, ZeroCotangentGivesZeroGradient) {
  const Parameters p = init_params(tiny(3));
  const Tensor x = random_tensor(1, {4, 4, 2}, 1);
  const EncoderGradient g = backward(p, x, Tensor(2, {4, 4, 2}));
  EXPECT_EQ(g.params.squared_norm(), 0.0);
}

TEST(EncoderBackward, LinearInCotangent) {
  const Parameters p = init_params(tiny(3));
  const Tensor x = random_tensor(1, {4, 4, 2}, 1);
  const Tensor c = random_tensor(2, {4, 4, 2}, 2);
  Tensor c3 = c;
  for (double& v : c3.data()) v *= 3.0;
  const EncoderGradient g1 = backward(p, x, c), g3 = backward(p, x, c3);
  Parameters diff = g3.params;
  diff.add_scaled(g1.params, -3.0);
  EXPECT_LE(std::sqrt(diff.squared_norm()), 1e-10 * std::sqrt(g3.params.squared_norm()));
}

class EncoderGradCheck : public ::testing::TestWithParam<int> {};

TEST_P(EncoderGradCheck, MatchesCentralDifferences) {
  const int levels = GetParam();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    EncoderConfig cfg = tiny(seed);
    cfg.levels = levels;
    cfg.base_channels = 2;
    Parameters p = init_params(cfg);
    std::mt19937_64 rng(seed + 50);
    std::normal_distribution<double> g(0.0, 0.3);
    for (auto& t : p.tensors)
      if (!t.name.ends_with(".weight"))
        for (double& v : t.values) v += g(rng);
    const Dims d = levels == 1 ? Dims{4, 4, 2} : Dims{4, 4, 4};
    const Tensor x = random_tensor(1, d, seed);
    const Tensor c = random_tensor(2, d, seed + 9);
    const EncoderGradient analytic = backward(p, x, c);
    const Parameters numeric = numeric_gradient(p, x, c, 1e-4);
    for (std::size_t t = 0; t < p.tensors.size(); ++t)
      for (std::size_t j = 0; j < p.tensors[t].values.size(); ++j) {
        const double a = analytic.params.tensors[t].values[j], n = numeric.tensors[t].values[j];
        EXPECT_LE(std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}), 1e-3)
            << p.tensors[t].name << "[" << j << "] seed " << seed;
      }
    // Input gradient, spot-checked on a few voxels.
    for (std::size_t v = 0; v < x.size(); v += 5) {
      Tensor xp = x, xm = x;
      xp.data()[v] += 1e-4;
      xm.data()[v] -= 1e-4;
      const double n = (inner(forward(p, xp), c) - inner(forward(p, xm), c)) / 2e-4;
      const double a = analytic.input.data()[v];
      EXPECT_LE(std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}), 1e-3) << "input " << v;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Levels, EncoderGradCheck, ::testing::Values(1, 2));
