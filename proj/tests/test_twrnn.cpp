#include <random>

#include <gtest/gtest.h>

#include "spaformer/twrnn.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace spaformer {
namespace {

using testing::check_gradients;
using testing::random_projection;
using testing::random_tensor;

bool vertical(ScanDirection d) { return d == ScanDirection::up || d == ScanDirection::down; }
bool reversed(ScanDirection d) { return d == ScanDirection::up || d == ScanDirection::left; }

TEST(DirectionalScan, ZeroKernelIsRelu) {
  std::mt19937_64 rng(1);
  const Tensor<double> f = random_tensor(Shape{2, 3, 4, 5}, rng);
  const Tensor<double> g(Shape{3, 3, 1, 1});
  for (ScanDirection d : kScanDirections) {
    const auto h = directional_scan(constant(f), constant(g), d).value();
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(h[i], std::max(f[i], 0.0)) << to_string(d);
  }
}

TEST(DirectionalScan, HandRecurrenceLeftToRight) {
  const Tensor<double> f(Shape{1, 1, 1, 3}, {1.0, 2.0, 3.0});
  const Tensor<double> g(Shape{1, 1, 1, 1}, 1.0);
  const auto h = directional_scan(constant(f), constant(g), ScanDirection::right).value();
  EXPECT_EQ(h[0], 1.0);
  EXPECT_EQ(h[1], 3.0);
  EXPECT_EQ(h[2], 6.0);
  // the opposite direction accumulates from the far end
  const auto back = directional_scan(constant(f), constant(g), ScanDirection::left).value();
  EXPECT_EQ(back[0], 6.0);
  EXPECT_EQ(back[1], 5.0);
  EXPECT_EQ(back[2], 3.0);
}

TEST(DirectionalScan, TransposeSymmetry) {
  std::mt19937_64 rng(2);
  const Tensor<double> f = random_tensor(Shape{2, 3, 4, 6}, rng);
  const Tensor<double> g = random_tensor(Shape{3, 3, 1, 1}, rng, -0.5, 0.5);
  const auto ft = ops::transpose_hw(constant(f));
  const std::pair<ScanDirection, ScanDirection> pairs[] = {{ScanDirection::up, ScanDirection::left},
                                                           {ScanDirection::down, ScanDirection::right}};
  for (const auto& [vert, horiz] : pairs) {
    const auto a = directional_scan(constant(f), constant(g), vert).value();
    const auto b = ops::transpose_hw(directional_scan(ft, constant(g), horiz)).value();
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  }
}

TEST(DirectionalScan, MatchesScalarRecurrenceOnSmallShapes) {
  std::mt19937_64 rng(3);
  for (std::size_t c = 1; c <= 2; ++c)
    for (std::size_t h = 1; h <= 4; ++h)
      for (std::size_t w = 1; w <= 4; ++w) {
        const Tensor<double> f = random_tensor(Shape{1, c, h, w}, rng);
        const Tensor<double> g = random_tensor(Shape{c, c, 1, 1}, rng);
        for (ScanDirection d : kScanDirections) {
          const auto got = directional_scan(constant(f), constant(g), d).value();
          const auto want = oracle::scan(f, g, vertical(d), reversed(d));
          for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-6) << to_string(d);
        }
      }
}

TEST(DirectionalScan, RejectsKernelOfWrongWidth) {
  EXPECT_THROW(directional_scan(constant(Tensor<double>(Shape{1, 2, 3, 3})), constant(Tensor<double>(Shape{3, 3, 1, 1})),
                                ScanDirection::up),
               ContractViolation);
}

TEST(DirectionalScan, GradientsAllDirections) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const auto f = leaf(random_tensor(Shape{1, 2, 4, 3}, rng));
    const auto g = leaf(random_tensor(Shape{2, 2, 1, 1}, rng, -0.6, 0.6));
    for (ScanDirection d : kScanDirections) {
      const auto r = check_gradients([&] { return random_projection(directional_scan(f, g, d), seed); },
                                     {{"f", f}, {"g", g}});
      EXPECT_LT(r.relative_error, 1e-3) << to_string(d) << " seed " << seed;
    }
  }
}

// Fills a wheel so each direction is memoryless and the mix averages the four
// scan outputs.
template <typename Scalar>
void make_degenerate(DirectionalWeights<Scalar>& w) {
  for (ScanDirection d : kScanDirections) {
    Parameter<Scalar> k = w.kernel(d);  // copies share storage
    k.value().set_zero();
  }
  auto& mix = w.mix.value();
  const std::size_t c = mix.shape().n;
  mix.set_zero();
  for (std::size_t o = 0; o < c; ++o)
    for (std::size_t k = 0; k < 4; ++k) mix[o * 4 * c + k * c + o] = Scalar(0.25);
}

TEST(TwoWheelPass, DegenerateWeightsComposeRelu) {
  ParameterSet<double> set;
  Initializer<double> init(set, 4);
  auto p = make_twrnn(init, "tw", 3);
  make_degenerate(p.wheels.first);
  make_degenerate(p.wheels.second);
  std::mt19937_64 rng(5);
  const Tensor<double> x = random_tensor(Shape{2, 3, 4, 4}, rng);
  const auto y = two_wheel_pass(constant(x), p.wheels).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], std::max(x[i], 0.0), 1e-12);
}

TEST(TwoWheelPass, SinglePixelIsMixOfRelu) {
  ParameterSet<double> set;
  Initializer<double> init(set, 6);
  const auto p = make_twrnn(init, "tw", 2);
  const Tensor<double> x(Shape{1, 2, 1, 1}, {0.7, -0.3});
  auto wheel = [](const std::vector<double>& in, const Tensor<double>& mix) {
    const std::size_t c = in.size();
    std::vector<double> out(c, 0.0);
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t j = 0; j < c; ++j) out[o] += mix[o * 4 * c + k * c + j] * std::max(in[j], 0.0);
    return out;
  };
  const auto want = wheel(wheel({0.7, -0.3}, p.wheels.first.mix.value()), p.wheels.second.mix.value());
  const auto got = two_wheel_pass(constant(x), p.wheels).value();
  EXPECT_NEAR(got[0], want[0], 1e-12);
  EXPECT_NEAR(got[1], want[1], 1e-12);
}

TEST(TwoWheelPass, GradientsOfAllDirectionalWeights) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ParameterSet<double> set;
    Initializer<double> init(set, seed);
    const auto p = make_twrnn(init, "tw", 2);
    std::mt19937_64 rng(seed + 20);
    const auto x = leaf(random_tensor(Shape{1, 2, 3, 3}, rng));
    std::vector<std::pair<std::string, Var<double>>> leaves{{"x", x}};
    for (auto& q : set)
      if (q.name().find(".wheel") != std::string::npos) leaves.emplace_back(q.name(), q.var());
    ASSERT_EQ(leaves.size(), 11u);
    const auto r = check_gradients([&] { return random_projection(two_wheel_pass(x, p.wheels), seed); }, leaves);
    EXPECT_LT(r.relative_error, 1e-3) << "seed " << seed << " worst " << r.worst;
  }
}

TEST(Twrnn, SharedWheelsReuseOneWeightSet) {
  ParameterSet<float> separate, shared;
  Initializer<float> a(separate, 1), b(shared, 1);
  make_twrnn(a, "tw", 4, false);
  const auto p = make_twrnn(b, "tw", 4, true);
  EXPECT_EQ(separate.size(), 12u);
  EXPECT_EQ(shared.size(), 7u);
  EXPECT_EQ(p.wheels.first.mix.var().node(), p.wheels.second.mix.var().node());
}

TEST(AttentionMap, ZeroProjectionGivesHalfEverywhere) {
  ParameterSet<float> set;
  Initializer<float> init(set, 7);
  auto p = make_twrnn(init, "tw", 3);
  p.proj_weight.value().set_zero();
  std::mt19937_64 rng(8);
  const auto maps = attention_map(constant(testing::random_tensor_f(Shape{1, 3, 5, 6}, rng)), p, 3);
  ASSERT_EQ(maps.steps.size(), 3u);
  for (const auto& m : maps.steps) {
    ASSERT_EQ(m.shape(), (Shape{1, 1, 5, 6}));
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m.value()[i], 0.5f);
  }
}

TEST(AttentionMap, OneStepMatchesHandComposition) {
  ParameterSet<double> set;
  Initializer<double> init(set, 9);
  auto p = make_twrnn(init, "tw", 2);
  p.proj_bias.value()[0] = 0.3;
  std::mt19937_64 rng(10);
  const Tensor<double> x = random_tensor(Shape{1, 2, 4, 4}, rng);
  const auto h = two_wheel_pass(constant(x), p.wheels).value();
  const auto maps = attention_map(constant(x), p, 1);
  ASSERT_EQ(maps.steps.size(), 1u);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t xx = 0; xx < 4; ++xx) {
      double logit = 0.3;
      for (std::size_t c = 0; c < 2; ++c) logit += p.proj_weight.value()[c] * h(0, c, y, xx);
      EXPECT_NEAR(maps.final_map.value()(0, 0, y, xx), 1.0 / (1.0 + std::exp(-logit)), 1e-12);
    }
}

TEST(AttentionMap, LaterStepsSeeReweightedOriginalFeatures) {
  ParameterSet<double> set;
  Initializer<double> init(set, 11);
  const auto p = make_twrnn(init, "tw", 2);
  std::mt19937_64 rng(12);
  const auto x = constant(random_tensor(Shape{1, 2, 4, 4}, rng));
  const auto maps = attention_map(x, p, 2);
  const auto reweighted = ops::mul_broadcast_channels(x, maps.steps[0]);
  const auto second = attention_map(reweighted, p, 1).final_map.value();
  for (std::size_t i = 0; i < second.size(); ++i) EXPECT_NEAR(maps.steps[1].value()[i], second[i], 1e-12);
}

TEST(AttentionMap, ValuesInUnitIntervalAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ParameterSet<float> set;
    Initializer<float> init(set, seed);
    const auto p = make_twrnn(init, "tw", 4);
    std::mt19937_64 rng(seed);
    const auto maps = attention_map(constant(testing::random_tensor_f(Shape{2, 4, 6, 6}, rng, -3.0f, 3.0f)), p, 4);
    ASSERT_EQ(maps.steps.size(), 4u);
    for (const auto& m : maps.steps) {
      ASSERT_EQ(m.shape(), (Shape{2, 1, 6, 6}));
      for (std::size_t i = 0; i < m.size(); ++i) {
        EXPECT_GE(m.value()[i], 0.0f);
        EXPECT_LE(m.value()[i], 1.0f);
      }
    }
  }
}

TEST(AttentionMap, ZeroStepsRejected) {
  ParameterSet<float> set;
  Initializer<float> init(set, 1);
  const auto p = make_twrnn(init, "tw", 2);
  EXPECT_THROW(attention_map(constant(Tensor<float>(Shape{1, 2, 4, 4})), p, 0), ContractViolation);
}

TEST(AttentionMap, EveryDirectionalWeightGetsGradient) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ParameterSet<double> set;
    Initializer<double> init(set, seed);
    const auto p = make_twrnn(init, "tw", 3);
    std::mt19937_64 rng(seed + 30);
    const auto maps = attention_map(constant(random_tensor(Shape{1, 3, 6, 6}, rng)), p, 2);
    Var<double> loss = ops::sum(maps.steps[0]);
    for (std::size_t i = 1; i < maps.steps.size(); ++i) loss = ops::add(loss, ops::sum(maps.steps[i]));
    backward(loss);
    for (auto& q : set) EXPECT_GT(q.grad().max_abs(), 0.0) << q.name() << " seed " << seed;
  }
}

}  // namespace
}  // namespace spaformer
