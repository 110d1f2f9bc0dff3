#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "spaformer/fft.hpp"
#include "spaformer/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace spaformer {
namespace {

using testing::check_gradients;
using testing::random_projection;
using testing::random_tensor;
using ops::ConvMode;

TEST(Conv2d, PointwiseIdentityKernelIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor<double> x = random_tensor(Shape{2, 3, 4, 5}, rng);
  Tensor<double> k(Shape{3, 3, 1, 1});
  for (std::size_t i = 0; i < 3; ++i) k(i, i, 0, 0) = 1.0;
  const auto y = ops::conv2d(constant(x), constant(k), ConvMode::pointwise_1x1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.value()[i], x[i]);
}

TEST(Conv2d, DepthwiseOnesKernelCountsNeighbours) {
  const Tensor<float> x(Shape{1, 1, 5, 5}, 1.0f);
  const Tensor<float> k(Shape{1, 1, 3, 3}, 1.0f);
  const auto y = ops::conv2d(constant(x), constant(k), ConvMode::depthwise_3x3, 1, 1).value();
  ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 5}));
  EXPECT_EQ(y(0, 0, 2, 2), 9.0f);
  EXPECT_EQ(y(0, 0, 1, 3), 9.0f);
  EXPECT_EQ(y(0, 0, 0, 2), 6.0f);
  EXPECT_EQ(y(0, 0, 2, 4), 6.0f);
  EXPECT_EQ(y(0, 0, 0, 0), 4.0f);
  EXPECT_EQ(y(0, 0, 4, 4), 4.0f);
}

TEST(Conv2d, Full3x3MatchesNaiveOracle) {
  std::mt19937_64 rng(7);
  const Tensor<float> x = testing::random_tensor_f(Shape{1, 2, 4, 4}, rng);
  const Tensor<float> k = testing::random_tensor_f(Shape{3, 2, 3, 3}, rng);
  const Tensor<float> bias = testing::random_tensor_f(Shape{1, 3, 1, 1}, rng);
  const auto y = ops::conv2d(constant(x), constant(k), constant(bias), ConvMode::full_3x3, 1, 1).value();
  const auto ref = oracle::conv2d(x, k, bias.data(), 1, 1, false);
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
}

TEST(Conv2d, OutputExtentFollowsStrideAndPadding) {
  const Tensor<float> x(Shape{1, 2, 9, 8}, 1.0f);
  const Tensor<float> k(Shape{4, 2, 3, 3}, 0.5f);
  const auto y = ops::conv2d(constant(x), constant(k), ConvMode::full_3x3, 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 5, 4}));  // floor((9+2-3)/2)+1, floor((8+2-3)/2)+1
  const auto z = ops::conv2d(constant(x), constant(k), ConvMode::full_3x3, 1, 0);
  EXPECT_EQ(z.shape(), (Shape{1, 4, 7, 6}));
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
  const Tensor<float> x(Shape{1, 3, 4, 4});
  const Tensor<float> k(Shape{2, 5, 3, 3});
  try {
    ops::conv2d(constant(x), constant(k), ConvMode::full_3x3, 1, 1);
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2,5,3,3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(1,3,4,4)"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::conv2d(constant(x), constant(Tensor<float>(Shape{3, 3, 3, 3})), ConvMode::depthwise_3x3),
               ContractViolation);
}

TEST(Softmax, UniformRowAndAnalyticCase) {
  const auto u = ops::softmax_last(constant(Tensor<double>(Shape{1, 1, 1, 5}, 0.3))).value();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(u[i], 0.2, 1e-12);
  const auto v = ops::softmax_last(constant(Tensor<double>(Shape{1, 1, 1, 2}, {0.0, std::log(2.0)}))).value();
  EXPECT_NEAR(v[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(v[1], 2.0 / 3.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> x = testing::random_tensor_f(Shape{2, 1, 4, 6}, rng, -20.0f, 20.0f);
    Tensor<float> shifted = x;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 37.5f;
    const auto y = ops::softmax_last(constant(x)).value();
    const auto ys = ops::softmax_last(constant(shifted)).value();
    for (std::size_t r = 0; r < 8; ++r) {
      float s = 0.0f;
      for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_GE(y[r * 6 + i], 0.0f);
        s += y[r * 6 + i];
      }
      EXPECT_NEAR(s, 1.0f, 1e-5f);
    }
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ys[i], 1e-5f);
  }
}

TEST(LayerNorm, ConstantInputGivesZeros) {
  const Tensor<float> x(Shape{1, 4, 3, 3}, 2.5f);
  const auto y = ops::layer_norm_channels(constant(x), constant(Tensor<float>(Shape{1, 4, 1, 1}, 1.0f)),
                                          constant(Tensor<float>(Shape{1, 4, 1, 1}, 0.0f)))
                     .value();
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 0.0f);
}

TEST(LayerNorm, TwoChannelAnalyticCase) {
  const Tensor<double> x(Shape{1, 2, 1, 1}, {1.0, 3.0});
  const auto y = ops::layer_norm_channels(constant(x), constant(Tensor<double>(Shape{1, 2, 1, 1}, 1.0)),
                                          constant(Tensor<double>(Shape{1, 2, 1, 1}, 0.0)), 1e-12)
                     .value();
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
}

TEST(LayerNorm, MatchesDirectStatistics) {
  std::mt19937_64 rng(11);
  const Tensor<float> x = testing::random_tensor_f(Shape{1, 4, 2, 2}, rng);
  const Tensor<float> gain = testing::random_tensor_f(Shape{1, 4, 1, 1}, rng);
  const Tensor<float> shift = testing::random_tensor_f(Shape{1, 4, 1, 1}, rng);
  const auto y = ops::layer_norm_channels(constant(x), constant(gain), constant(shift)).value();
  for (std::size_t py = 0; py < 2; ++py)
    for (std::size_t px = 0; px < 2; ++px) {
      double mu = 0.0, var = 0.0;
      for (std::size_t c = 0; c < 4; ++c) mu += x(0, c, py, px);
      mu /= 4.0;
      for (std::size_t c = 0; c < 4; ++c) var += (x(0, c, py, px) - mu) * (x(0, c, py, px) - mu);
      var /= 4.0;
      for (std::size_t c = 0; c < 4; ++c) {
        const double expected = (x(0, c, py, px) - mu) / std::sqrt(var + 1e-5) * gain[c] + shift[c];
        EXPECT_NEAR(y(0, c, py, px), expected, 1e-5);
      }
    }
}

TEST(LayerNorm, UnitStatisticsWithUnitGain) {
  std::mt19937_64 rng(12);
  const Tensor<float> x = testing::random_tensor_f(Shape{2, 8, 3, 3}, rng, -5.0f, 5.0f);
  const auto y = ops::layer_norm_channels(constant(x), constant(Tensor<float>(Shape{1, 8, 1, 1}, 1.0f)),
                                          constant(Tensor<float>(Shape{1, 8, 1, 1}, 0.0f)))
                     .value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t p = 0; p < 9; ++p) {
      double mu = 0.0, sq = 0.0;
      for (std::size_t c = 0; c < 8; ++c) mu += y.plane(b, c)[p];
      mu /= 8.0;
      for (std::size_t c = 0; c < 8; ++c) sq += (y.plane(b, c)[p] - mu) * (y.plane(b, c)[p] - mu);
      EXPECT_NEAR(mu, 0.0, 1e-4);
      EXPECT_NEAR(sq / 8.0, 1.0, 1e-4);
    }
}

TEST(Fft, ConstantSliceConcentratesInDc) {
  const Tensor<float> x(Shape{1, 1, 6, 10}, 1.5f);
  const auto g = fft::rfft2(x);
  EXPECT_EQ(g.shape, (Shape{1, 1, 6, 6}));
  EXPECT_NEAR(g.real[0], 1.5 * 60.0, 1e-4);
  EXPECT_NEAR(g.imag[0], 0.0, 1e-4);
  for (std::size_t i = 1; i < g.real.size(); ++i) {
    EXPECT_NEAR(g.real[i], 0.0, 1e-4);
    EXPECT_NEAR(g.imag[i], 0.0, 1e-4);
  }
}

TEST(Fft, RoundtripIsIdentity) {
  std::mt19937_64 rng(5);
  for (const auto& [h, w] : {std::pair{8, 8}, std::pair{7, 12}, std::pair{16, 9}, std::pair{1, 5}}) {
    const Tensor<float> x = testing::random_tensor_f(Shape{2, 3, std::size_t(h), std::size_t(w)}, rng);
    const auto y = fft::irfft2(fft::rfft2(x), std::size_t(w));
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-4) << h << "x" << w;
  }
}

TEST(Fft, DcEqualsSliceSum) {
  std::mt19937_64 rng(6);
  const Tensor<double> x = random_tensor(Shape{1, 2, 5, 6}, rng);
  const auto g = fft::rfft2(x);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < 30; ++i) s += x.plane(0, c)[i];
    EXPECT_NEAR(g.real[g.index(0, c, 0, 0)], s, 1e-9);
  }
}

TEST(Fft, CosineRowHitsOnlyFirstHorizontalBins) {
  const std::size_t h = 4, w = 8;
  Tensor<double> x(Shape{1, 1, h, w});
  std::vector<double> plane(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t u = 0; u < w; ++u) {
      x(0, 0, y, u) = std::cos(2.0 * std::numbers::pi * double(u) / double(w));
      plane[y * w + u] = x(0, 0, y, u);
    }
  const auto g = fft::rfft2(x);
  const auto ref = oracle::dft2(plane, h, w);
  for (std::size_t ky = 0; ky < h; ++ky)
    for (std::size_t kx = 0; kx < w / 2 + 1; ++kx) {
      const std::size_t i = g.index(0, 0, ky, kx);
      EXPECT_NEAR(g.real[i], ref[ky * w + kx].real(), 1e-9);
      EXPECT_NEAR(g.imag[i], ref[ky * w + kx].imag(), 1e-9);
      const bool energy = ky == 0 && kx == 1;
      EXPECT_NEAR(std::hypot(g.real[i], g.imag[i]), energy ? double(h * w) / 2.0 : 0.0, 1e-9);
    }
}

TEST(Fft, ParsevalWithHermitianWeights) {
  std::mt19937_64 rng(8);
  for (const auto& [h, w] : {std::pair{8, 8}, std::pair{5, 7}, std::pair{12, 10}}) {
    const Tensor<double> x = random_tensor(Shape{1, 1, std::size_t(h), std::size_t(w)}, rng);
    const auto g = fft::rfft2(x);
    double energy = 0.0;
    for (std::size_t ky = 0; ky < std::size_t(h); ++ky)
      for (std::size_t kx = 0; kx < std::size_t(w / 2 + 1); ++kx) {
        const bool self_conj = kx == 0 || (w % 2 == 0 && kx == std::size_t(w / 2));
        const std::size_t i = g.index(0, 0, ky, kx);
        energy += (self_conj ? 1.0 : 2.0) * (g.real[i] * g.real[i] + g.imag[i] * g.imag[i]);
      }
    energy /= double(h * w);
    double direct = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) direct += x[i] * x[i];
    EXPECT_NEAR(energy / direct, 1.0, 1e-3);
  }
}

TEST(Fft, IrfftRejectsInconsistentWidth) {
  ComplexGrid<float> g(Shape{1, 1, 4, 5});
  EXPECT_THROW(fft::irfft2(g, 12), ContractViolation);
  EXPECT_NO_THROW(fft::irfft2(g, 8));
  EXPECT_NO_THROW(fft::irfft2(g, 9));
}

TEST(Backward, SumGivesOnes) {
  std::mt19937_64 rng(1);
  const auto x = leaf(random_tensor(Shape{1, 2, 3, 3}, rng));
  backward(ops::sum(x));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x.grad()[i], 1.0);
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  std::mt19937_64 rng(2);
  const auto x = leaf(random_tensor(Shape{1, 2, 3, 3}, rng));
  backward(ops::sum(ops::mul(x, x)));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x.grad()[i], 2.0 * x.value()[i], 1e-12);
}

TEST(Backward, GradientsAccumulateUntilZeroed) {
  Parameter<double> p("p", Tensor<double>(Shape{1, 1, 1, 3}, 1.0));
  backward(ops::sum(p.var()));
  backward(ops::sum(p.var()));
  EXPECT_EQ(p.grad()[0], 2.0);
  p.zero_grad();
  EXPECT_EQ(p.grad()[0], 0.0);
  EXPECT_EQ(p.grad().shape(), p.value().shape());
}

TEST(Backward, NonScalarLossIsRejected) {
  const auto x = leaf(Tensor<double>(Shape{1, 1, 2, 2}, 1.0));
  EXPECT_THROW(backward(x), ContractViolation);
}

TEST(Backward, ConvReluMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const auto x = leaf(random_tensor(Shape{1, 2, 5, 5}, rng));
  const auto k = leaf(random_tensor(Shape{3, 2, 3, 3}, rng));
  const auto b = leaf(random_tensor(Shape{1, 3, 1, 1}, rng));
  auto loss = [&] { return random_projection(ops::relu(ops::conv2d(x, k, b, ConvMode::full_3x3, 1, 1)), 99); };
  const auto r = check_gradients(loss, {{"x", x}, {"k", k}, {"b", b}});
  EXPECT_LT(r.relative_error, 1e-3) << r.worst;
}

TEST(Elementwise, Identities) {
  EXPECT_EQ(ops::sigmoid(constant(Tensor<float>(Shape{1, 1, 1, 1}, 0.0f))).value()[0], 0.5f);
  std::mt19937_64 rng(9);
  const Tensor<double> x = random_tensor(Shape{2, 3, 4, 4}, rng);
  const Tensor<double> y = random_tensor(Shape{2, 3, 4, 4}, rng);
  const auto pos = ops::relu(constant(x)).value();
  const auto neg = ops::relu(ops::scale(constant(x), -1.0)).value();
  const auto sum = ops::add(constant(x), constant(y)).value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(pos[i] + neg[i], std::abs(x[i]));
    EXPECT_EQ(sum[i], x[i] + y[i]);
  }
  EXPECT_THROW(ops::add(constant(x), constant(Tensor<double>(Shape{1, 3, 4, 4}))), ContractViolation);
  EXPECT_THROW(ops::mul(constant(x), constant(Tensor<double>(Shape{2, 3, 4, 5}))), ContractViolation);
}

TEST(Elementwise, ReluSubgradientAtZeroIsZero) {
  const auto x = leaf(Tensor<double>(Shape{1, 1, 1, 1}, 0.0));
  backward(ops::sum(ops::relu(x)));
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Elementwise, OutputsStayFiniteOnExtremeInputs) {
  const Tensor<float> x(Shape{1, 1, 1, 4}, {-200.0f, -30.0f, 30.0f, 200.0f});
  EXPECT_TRUE(ops::sigmoid(constant(x)).value().all_finite());
  EXPECT_TRUE(ops::softmax_last(constant(x)).value().all_finite());
  EXPECT_TRUE(ops::l2_normalize_last(constant(Tensor<float>(Shape{1, 1, 1, 4}))).value().all_finite());
}

// Every differentiable op, five seeds each, inputs in [-1, 1].
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  std::mt19937_64 rng(seed);
  const Shape s{1, 4, 4, 4};
  auto check = [&](const char* what, auto&& build, std::vector<std::pair<std::string, Var<double>>> leaves) {
    const auto r = check_gradients([&] { return random_projection(build(), seed + 1000); }, leaves);
    EXPECT_LT(r.relative_error, 1e-3) << what << " worst leaf " << r.worst;
  };
  const auto a = leaf(random_tensor(s, rng));
  const auto b = leaf(random_tensor(s, rng));
  const auto m = leaf(random_tensor(Shape{1, 1, 4, 4}, rng));
  const auto scalar = leaf(random_tensor(Shape{1, 1, 1, 1}, rng));
  const auto k_full = leaf(random_tensor(Shape{3, 4, 3, 3}, rng));
  const auto k_point = leaf(random_tensor(Shape{2, 4, 1, 1}, rng));
  const auto k_depth = leaf(random_tensor(Shape{4, 1, 3, 3}, rng));
  const auto bias3 = leaf(random_tensor(Shape{1, 3, 1, 1}, rng));
  const auto bias4 = leaf(random_tensor(Shape{1, 4, 1, 1}, rng));
  const auto gain = leaf(random_tensor(Shape{1, 4, 1, 1}, rng));

  check("add", [&] { return ops::add(a, b); }, {{"a", a}, {"b", b}});
  check("sub", [&] { return ops::sub(a, b); }, {{"a", a}, {"b", b}});
  check("mul", [&] { return ops::mul(a, b); }, {{"a", a}, {"b", b}});
  check("scale", [&] { return ops::scale(a, 0.7); }, {{"a", a}});
  check("relu", [&] { return ops::relu(a); }, {{"a", a}});
  check("leaky_relu", [&] { return ops::leaky_relu(a, 0.2); }, {{"a", a}});
  check("sigmoid", [&] { return ops::sigmoid(a); }, {{"a", a}});
  check("exp", [&] { return ops::exp(a); }, {{"a", a}});
  check("scale_by", [&] { return ops::scale_by(a, scalar); }, {{"a", a}, {"s", scalar}});
  check("mul_broadcast", [&] { return ops::mul_broadcast_channels(a, m); }, {{"a", a}, {"m", m}});
  check("conv_full", [&] { return ops::conv2d(a, k_full, bias3, ConvMode::full_3x3, 1, 1); },
        {{"x", a}, {"k", k_full}, {"b", bias3}});
  check("conv_full_stride2", [&] { return ops::conv2d(a, k_full, bias3, ConvMode::full_3x3, 2, 1); },
        {{"x", a}, {"k", k_full}, {"b", bias3}});
  check("conv_point", [&] { return ops::conv2d(a, k_point, ConvMode::pointwise_1x1); }, {{"x", a}, {"k", k_point}});
  check("conv_depth", [&] { return ops::conv2d(a, k_depth, bias4, ConvMode::depthwise_3x3, 1, 1); },
        {{"x", a}, {"k", k_depth}, {"b", bias4}});
  check("layer_norm", [&] { return ops::layer_norm_channels(a, gain, bias4); },
        {{"x", a}, {"gain", gain}, {"shift", bias4}});
  check("softmax_last", [&] { return ops::softmax_last(a); }, {{"x", a}});
  check("l2_normalize_last", [&] { return ops::l2_normalize_last(a); }, {{"x", a}});
  check("matmul", [&] { return ops::matmul(ops::reshape(a, Shape{1, 1, 4, 16}), ops::reshape(b, Shape{1, 1, 16, 4})); },
        {{"a", a}, {"b", b}});
  check("matmul_tb", [&] { return ops::matmul(ops::reshape(a, Shape{1, 1, 4, 16}), ops::reshape(b, Shape{1, 1, 4, 16}), true); },
        {{"a", a}, {"b", b}});
  check("concat_slice", [&] { return ops::slice_channels(ops::concat_channels<double>({a, b}), 2, 4); },
        {{"a", a}, {"b", b}});
  check("transpose_hw", [&] { return ops::transpose_hw(a); }, {{"a", a}});
  check("upsample", [&] { return ops::upsample_nearest2x(a); }, {{"a", a}});
  check("rfft2", [&] { return ops::rfft2_stacked(a); }, {{"a", a}});
  const auto spec = leaf(random_tensor(Shape{1, 4, 4, 3}, rng));
  check("irfft2_even", [&] { return ops::irfft2_stacked(spec, 4); }, {{"spec", spec}});
  check("irfft2_odd", [&] { return ops::irfft2_stacked(spec, 5); }, {{"spec", spec}});
  check("fft_roundtrip", [&] { return ops::irfft2_stacked(ops::rfft2_stacked(a), 4); }, {{"a", a}});
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Values(1, 2, 3, 4, 5));

}  // namespace
}  // namespace spaformer
