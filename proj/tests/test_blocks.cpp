#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "spaformer/blocks.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace spaformer {
namespace {

using testing::check_gradients;
using testing::random_projection;
using testing::random_tensor;

template <typename Scalar>
void randomize(ParameterSet<Scalar>& set, std::mt19937_64& rng, double lo = -0.5, double hi = 0.5) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& p : set)
    for (std::size_t i = 0; i < p.value().size(); ++i) p.value()[i] = static_cast<Scalar>(d(rng));
}

std::vector<std::pair<std::string, Var<double>>> leaves_of(ParameterSet<double>& set) {
  std::vector<std::pair<std::string, Var<double>>> out;
  for (auto& p : set) out.emplace_back(p.name(), p.var());
  return out;
}

TEST(TransformerBlock, ZeroOutputProjectionIsPassthrough) {
  ParameterSet<float> set;
  Initializer<float> init(set, 3);
  auto p = make_transformer_block(init, "tb", 4);
  p.out_point.value().set_zero();
  std::mt19937_64 rng(1);
  const Tensor<float> x = testing::random_tensor_f(Shape{2, 4, 6, 5}, rng);
  const auto y = transformer_block(constant(x), p).value();
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(TransformerBlock, SingleChannelAttentionIsOneAndPassesV) {
  ParameterSet<double> set;
  Initializer<double> init(set, 5);
  auto p = make_transformer_block(init, "tb", 1);
  std::mt19937_64 rng(2);
  randomize(set, rng);
  const Tensor<double> x = random_tensor(Shape{1, 1, 4, 4}, rng);
  const auto a = channel_attention(constant(x), p);
  ASSERT_EQ(a.attention.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_NEAR(a.attention.value()[0], 1.0, 1e-12);

  // Hand composition: with one channel the layer norm output is the shift,
  // so V = depth(point * shift) over a constant plane, zero padded.
  const double y = p.norm_shift.value()[0];
  Tensor<double> pw(Shape{1, 1, 4, 4}, p.v_point.value()[0] * y);
  const auto v = oracle::conv2d(pw, p.v_depth.value(), static_cast<const double*>(nullptr), 1, 1, true);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(a.mixed.value()[i], v[i], 1e-12);

  const auto out = transformer_block(constant(x), p).value();
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out[i], p.out_point.value()[0] * v[i] + x[i], 1e-12);
}

TEST(TransformerBlock, AttentionRowsSumToOneAndSizeIsChannelsSquared) {
  ParameterSet<float> set;
  Initializer<float> init(set, 9);
  const auto p = make_transformer_block(init, "tb", 6);
  std::mt19937_64 rng(3);
  for (std::size_t side : {4u, 8u, 16u}) {
    const auto a = channel_attention(constant(testing::random_tensor_f(Shape{2, 6, side, side}, rng)), p);
    ASSERT_EQ(a.attention.shape(), (Shape{2, 1, 6, 6}));
    const auto& att = a.attention.value();
    for (std::size_t r = 0; r < 12; ++r) {
      float s = 0.0f;
      for (std::size_t c = 0; c < 6; ++c) s += att[r * 6 + c];
      EXPECT_NEAR(s, 1.0f, 1e-5f);
    }
  }
}

TEST(TransformerBlock, AlphaStaysPositiveAndStartsAtSqrtC) {
  ParameterSet<float> set;
  Initializer<float> init(set, 1);
  auto p = make_transformer_block(init, "tb", 9);
  EXPECT_NEAR(std::exp(p.log_alpha.value()[0]), 3.0f, 1e-5f);
  p.log_alpha.value()[0] = -50.0f;
  EXPECT_GT(std::exp(p.log_alpha.value()[0]), 0.0f);
}

TEST(TransformerBlock, RejectsEmptyExtents) {
  ParameterSet<float> set;
  Initializer<float> init(set, 1);
  const auto p = make_transformer_block(init, "tb", 2);
  EXPECT_THROW(transformer_block(constant(Tensor<float>(Shape{1, 2, 0, 4})), p), ContractViolation);
}

class BlockGradients : public ::testing::TestWithParam<int> {};

TEST_P(BlockGradients, TransformerBlock) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  for (bool normalize : {true, false}) {
    ParameterSet<double> set;
    Initializer<double> init(set, seed);
    const auto p = make_transformer_block(init, "tb", 3, normalize);
    std::mt19937_64 rng(seed);
    randomize(set, rng);
    const auto x = leaf(random_tensor(Shape{1, 3, 4, 4}, rng));
    auto leaves = leaves_of(set);
    leaves.emplace_back("x", x);
    const auto r = check_gradients([&] { return random_projection(transformer_block(x, p), seed); }, leaves);
    EXPECT_LT(r.relative_error, 1e-3) << "normalize=" << normalize << " worst " << r.worst;
  }
}

TEST_P(BlockGradients, FtrBlock) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  ParameterSet<double> set;
  Initializer<double> init(set, seed);
  const auto p = make_ftr_block(init, "ftr", 2);
  std::mt19937_64 rng(seed + 7);
  randomize(set, rng);
  const auto x = leaf(random_tensor(Shape{1, 2, 8, 8}, rng));
  auto leaves = leaves_of(set);
  leaves.emplace_back("x", x);
  const auto r = check_gradients([&] { return random_projection(ftr_block(x, p), seed); }, leaves);
  EXPECT_LT(r.relative_error, 1e-3) << r.worst;
}

TEST_P(BlockGradients, ResBlock) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  ParameterSet<double> set;
  Initializer<double> init(set, seed);
  const auto p = make_res_block(init, "rb", 3);
  std::mt19937_64 rng(seed + 11);
  randomize(set, rng);
  const auto x = leaf(random_tensor(Shape{1, 3, 5, 5}, rng));
  auto leaves = leaves_of(set);
  leaves.emplace_back("x", x);
  const auto r = check_gradients([&] { return random_projection(res_block(x, p), seed); }, leaves);
  EXPECT_LT(r.relative_error, 1e-3) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Seeds, BlockGradients, ::testing::Values(1, 2, 3, 4, 5));

TEST(ResBlock, ZeroBranchIsIdentity) {
  ParameterSet<float> set;
  Initializer<float> init(set, 1);
  const auto p = make_res_block(init, "rb", 8);
  for (auto& q : set) q.value().set_zero();
  std::mt19937_64 rng(4);
  const Tensor<float> x = testing::random_tensor_f(Shape{2, 8, 16, 16}, rng);
  const auto y = res_block(constant(x), p).value();
  ASSERT_EQ(y.shape(), (Shape{2, 8, 16, 16}));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(ResBlock, MatchesComposedOracle) {
  ParameterSet<float> set;
  Initializer<float> init(set, 2);
  const auto p = make_res_block(init, "rb", 3);
  std::mt19937_64 rng(5);
  randomize(set, rng);
  const Tensor<float> x = testing::random_tensor_f(Shape{1, 3, 6, 7}, rng);
  auto h = oracle::conv2d(x, p.conv1.value(), p.bias1.value().data(), 1, 1, false);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::max(h[i], 0.0f);
  const auto branch = oracle::conv2d(h, p.conv2.value(), p.bias2.value().data(), 1, 1, false);
  const auto y = res_block(constant(x), p).value();
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], x[i] + branch[i], 1e-5);
}

TEST(FtrBlock, ZeroBranchesAreIdentity) {
  ParameterSet<float> set;
  Initializer<float> init(set, 1);
  const auto p = make_ftr_block(init, "ftr", 4);
  for (auto& q : set) q.value().set_zero();
  std::mt19937_64 rng(6);
  const Tensor<float> x = testing::random_tensor_f(Shape{1, 4, 8, 6}, rng);
  const auto y = ftr_block(constant(x), p).value();
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(FtrBlock, DcPassesThroughIdentityFrequencyMix) {
  ParameterSet<float> set;
  Initializer<float> init(set, 1);
  auto p = make_ftr_block(init, "ftr", 2);
  for (auto& q : set) q.value().set_zero();
  for (std::size_t i = 0; i < 4; ++i) {
    p.freq_in.value()[i * 4 + i] = 1.0f;
    p.freq_out.value()[i * 4 + i] = 1.0f;
  }
  const Tensor<float> x(Shape{1, 2, 8, 8}, 0.75f);
  // DC bin = 0.75 * 64 survives the ReLU; all other bins are zero, so the
  // inverse transform returns the constant.
  const auto y = ftr_block(constant(x), p).value();
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 1.5f, 1e-5f);
}

TEST(Blocks, ShapePreservingOnVariousInputs) {
  ParameterSet<float> set;
  Initializer<float> init(set, 3);
  const auto tb = make_transformer_block(init, "tb", 4);
  const auto rb = make_res_block(init, "rb", 4);
  const auto fb = make_ftr_block(init, "fb", 4);
  std::mt19937_64 rng(7);
  for (const Shape s : {Shape{1, 4, 8, 8}, Shape{2, 4, 5, 7}, Shape{1, 4, 1, 1}, Shape{3, 4, 3, 10}}) {
    const auto x = constant(testing::random_tensor_f(s, rng));
    EXPECT_EQ(transformer_block(x, tb).shape(), s);
    EXPECT_EQ(res_block(x, rb).shape(), s);
    EXPECT_EQ(ftr_block(x, fb).shape(), s);
  }
}

}  // namespace
}  // namespace spaformer
