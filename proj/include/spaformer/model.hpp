#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spaformer/blocks.hpp"
#include "spaformer/ops.hpp"
#include "spaformer/params.hpp"
#include "spaformer/twrnn.hpp"

namespace spaformer {

struct ModelConfig {
  int base_channels = 32;
  int encoder_levels = 3;
  int n_ftr_blocks = 4;
  int twrnn_steps = 4;
  bool use_transformer = true;
  bool use_ftr = true;
  std::uint64_t seed = 0;

  int transformer_blocks_per_level = 2;
  bool normalize_qk = true;
  bool share_wheel_weights = false;
  double decoder_dropout = 0.2;
  int disc_channels = 32;
  int disc_levels = 4;

  void validate() const {
    if (base_channels < 1) throw ContractViolation("base_channels must be >= 1");
    if (encoder_levels < 1) throw ContractViolation("encoder_levels must be >= 1");
    if (n_ftr_blocks < 0) throw ContractViolation("n_ftr_blocks must be >= 0");
    if (twrnn_steps < 1) throw ContractViolation("twrnn_steps must be >= 1");
    if (transformer_blocks_per_level < 0) throw ContractViolation("transformer_blocks_per_level must be >= 0");
    if (decoder_dropout < 0.0 || decoder_dropout >= 1.0) throw ContractViolation("decoder_dropout must be in [0, 1)");
    if (disc_channels < 1 || disc_levels < 1) throw ContractViolation("discriminator widths must be >= 1");
  }

  std::size_t channels_at(int level) const { return static_cast<std::size_t>(base_channels) << level; }
  std::size_t spatial_multiple() const { return std::size_t{1} << (encoder_levels - 1); }
};

template <typename Scalar>
struct EncoderLevel {
  Parameter<Scalar> down_weight, down_bias;  // absent on level 0
  std::vector<TransformerBlockParams<Scalar>> blocks;
};

template <typename Scalar>
struct DecoderLevel {
  Parameter<Scalar> up_weight, up_bias;      // (C_l, C_{l+1}, 3, 3) after 2x upsampling
  Parameter<Scalar> fuse_weight, fuse_bias;  // (C_l, 2 C_l, 1, 1) skip aggregation
  std::vector<TransformerBlockParams<Scalar>> blocks;
};

template <typename Scalar>
struct GeneratorParams {
  Parameter<Scalar> in_weight, in_bias;
  std::vector<EncoderLevel<Scalar>> encoder;
  std::vector<DecoderLevel<Scalar>> decoder;  // decoder[l] restores level l
  Parameter<Scalar> feat_weight, feat_bias;
  std::vector<ResBlockParams<Scalar>> pre_attention;   // 3
  TwrnnParams<Scalar> twrnn;
  std::vector<ResBlockParams<Scalar>> attended;        // 3, modulated by the map
  std::vector<ResBlockParams<Scalar>> post_attention;  // 2
  std::vector<FtrBlockParams<Scalar>> ftr_chain;       // when use_ftr
  std::vector<ResBlockParams<Scalar>> res_chain;       // otherwise
  Parameter<Scalar> out_weight, out_bias;              // zero-initialized
};

template <typename Scalar>
struct DiscriminatorParams {
  std::vector<Parameter<Scalar>> weights, biases;  // strided levels
  Parameter<Scalar> score_weight, score_bias;
};

/// Both networks plus the parameter sets that own their tensors.
template <typename Scalar>
struct Model {
  ModelConfig config;
  ParameterSet<Scalar> generator_set;
  ParameterSet<Scalar> discriminator_set;
  GeneratorParams<Scalar> generator;
  DiscriminatorParams<Scalar> discriminator;
};

template <typename Scalar>
struct GeneratorOutput {
  Var<Scalar> restored;                   // (N, 3, H, W)
  Var<Scalar> residual;                   // restored = image + residual (before clamping)
  Var<Scalar> attention;                  // (N, 1, H, W)
  std::vector<Var<Scalar>> attention_steps;
};

/// Training mode enables decoder dropout (the conditional noise source) and
/// leaves the output unclamped.
template <typename Scalar>
struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

namespace detail {

template <typename Scalar>
GeneratorParams<Scalar> build_generator(const ModelConfig& cfg, Initializer<Scalar>& init) {
  GeneratorParams<Scalar> g;
  const std::size_t c0 = cfg.channels_at(0);
  g.in_weight = init.kernel("gen.in.weight", Shape{c0, 3, 3, 3});
  g.in_bias = init.zeros("gen.in.bias", Shape{1, c0, 1, 1});

  const int tb = cfg.use_transformer ? cfg.transformer_blocks_per_level : 0;
  for (int l = 0; l < cfg.encoder_levels; ++l) {
    EncoderLevel<Scalar> lvl;
    const std::size_t c = cfg.channels_at(l);
    const std::string pre = "gen.enc" + std::to_string(l);
    if (l > 0) {
      lvl.down_weight = init.kernel(pre + ".down.weight", Shape{c, cfg.channels_at(l - 1), 3, 3});
      lvl.down_bias = init.zeros(pre + ".down.bias", Shape{1, c, 1, 1});
    }
    for (int i = 0; i < tb; ++i) {
      lvl.blocks.push_back(make_transformer_block(init, pre + ".tb" + std::to_string(i), c, cfg.normalize_qk));
    }
    g.encoder.push_back(std::move(lvl));
  }
  g.decoder.resize(static_cast<std::size_t>(cfg.encoder_levels > 1 ? cfg.encoder_levels - 1 : 0));
  for (int l = cfg.encoder_levels - 2; l >= 0; --l) {
    DecoderLevel<Scalar>& lvl = g.decoder[static_cast<std::size_t>(l)];
    const std::size_t c = cfg.channels_at(l);
    const std::string pre = "gen.dec" + std::to_string(l);
    lvl.up_weight = init.kernel(pre + ".up.weight", Shape{c, cfg.channels_at(l + 1), 3, 3});
    lvl.up_bias = init.zeros(pre + ".up.bias", Shape{1, c, 1, 1});
    lvl.fuse_weight = init.kernel(pre + ".fuse.weight", Shape{c, 2 * c, 1, 1});
    lvl.fuse_bias = init.zeros(pre + ".fuse.bias", Shape{1, c, 1, 1});
    for (int i = 0; i < tb; ++i) {
      lvl.blocks.push_back(make_transformer_block(init, pre + ".tb" + std::to_string(i), c, cfg.normalize_qk));
    }
  }

  g.feat_weight = init.kernel("gen.feat.weight", Shape{c0, c0, 3, 3});
  g.feat_bias = init.zeros("gen.feat.bias", Shape{1, c0, 1, 1});
  for (int i = 0; i < 3; ++i) g.pre_attention.push_back(make_res_block(init, "gen.pre" + std::to_string(i), c0));
  g.twrnn = make_twrnn(init, "gen.twrnn", c0, cfg.share_wheel_weights);
  for (int i = 0; i < 3; ++i) g.attended.push_back(make_res_block(init, "gen.att" + std::to_string(i), c0));
  for (int i = 0; i < 2; ++i) g.post_attention.push_back(make_res_block(init, "gen.post" + std::to_string(i), c0));
  for (int i = 0; i < cfg.n_ftr_blocks; ++i) {
    const std::string pre = "gen.chain" + std::to_string(i);
    if (cfg.use_ftr) {
      g.ftr_chain.push_back(make_ftr_block(init, pre, c0));
    } else {
      g.res_chain.push_back(make_res_block(init, pre, c0));
    }
  }
  g.out_weight = init.zeros("gen.out.weight", Shape{3, c0, 3, 3});
  g.out_bias = init.zeros("gen.out.bias", Shape{1, 3, 1, 1});
  return g;
}

template <typename Scalar>
DiscriminatorParams<Scalar> build_discriminator(const ModelConfig& cfg, Initializer<Scalar>& init) {
  DiscriminatorParams<Scalar> d;
  std::size_t in = 6;
  for (int l = 0; l < cfg.disc_levels; ++l) {
    const std::size_t out = static_cast<std::size_t>(cfg.disc_channels) << l;
    const std::string pre = "disc.level" + std::to_string(l);
    d.weights.push_back(init.kernel(pre + ".weight", Shape{out, in, 3, 3}));
    d.biases.push_back(init.zeros(pre + ".bias", Shape{1, out, 1, 1}));
    in = out;
  }
  d.score_weight = init.kernel("disc.score.weight", Shape{1, in, 3, 3});
  d.score_bias = init.zeros("disc.score.bias", Shape{1, 1, 1, 1});
  return d;
}

}  // namespace detail

/// Deterministic parameter construction. The generator and discriminator draw
/// from separate streams derived from config.seed.
template <typename Scalar>
Model<Scalar> init_params(const ModelConfig& config) {
  config.validate();
  Model<Scalar> m;
  m.config = config;
  Initializer<Scalar> gen_init(m.generator_set, config.seed * 2 + 1);
  m.generator = detail::build_generator(config, gen_init);
  Initializer<Scalar> disc_init(m.discriminator_set, config.seed * 2 + 2);
  m.discriminator = detail::build_discriminator(config, disc_init);
  return m;
}

template <typename Scalar>
Var<Scalar> attended_res_block(const Var<Scalar>& x, const Var<Scalar>& map, const ResBlockParams<Scalar>& p) {
  return ops::add(x, ops::mul_broadcast_channels(res_branch(x, p), map));
}

/// Image (N, 3, H, W) in [-1, 1] -> restored image, attention map and the
/// per-step maps.
template <typename Scalar>
GeneratorOutput<Scalar> generator_forward(const Var<Scalar>& image, const Model<Scalar>& model,
                                          const ForwardOptions<Scalar>& opt = {}) {
  using ops::ConvMode;
  const ModelConfig& cfg = model.config;
  const GeneratorParams<Scalar>& g = model.generator;
  const Shape s = image.shape();
  if (s.c != 3) throw ContractViolation("generator_forward: expected 3 input channels, got " + s.str());
  const std::size_t mult = cfg.spatial_multiple();
  if (s.h == 0 || s.w == 0 || s.h % mult != 0 || s.w % mult != 0) {
    throw ContractViolation("generator_forward: height and width must be divisible by " + std::to_string(mult) +
                            " (2^(encoder_levels-1)), got " + s.str());
  }
  if (opt.training && cfg.decoder_dropout > 0.0 && opt.rng == nullptr) {
    throw ContractViolation("generator_forward: training mode needs an RNG for dropout");
  }

  Var<Scalar> x = ops::relu(ops::conv2d(image, g.in_weight.var(), g.in_bias.var(), ConvMode::full_3x3, 1, 1));

  std::vector<Var<Scalar>> skips;
  for (std::size_t l = 0; l < g.encoder.size(); ++l) {
    const EncoderLevel<Scalar>& lvl = g.encoder[l];
    if (l > 0) {
      x = ops::relu(ops::conv2d(x, lvl.down_weight.var(), lvl.down_bias.var(), ConvMode::full_3x3, 2, 1));
    }
    for (const auto& blk : lvl.blocks) x = transformer_block(x, blk);
    skips.push_back(x);
  }
  for (std::size_t l = g.decoder.size(); l-- > 0;) {
    const DecoderLevel<Scalar>& lvl = g.decoder[l];
    Var<Scalar> up = ops::upsample_nearest2x(x);
    up = ops::relu(ops::conv2d(up, lvl.up_weight.var(), lvl.up_bias.var(), ConvMode::full_3x3, 1, 1));
    x = ops::conv2d(ops::concat_channels<Scalar>({up, skips[l]}), lvl.fuse_weight.var(), lvl.fuse_bias.var(),
                    ConvMode::pointwise_1x1);
    if (opt.training) x = ops::dropout(x, cfg.decoder_dropout, *opt.rng);
    for (const auto& blk : lvl.blocks) x = transformer_block(x, blk);
  }

  Var<Scalar> f = ops::relu(ops::conv2d(x, g.feat_weight.var(), g.feat_bias.var(), ConvMode::full_3x3, 1, 1));
  for (const auto& rb : g.pre_attention) f = res_block(f, rb);
  AttentionMaps<Scalar> att = attention_map(f, g.twrnn, static_cast<std::size_t>(cfg.twrnn_steps));
  for (const auto& rb : g.attended) f = attended_res_block(f, att.final_map, rb);
  for (const auto& rb : g.post_attention) f = res_block(f, rb);
  for (const auto& fb : g.ftr_chain) f = ftr_block(f, fb);
  for (const auto& rb : g.res_chain) f = res_block(f, rb);

  GeneratorOutput<Scalar> out;
  out.residual = ops::conv2d(f, g.out_weight.var(), g.out_bias.var(), ConvMode::full_3x3, 1, 1);
  out.restored = ops::add(image, out.residual);
  if (!opt.training) out.restored = ops::clamp(out.restored, Scalar(-1), Scalar(1));
  out.attention = att.final_map;
  out.attention_steps = std::move(att.steps);
  return out;
}

/// Patch scores (pre-sigmoid) for a (condition, candidate) pair.
template <typename Scalar>
Var<Scalar> discriminator_forward(const Var<Scalar>& condition, const Var<Scalar>& candidate, const Model<Scalar>& model) {
  using ops::ConvMode;
  if (!(condition.shape() == candidate.shape())) {
    throw ContractViolation("discriminator_forward: condition " + condition.shape().str() + " and candidate " +
                            candidate.shape().str() + " differ");
  }
  const DiscriminatorParams<Scalar>& d = model.discriminator;
  Var<Scalar> x = ops::concat_channels<Scalar>({condition, candidate});
  for (std::size_t l = 0; l < d.weights.size(); ++l) {
    x = ops::leaky_relu(ops::conv2d(x, d.weights[l].var(), d.biases[l].var(), ConvMode::full_3x3, 2, 1), Scalar(0.2));
  }
  return ops::conv2d(x, d.score_weight.var(), d.score_bias.var(), ConvMode::full_3x3, 1, 1);
}

}  // namespace spaformer
