#pragma once

#include <cmath>
#include <string>

#include "spaformer/ops.hpp"
#include "spaformer/params.hpp"

namespace spaformer {

// ---------------------------------------------------------------------------
// Transposed (channel) attention block

template <typename Scalar>
struct TransformerBlockParams {
  Parameter<Scalar> norm_gain, norm_shift;
  Parameter<Scalar> q_point, k_point, v_point;  // (C, C, 1, 1)
  Parameter<Scalar> q_depth, k_depth, v_depth;  // (C, 1, 3, 3)
  Parameter<Scalar> out_point;                  // (C, C, 1, 1)
  Parameter<Scalar> log_alpha;                  // alpha = exp(log_alpha) > 0
  bool normalize_qk = true;

  std::size_t channels() const { return norm_gain.value().size(); }
};

template <typename Scalar>
TransformerBlockParams<Scalar> make_transformer_block(Initializer<Scalar>& init, const std::string& prefix,
                                                      std::size_t channels, bool normalize_qk = true) {
  const std::size_t c = channels;
  TransformerBlockParams<Scalar> p;
  p.norm_gain = init.constant(prefix + ".norm.gain", Shape{1, c, 1, 1}, Scalar(1));
  p.norm_shift = init.zeros(prefix + ".norm.shift", Shape{1, c, 1, 1});
  p.q_point = init.kernel(prefix + ".q.point", Shape{c, c, 1, 1});
  p.q_depth = init.kernel(prefix + ".q.depth", Shape{c, 1, 3, 3});
  p.k_point = init.kernel(prefix + ".k.point", Shape{c, c, 1, 1});
  p.k_depth = init.kernel(prefix + ".k.depth", Shape{c, 1, 3, 3});
  p.v_point = init.kernel(prefix + ".v.point", Shape{c, c, 1, 1});
  p.v_depth = init.kernel(prefix + ".v.depth", Shape{c, 1, 3, 3});
  p.out_point = init.kernel(prefix + ".out.point", Shape{c, c, 1, 1});
  p.log_alpha = init.constant(prefix + ".log_alpha", Shape{1, 1, 1, 1},
                              static_cast<Scalar>(std::log(std::sqrt(static_cast<double>(c)))));
  p.normalize_qk = normalize_qk;
  return p;
}

/// Intermediates of one attention evaluation, exposed for inspection.
template <typename Scalar>
struct ChannelAttention {
  Var<Scalar> attention;  // (N, 1, C, C), rows sum to one
  Var<Scalar> mixed;      // attention applied to V, reshaped to (N, C, H, W)
};

template <typename Scalar>
ChannelAttention<Scalar> channel_attention(const Var<Scalar>& x, const TransformerBlockParams<Scalar>& p) {
  using ops::ConvMode;
  const Shape s = x.shape();
  if (s.c == 0 || s.h == 0 || s.w == 0) {
    throw ContractViolation("transformer_block: channels and spatial extents must be non-zero, got " + s.str());
  }
  const Var<Scalar> y = ops::layer_norm_channels(x, p.norm_gain.var(), p.norm_shift.var());
  auto project = [&](const Parameter<Scalar>& point, const Parameter<Scalar>& depth) {
    const Var<Scalar> pw = ops::conv2d(y, point.var(), ConvMode::pointwise_1x1);
    const Var<Scalar> dw = ops::conv2d(pw, depth.var(), ConvMode::depthwise_3x3, 1, 1);
    return ops::reshape(dw, Shape{s.n, 1, s.c, s.plane()});
  };
  Var<Scalar> q = project(p.q_point, p.q_depth);
  Var<Scalar> k = project(p.k_point, p.k_depth);
  const Var<Scalar> v = project(p.v_point, p.v_depth);
  if (p.normalize_qk) {
    q = ops::l2_normalize_last(q);
    k = ops::l2_normalize_last(k);
  }
  const Var<Scalar> inv_alpha = ops::exp(ops::scale(p.log_alpha.var(), Scalar(-1)));
  const Var<Scalar> logits = ops::scale_by(ops::matmul(k, q, /*transpose_b=*/true), inv_alpha);
  const Var<Scalar> attn = ops::softmax_last(logits);
  const Var<Scalar> mixed = ops::reshape(ops::matmul(attn, v), s);
  return {attn, mixed};
}

/// X + W_out * (softmax(K Q^T / alpha) V), with Q, K, V from a pointwise then
/// depthwise projection of the channel-normalized input.
template <typename Scalar>
Var<Scalar> transformer_block(const Var<Scalar>& x, const TransformerBlockParams<Scalar>& p) {
  const ChannelAttention<Scalar> a = channel_attention(x, p);
  return ops::add(ops::conv2d(a.mixed, p.out_point.var(), ops::ConvMode::pointwise_1x1), x);
}

// ---------------------------------------------------------------------------
// Residual block

template <typename Scalar>
struct ResBlockParams {
  Parameter<Scalar> conv1, bias1, conv2, bias2;
};

template <typename Scalar>
ResBlockParams<Scalar> make_res_block(Initializer<Scalar>& init, const std::string& prefix, std::size_t channels) {
  const std::size_t c = channels;
  ResBlockParams<Scalar> p;
  p.conv1 = init.kernel(prefix + ".conv1.weight", Shape{c, c, 3, 3});
  p.bias1 = init.zeros(prefix + ".conv1.bias", Shape{1, c, 1, 1});
  p.conv2 = init.kernel(prefix + ".conv2.weight", Shape{c, c, 3, 3});
  p.bias2 = init.zeros(prefix + ".conv2.bias", Shape{1, c, 1, 1});
  return p;
}

/// conv -> ReLU -> conv, without the skip.
template <typename Scalar>
Var<Scalar> res_branch(const Var<Scalar>& x, const ResBlockParams<Scalar>& p) {
  using ops::ConvMode;
  const Var<Scalar> h = ops::relu(ops::conv2d(x, p.conv1.var(), p.bias1.var(), ConvMode::full_3x3, 1, 1));
  return ops::conv2d(h, p.conv2.var(), p.bias2.var(), ConvMode::full_3x3, 1, 1);
}

template <typename Scalar>
Var<Scalar> res_block(const Var<Scalar>& x, const ResBlockParams<Scalar>& p) {
  return ops::add(x, res_branch(x, p));
}

// ---------------------------------------------------------------------------
// Fourier transform residual block

template <typename Scalar>
struct FtrBlockParams {
  ResBlockParams<Scalar> spatial;
  Parameter<Scalar> freq_in;   // (2C, 2C, 1, 1) over stacked real/imag channels
  Parameter<Scalar> freq_out;  // (2C, 2C, 1, 1)
};

/// The spatial branch reuses the residual block's parameter names, so a
/// residual chain's parameters are a subset of the equivalent FTR chain's.
template <typename Scalar>
FtrBlockParams<Scalar> make_ftr_block(Initializer<Scalar>& init, const std::string& prefix, std::size_t channels) {
  FtrBlockParams<Scalar> p;
  p.spatial = make_res_block(init, prefix, channels);
  p.freq_in = init.kernel(prefix + ".freq.in", Shape{2 * channels, 2 * channels, 1, 1});
  p.freq_out = init.kernel(prefix + ".freq.out", Shape{2 * channels, 2 * channels, 1, 1});
  return p;
}

template <typename Scalar>
Var<Scalar> ftr_frequency_branch(const Var<Scalar>& x, const FtrBlockParams<Scalar>& p) {
  using ops::ConvMode;
  const Var<Scalar> spectrum = ops::rfft2_stacked(x);
  const Var<Scalar> h = ops::relu(ops::conv2d(spectrum, p.freq_in.var(), ConvMode::pointwise_1x1));
  const Var<Scalar> mixed = ops::conv2d(h, p.freq_out.var(), ConvMode::pointwise_1x1);
  return ops::irfft2_stacked(mixed, x.shape().w);
}

template <typename Scalar>
Var<Scalar> ftr_block(const Var<Scalar>& x, const FtrBlockParams<Scalar>& p) {
  return ops::add(ops::add(x, ftr_frequency_branch(x, p)), res_branch(x, p.spatial));
}

}  // namespace spaformer
