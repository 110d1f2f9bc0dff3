#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spaformer/ops.hpp"
#include "spaformer/params.hpp"

namespace spaformer {

/// Direction the recurrence travels: `right` scans left-to-right, `down`
/// scans top-to-bottom, and so on.
enum class ScanDirection { up, down, left, right };

inline constexpr std::array<ScanDirection, 4> kScanDirections{ScanDirection::up, ScanDirection::down,
                                                               ScanDirection::left, ScanDirection::right};

inline const char* to_string(ScanDirection d) {
  switch (d) {
    case ScanDirection::up: return "up";
    case ScanDirection::down: return "down";
    case ScanDirection::left: return "left";
    case ScanDirection::right: return "right";
  }
  return "?";
}

namespace detail {

// Maps (step t, lane p) to a flat offset inside one channel plane.
struct ScanGeometry {
  std::size_t h, w, length, lanes;
  ScanDirection dir;

  ScanGeometry(std::size_t height, std::size_t width, ScanDirection d) : h(height), w(width), dir(d) {
    const bool vertical = d == ScanDirection::up || d == ScanDirection::down;
    length = vertical ? h : w;
    lanes = vertical ? w : h;
  }

  std::size_t offset(std::size_t t, std::size_t p) const {
    switch (dir) {
      case ScanDirection::down: return t * w + p;
      case ScanDirection::up: return (h - 1 - t) * w + p;
      case ScanDirection::right: return p * w + t;
      case ScanDirection::left: return p * w + (w - 1 - t);
    }
    return 0;
  }
};

}  // namespace detail

/// h(0) = relu(f(0)); h(t) = relu(f(t) + G h(t-1)) along `dir`, where G is a
/// (C, C, 1, 1) channel mix. Output has the shape of f.
template <typename Scalar>
Var<Scalar> directional_scan(const Var<Scalar>& f, const Var<Scalar>& g, ScanDirection dir) {
  const Shape s = f.shape();
  const Shape gs = g.shape();
  if (gs.n != s.c || gs.c != s.c || gs.h != 1 || gs.w != 1) {
    throw ContractViolation("directional_scan: kernel " + gs.str() + " does not mix the " + std::to_string(s.c) +
                            " channels of " + s.str());
  }
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const detail::ScanGeometry geo(s.h, s.w, dir);
  const auto C = static_cast<Eigen::Index>(s.c);
  const auto P = static_cast<Eigen::Index>(geo.lanes);
  const Eigen::Map<const RowMat> gm(g.value().data(), C, C);

  Tensor<Scalar> out(s);
  Mat prev(C, P), cur(C, P);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t t = 0; t < geo.length; ++t) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const Scalar* fp = f.value().plane(b, c);
        for (std::size_t p = 0; p < geo.lanes; ++p) cur(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p)) = fp[geo.offset(t, p)];
      }
      if (t > 0) cur.noalias() += gm * prev;
      cur = cur.cwiseMax(Scalar(0));
      for (std::size_t c = 0; c < s.c; ++c) {
        Scalar* op = out.plane(b, c);
        for (std::size_t p = 0; p < geo.lanes; ++p) op[geo.offset(t, p)] = cur(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p));
      }
      std::swap(prev, cur);
    }
  }

  return record<Scalar>(std::move(out), {f, g}, [s, geo, C, P](Node<Scalar>& self) {
    auto& pf = *self.parents[0];
    auto& pg = *self.parents[1];
    const Eigen::Map<const RowMat> gmat(pg.value.data(), C, C);
    Mat carry = Mat::Zero(C, P);  // dL/dh(t) arriving from step t+1
    Mat da(C, P), hprev(C, P);
    RowMat dg = RowMat::Zero(C, C);
    for (std::size_t b = 0; b < s.n; ++b) {
      carry.setZero();
      for (std::size_t tt = geo.length; tt-- > 0;) {
        for (std::size_t c = 0; c < s.c; ++c) {
          const Scalar* gp = self.grad.plane(b, c);
          const Scalar* hp = self.value.plane(b, c);
          for (std::size_t p = 0; p < geo.lanes; ++p) {
            const std::size_t o = geo.offset(tt, p);
            const auto ci = static_cast<Eigen::Index>(c);
            const auto pi = static_cast<Eigen::Index>(p);
            da(ci, pi) = hp[o] > Scalar(0) ? gp[o] + carry(ci, pi) : Scalar(0);
          }
        }
        if (pf.requires_grad) {
          for (std::size_t c = 0; c < s.c; ++c) {
            Scalar* gf = pf.grad_buffer().plane(b, c);
            for (std::size_t p = 0; p < geo.lanes; ++p) gf[geo.offset(tt, p)] += da(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p));
          }
        }
        if (tt > 0) {
          for (std::size_t c = 0; c < s.c; ++c) {
            const Scalar* hp = self.value.plane(b, c);
            for (std::size_t p = 0; p < geo.lanes; ++p) hprev(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p)) = hp[geo.offset(tt - 1, p)];
          }
          if (pg.requires_grad) dg.noalias() += da * hprev.transpose();
          carry.noalias() = gmat.transpose() * da;
        }
      }
    }
    if (pg.requires_grad) Eigen::Map<RowMat>(pg.grad_buffer().data(), C, C) += dg;
  });
}

/// One wheel: the four direction kernels plus the 4C -> C mix.
template <typename Scalar>
struct DirectionalWeights {
  Parameter<Scalar> g_up, g_down, g_left, g_right;  // (C, C, 1, 1)
  Parameter<Scalar> mix;                            // (C, 4C, 1, 1)

  const Parameter<Scalar>& kernel(ScanDirection d) const {
    switch (d) {
      case ScanDirection::up: return g_up;
      case ScanDirection::down: return g_down;
      case ScanDirection::left: return g_left;
      case ScanDirection::right: return g_right;
    }
    return g_up;
  }
};

template <typename Scalar>
struct TwoWheelWeights {
  DirectionalWeights<Scalar> first;
  DirectionalWeights<Scalar> second;
};

/// Attention head: two wheels followed by a C -> 1 projection and sigmoid.
template <typename Scalar>
struct TwrnnParams {
  TwoWheelWeights<Scalar> wheels;
  Parameter<Scalar> proj_weight;  // (1, C, 1, 1)
  Parameter<Scalar> proj_bias;    // (1, 1, 1, 1)
};

// Direction kernels use a reduced gain so the recurrence starts contractive.
inline constexpr double kRecurrentGain = 0.5;

template <typename Scalar>
DirectionalWeights<Scalar> make_directional_weights(Initializer<Scalar>& init, const std::string& prefix,
                                                    std::size_t channels) {
  const std::size_t c = channels;
  DirectionalWeights<Scalar> w;
  w.g_up = init.kernel(prefix + ".g_up", Shape{c, c, 1, 1}, kRecurrentGain);
  w.g_down = init.kernel(prefix + ".g_down", Shape{c, c, 1, 1}, kRecurrentGain);
  w.g_left = init.kernel(prefix + ".g_left", Shape{c, c, 1, 1}, kRecurrentGain);
  w.g_right = init.kernel(prefix + ".g_right", Shape{c, c, 1, 1}, kRecurrentGain);
  w.mix = init.kernel(prefix + ".mix", Shape{c, 4 * c, 1, 1});
  return w;
}

template <typename Scalar>
TwrnnParams<Scalar> make_twrnn(Initializer<Scalar>& init, const std::string& prefix, std::size_t channels,
                               bool share_wheels = false) {
  TwrnnParams<Scalar> p;
  p.wheels.first = make_directional_weights(init, prefix + ".wheel1", channels);
  p.wheels.second = share_wheels ? p.wheels.first : make_directional_weights(init, prefix + ".wheel2", channels);
  p.proj_weight = init.kernel(prefix + ".proj.weight", Shape{1, channels, 1, 1});
  p.proj_bias = init.zeros(prefix + ".proj.bias", Shape{1, 1, 1, 1});
  return p;
}

/// mix(concat(scan_up, scan_down, scan_left, scan_right)).
template <typename Scalar>
Var<Scalar> wheel_pass(const Var<Scalar>& x, const DirectionalWeights<Scalar>& w) {
  std::vector<Var<Scalar>> scans;
  scans.reserve(4);
  for (ScanDirection d : kScanDirections) scans.push_back(directional_scan(x, w.kernel(d).var(), d));
  return ops::conv2d(ops::concat_channels(scans), w.mix.var(), ops::ConvMode::pointwise_1x1);
}

template <typename Scalar>
Var<Scalar> two_wheel_pass(const Var<Scalar>& x, const TwoWheelWeights<Scalar>& w) {
  return wheel_pass(wheel_pass(x, w.first), w.second);
}

template <typename Scalar>
struct AttentionMaps {
  Var<Scalar> final_map;             // (N, 1, H, W), values in [0, 1]
  std::vector<Var<Scalar>> steps;    // one map per progressive step
};

/// Progressive spatial attention. Each step's map re-weights the original
/// features for the next step.
template <typename Scalar>
AttentionMaps<Scalar> attention_map(const Var<Scalar>& features, const TwrnnParams<Scalar>& p, std::size_t steps) {
  if (steps == 0) throw ContractViolation("attention_map: steps must be at least 1");
  AttentionMaps<Scalar> out;
  Var<Scalar> current = features;
  for (std::size_t i = 0; i < steps; ++i) {
    const Var<Scalar> h = two_wheel_pass(current, p.wheels);
    const Var<Scalar> logits = ops::conv2d(h, p.proj_weight.var(), p.proj_bias.var(), ops::ConvMode::pointwise_1x1);
    const Var<Scalar> map = ops::sigmoid(logits);
    out.steps.push_back(map);
    current = ops::mul_broadcast_channels(features, map);
  }
  out.final_map = out.steps.back();
  return out;
}

}  // namespace spaformer
