#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spaformer/autodiff.hpp"
#include "spaformer/fft.hpp"
#include "spaformer/tensor.hpp"

namespace spaformer::ops {

// ---------------------------------------------------------------------------
// Elementwise family

namespace detail {

template <typename Scalar, typename F, typename DF>
Var<Scalar> unary(const Var<Scalar>& x, F f, DF df) {
  Tensor<Scalar> out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return record<Scalar>(std::move(out), {x}, [df](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

template <typename Scalar>
void accumulate(Node<Scalar>& parent, const Tensor<Scalar>& delta) {
  if (!parent.requires_grad) return;
  parent.grad_buffer().array() += delta.array();
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() + b.value().array();
  return record<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() - b.value().array();
  return record<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer().array() -= self.grad.array();
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() * b.value().array();
  return record<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_buffer().array() += self.grad.array() * pb.value.array();
    if (pb.requires_grad) pb.grad_buffer().array() += self.grad.array() * pa.value.array();
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor) {
  return detail::unary(
      x, [factor](Scalar v) { return v * factor; }, [factor](Scalar, Scalar) { return factor; });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& x, Scalar offset) {
  return detail::unary(
      x, [offset](Scalar v) { return v + offset; }, [](Scalar, Scalar) { return Scalar(1); });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  return detail::unary(
      x, [](Scalar v) { return v > Scalar(0) ? v : Scalar(0); },
      [](Scalar v, Scalar) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& x, Scalar slope = Scalar(0.2)) {
  return detail::unary(
      x, [slope](Scalar v) { return v > Scalar(0) ? v : slope * v; },
      [slope](Scalar v, Scalar) { return v > Scalar(0) ? Scalar(1) : slope; });
}

template <typename Scalar>
Scalar sigmoid_scalar(Scalar v) {
  if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  return detail::unary(
      x, [](Scalar v) { return sigmoid_scalar(v); }, [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& x) {
  return detail::unary(
      x, [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar y) { return y; });
}

/// Clamp to [lo, hi]; gradient passes only strictly inside the range.
template <typename Scalar>
Var<Scalar> clamp(const Var<Scalar>& x, Scalar lo, Scalar hi) {
  return detail::unary(
      x, [lo, hi](Scalar v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](Scalar v, Scalar) { return (v > lo && v < hi) ? Scalar(1) : Scalar(0); });
}

/// x * s where s holds exactly one value.
template <typename Scalar>
Var<Scalar> scale_by(const Var<Scalar>& x, const Var<Scalar>& s) {
  if (s.size() != 1) throw ContractViolation("scale_by: factor must hold one value, got " + s.shape().str());
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array() * s.value()[0];
  return record<Scalar>(std::move(out), {x, s}, [](Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& ps = *self.parents[1];
    if (px.requires_grad) px.grad_buffer().array() += self.grad.array() * ps.value[0];
    if (ps.requires_grad) ps.grad_buffer()[0] += (self.grad.array() * px.value.array()).sum();
  });
}

/// (N, C, H, W) * (N, 1, H, W), broadcast over channels.
template <typename Scalar>
Var<Scalar> mul_broadcast_channels(const Var<Scalar>& x, const Var<Scalar>& m) {
  const Shape xs = x.shape();
  const Shape ms = m.shape();
  if (ms.n != xs.n || ms.c != 1 || ms.h != xs.h || ms.w != xs.w) {
    throw ContractViolation("mul_broadcast_channels: map " + ms.str() + " does not broadcast over " + xs.str());
  }
  Tensor<Scalar> out(xs);
  const std::size_t hw = xs.plane();
  for (std::size_t b = 0; b < xs.n; ++b) {
    const Scalar* mp = m.value().plane(b, 0);
    for (std::size_t c = 0; c < xs.c; ++c) {
      const Scalar* xp = x.value().plane(b, c);
      Scalar* op = out.plane(b, c);
      for (std::size_t i = 0; i < hw; ++i) op[i] = xp[i] * mp[i];
    }
  }
  return record<Scalar>(std::move(out), {x, m}, [xs, hw](Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& pm = *self.parents[1];
    for (std::size_t b = 0; b < xs.n; ++b) {
      for (std::size_t c = 0; c < xs.c; ++c) {
        const Scalar* g = self.grad.plane(b, c);
        if (px.requires_grad) {
          Scalar* gx = px.grad_buffer().plane(b, c);
          const Scalar* mp = pm.value.plane(b, 0);
          for (std::size_t i = 0; i < hw; ++i) gx[i] += g[i] * mp[i];
        }
        if (pm.requires_grad) {
          Scalar* gm = pm.grad_buffer().plane(b, 0);
          const Scalar* xp = px.value.plane(b, c);
          for (std::size_t i = 0; i < hw; ++i) gm[i] += g[i] * xp[i];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Tensor<Scalar> out(Shape{1, 1, 1, 1});
  out[0] = x.value().array().sum();
  return record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (p.requires_grad) p.grad_buffer().array() += self.grad[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

// ---------------------------------------------------------------------------
// Shape plumbing

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape s) {
  Tensor<Scalar> out = x.value().reshaped(s);
  return record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (p.requires_grad) p.grad_buffer().array() += self.grad.array();
  });
}

template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ContractViolation("concat_channels: no inputs");
  Shape s = parts.front().shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w) {
      throw ContractViolation("concat_channels: incompatible shapes " + s.str() + " and " + ps.str());
    }
    total += ps.c;
  }
  Shape os{s.n, total, s.h, s.w};
  Tensor<Scalar> out(os);
  const std::size_t hw = s.plane();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t b = 0; b < s.n; ++b) {
      std::copy_n(p.value().plane(b, 0), p.shape().c * hw, out.plane(b, offset));
    }
    offset += p.shape().c;
  }
  return record<Scalar>(std::move(out), parts, [os, hw](Node<Scalar>& self) {
    std::size_t off = 0;
    for (auto& parent : self.parents) {
      const std::size_t pc = parent->value.shape().c;
      if (parent->requires_grad) {
        auto& g = parent->grad_buffer();
        for (std::size_t b = 0; b < os.n; ++b) {
          const Scalar* src = self.grad.plane(b, off);
          Scalar* dst = g.plane(b, 0);
          for (std::size_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
        }
      }
      off += pc;
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& x, std::size_t begin, std::size_t count) {
  const Shape s = x.shape();
  if (begin + count > s.c) {
    throw ContractViolation("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                            ") out of range for " + s.str());
  }
  Tensor<Scalar> out(Shape{s.n, count, s.h, s.w});
  const std::size_t hw = s.plane();
  for (std::size_t b = 0; b < s.n; ++b) std::copy_n(x.value().plane(b, begin), count * hw, out.plane(b, 0));
  return record<Scalar>(std::move(out), {x}, [s, begin, count, hw](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t b = 0; b < s.n; ++b) {
      const Scalar* src = self.grad.plane(b, 0);
      Scalar* dst = g.plane(b, begin);
      for (std::size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
    }
  });
}

/// Swap the two spatial axes.
template <typename Scalar>
Var<Scalar> transpose_hw(const Var<Scalar>& x) {
  const Shape s = x.shape();
  Tensor<Scalar> out(Shape{s.n, s.c, s.w, s.h});
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx) out(b, c, xx, y) = x.value()(b, c, y, xx);
  return record<Scalar>(std::move(out), {x}, [s](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t b = 0; b < s.n; ++b)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t y = 0; y < s.h; ++y)
          for (std::size_t xx = 0; xx < s.w; ++xx) g(b, c, y, xx) += self.grad(b, c, xx, y);
  });
}

template <typename Scalar>
Var<Scalar> upsample_nearest2x(const Var<Scalar>& x) {
  const Shape s = x.shape();
  Tensor<Scalar> out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < 2 * s.h; ++y)
        for (std::size_t xx = 0; xx < 2 * s.w; ++xx) out(b, c, y, xx) = x.value()(b, c, y / 2, xx / 2);
  return record<Scalar>(std::move(out), {x}, [s](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t b = 0; b < s.n; ++b)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t y = 0; y < 2 * s.h; ++y)
          for (std::size_t xx = 0; xx < 2 * s.w; ++xx) g(b, c, y / 2, xx / 2) += self.grad(b, c, y, xx);
  });
}

/// Inverted dropout. Identity when rate is 0.
template <typename Scalar, typename Rng>
Var<Scalar> dropout(const Var<Scalar>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractViolation("dropout: rate must be below 1");
  Tensor<Scalar> mask(x.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar gain = Scalar(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? gain : Scalar(0);
  return mul(x, constant(std::move(mask)));
}

// ---------------------------------------------------------------------------
// Convolution

enum class ConvMode { pointwise_1x1, depthwise_3x3, full_3x3 };

inline const char* to_string(ConvMode m) {
  switch (m) {
    case ConvMode::pointwise_1x1: return "pointwise_1x1";
    case ConvMode::depthwise_3x3: return "depthwise_3x3";
    case ConvMode::full_3x3: return "full_3x3";
  }
  return "?";
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding) {
  if (in + 2 * padding < k) return 0;
  return (in + 2 * padding - k) / stride + 1;
}

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t cin, h, w, k, stride, pad, ho, wo;
};

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
  cols.resize(static_cast<Eigen::Index>(g.cin * g.k * g.k), static_cast<Eigen::Index>(g.ho * g.wo));
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const Scalar* xp = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        Scalar* row = cols.data() + ((ci * g.k + ky) * g.k + kx) * g.ho * g.wo;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] = inside ? xp[iy * static_cast<std::ptrdiff_t>(g.w) + ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* gx) {
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    Scalar* xp = gx + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const Scalar* row = cols.data() + ((ci * g.k + ky) * g.k + kx) * g.ho * g.wo;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            xp[iy * static_cast<std::ptrdiff_t>(g.w) + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Var<Scalar> dense_conv(const Var<Scalar>& x, const Var<Scalar>& kernel, const Var<Scalar>& bias, std::size_t k,
                       std::size_t stride, std::size_t padding) {
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  const std::size_t cout = ks.n;
  const ConvGeometry geo{xs.c, xs.h, xs.w, k, stride, padding, conv_out_extent(xs.h, k, stride, padding),
                         conv_out_extent(xs.w, k, stride, padding)};
  if (geo.ho == 0 || geo.wo == 0) {
    throw ContractViolation("conv2d: input " + xs.str() + " too small for kernel " + ks.str());
  }
  const Shape os{xs.n, cout, geo.ho, geo.wo};
  const bool direct = (k == 1 && stride == 1 && padding == 0);
  Tensor<Scalar> out(os);
  using Map = Eigen::Map<RowMatrix<Scalar>>;
  using CMap = Eigen::Map<const RowMatrix<Scalar>>;
  const auto rows_k = static_cast<Eigen::Index>(xs.c * k * k);
  const auto npix = static_cast<Eigen::Index>(geo.ho * geo.wo);
  CMap wmat(kernel.value().data(), static_cast<Eigen::Index>(cout), rows_k);
  RowMatrix<Scalar> cols;
  for (std::size_t b = 0; b < xs.n; ++b) {
    Map ob(out.plane(b, 0), static_cast<Eigen::Index>(cout), npix);
    if (direct) {
      ob.noalias() = wmat * CMap(x.value().plane(b, 0), rows_k, npix);
    } else {
      im2col(x.value().plane(b, 0), geo, cols);
      ob.noalias() = wmat * cols;
    }
    if (bias.defined()) {
      for (std::size_t co = 0; co < cout; ++co) ob.row(static_cast<Eigen::Index>(co)).array() += bias.value()[co];
    }
  }
  std::vector<Var<Scalar>> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return record<Scalar>(std::move(out), std::move(inputs), [geo, xs, cout, direct, has_bias, rows_k, npix](Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& pk = *self.parents[1];
    CMap wmat(pk.value.data(), static_cast<Eigen::Index>(cout), rows_k);
    RowMatrix<Scalar> cols;
    RowMatrix<Scalar> gcols;
    for (std::size_t b = 0; b < xs.n; ++b) {
      CMap gb(self.grad.plane(b, 0), static_cast<Eigen::Index>(cout), npix);
      if (pk.requires_grad) {
        Map gw(pk.grad_buffer().data(), static_cast<Eigen::Index>(cout), rows_k);
        if (direct) {
          gw.noalias() += gb * CMap(px.value.plane(b, 0), rows_k, npix).transpose();
        } else {
          im2col(px.value.plane(b, 0), geo, cols);
          gw.noalias() += gb * cols.transpose();
        }
      }
      if (px.requires_grad) {
        if (direct) {
          Map gx(px.grad_buffer().plane(b, 0), rows_k, npix);
          gx.noalias() += wmat.transpose() * gb;
        } else {
          gcols.noalias() = wmat.transpose() * gb;
          col2im_add(gcols, geo, px.grad_buffer().plane(b, 0));
        }
      }
      if (has_bias && self.parents[2]->requires_grad) {
        auto& gbias = self.parents[2]->grad_buffer();
        for (std::size_t co = 0; co < cout; ++co) gbias[co] += gb.row(static_cast<Eigen::Index>(co)).sum();
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> depthwise_conv(const Var<Scalar>& x, const Var<Scalar>& kernel, const Var<Scalar>& bias,
                           std::size_t stride, std::size_t padding) {
  const Shape xs = x.shape();
  constexpr std::size_t k = 3;
  const std::size_t ho = conv_out_extent(xs.h, k, stride, padding);
  const std::size_t wo = conv_out_extent(xs.w, k, stride, padding);
  if (ho == 0 || wo == 0) throw ContractViolation("conv2d: input " + xs.str() + " too small for a 3x3 kernel");
  const Shape os{xs.n, xs.c, ho, wo};
  Tensor<Scalar> out(os);
  const auto& xv = x.value();
  const auto& kv = kernel.value();
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  const auto H = static_cast<std::ptrdiff_t>(xs.h);
  const auto W = static_cast<std::ptrdiff_t>(xs.w);
  for (std::size_t b = 0; b < xs.n; ++b) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const Scalar* xp = xv.plane(b, c);
      const Scalar* kp = kv.data() + c * 9;
      Scalar* op = out.plane(b, c);
      const Scalar bv = bias.defined() ? bias.value()[c] : Scalar(0);
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          Scalar acc = bv;
          for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride) + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride) + kx - pad;
              if (ix < 0 || ix >= W) continue;
              acc += kp[ky * 3 + kx] * xp[iy * W + ix];
            }
          }
          op[oy * wo + ox] = acc;
        }
      }
    }
  }
  std::vector<Var<Scalar>> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return record<Scalar>(std::move(out), std::move(inputs), [xs, ho, wo, stride, pad, H, W, has_bias](Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& pk = *self.parents[1];
    Scalar* gx_all = px.requires_grad ? px.grad_buffer().data() : nullptr;
    Scalar* gk_all = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
    Scalar* gb_all = (has_bias && self.parents[2]->requires_grad) ? self.parents[2]->grad_buffer().data() : nullptr;
    for (std::size_t b = 0; b < xs.n; ++b) {
      for (std::size_t c = 0; c < xs.c; ++c) {
        const Scalar* xp = px.value.plane(b, c);
        const Scalar* kp = pk.value.data() + c * 9;
        const Scalar* gp = self.grad.plane(b, c);
        Scalar* gx = gx_all ? gx_all + (b * xs.c + c) * xs.plane() : nullptr;
        Scalar* gk = gk_all ? gk_all + c * 9 : nullptr;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const Scalar g = gp[oy * wo + ox];
            if (gb_all) gb_all[c] += g;
            for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride) + ky - pad;
              if (iy < 0 || iy >= H) continue;
              for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride) + kx - pad;
                if (ix < 0 || ix >= W) continue;
                if (gk) gk[ky * 3 + kx] += g * xp[iy * W + ix];
                if (gx) gx[iy * W + ix] += g * kp[ky * 3 + kx];
              }
            }
          }
        }
      }
    }
  });
}

}  // namespace detail

/// 2-D convolution (cross-correlation) with zero padding.
///   pointwise_1x1: kernel (out, in, 1, 1)
///   depthwise_3x3: kernel (C, 1, 3, 3), one filter per input channel
///   full_3x3:      kernel (out, in, 3, 3)
/// bias, when given, holds one value per output channel.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& kernel, const Var<Scalar>& bias, ConvMode mode,
                   std::size_t stride = 1, std::size_t padding = 0) {
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  if (stride == 0) throw ContractViolation("conv2d: stride must be positive");
  auto mismatch = [&](const std::string& expected) {
    return ContractViolation(std::string("conv2d(") + to_string(mode) + "): kernel " + ks.str() +
                             " incompatible with input " + xs.str() + ", expected " + expected);
  };
  std::size_t cout = 0;
  switch (mode) {
    case ConvMode::pointwise_1x1:
      if (ks.c != xs.c || ks.h != 1 || ks.w != 1) throw mismatch("(out," + std::to_string(xs.c) + ",1,1)");
      cout = ks.n;
      break;
    case ConvMode::full_3x3:
      if (ks.c != xs.c || ks.h != 3 || ks.w != 3) throw mismatch("(out," + std::to_string(xs.c) + ",3,3)");
      cout = ks.n;
      break;
    case ConvMode::depthwise_3x3:
      if (ks.n != xs.c || ks.c != 1 || ks.h != 3 || ks.w != 3) throw mismatch("(" + std::to_string(xs.c) + ",1,3,3)");
      cout = xs.c;
      break;
  }
  if (bias.defined() && bias.size() != cout) {
    throw ContractViolation("conv2d: bias " + bias.shape().str() + " needs " + std::to_string(cout) + " values");
  }
  if (mode == ConvMode::depthwise_3x3) return detail::depthwise_conv(x, kernel, bias, stride, padding);
  return detail::dense_conv(x, kernel, bias, mode == ConvMode::full_3x3 ? 3 : 1, stride, padding);
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& kernel, ConvMode mode, std::size_t stride = 1,
                   std::size_t padding = 0) {
  return conv2d(x, kernel, Var<Scalar>{}, mode, stride, padding);
}

// ---------------------------------------------------------------------------
// Normalization and attention primitives

/// Per-pixel normalization over the channel axis, then per-channel gain/shift.
template <typename Scalar>
Var<Scalar> layer_norm_channels(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& shift,
                                Scalar eps = Scalar(1e-5)) {
  const Shape s = x.shape();
  if (gain.size() != s.c || shift.size() != s.c) {
    throw ContractViolation("layer_norm_channels: gain/shift need " + std::to_string(s.c) + " values, got " +
                            gain.shape().str() + " / " + shift.shape().str());
  }
  const std::size_t hw = s.plane();
  Tensor<Scalar> out(s);
  Tensor<Scalar> normed(s);
  std::vector<Scalar> inv_std(s.n * hw);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t p = 0; p < hw; ++p) {
      Scalar mu(0);
      for (std::size_t c = 0; c < s.c; ++c) mu += x.value().plane(b, c)[p];
      mu /= static_cast<Scalar>(s.c);
      Scalar var(0);
      for (std::size_t c = 0; c < s.c; ++c) {
        const Scalar d = x.value().plane(b, c)[p] - mu;
        var += d * d;
      }
      var /= static_cast<Scalar>(s.c);
      const Scalar inv = Scalar(1) / std::sqrt(var + eps);
      inv_std[b * hw + p] = inv;
      for (std::size_t c = 0; c < s.c; ++c) {
        const Scalar xh = (x.value().plane(b, c)[p] - mu) * inv;
        normed.plane(b, c)[p] = xh;
        out.plane(b, c)[p] = xh * gain.value()[c] + shift.value()[c];
      }
    }
  }
  return record<Scalar>(std::move(out), {x, gain, shift},
                        [s, hw, normed = std::move(normed), inv_std = std::move(inv_std)](Node<Scalar>& self) {
                          auto& px = *self.parents[0];
                          auto& pg = *self.parents[1];
                          auto& pb = *self.parents[2];
                          const auto C = static_cast<Scalar>(s.c);
                          std::vector<Scalar> dxh(s.c);
                          for (std::size_t b = 0; b < s.n; ++b) {
                            for (std::size_t p = 0; p < hw; ++p) {
                              Scalar m1(0), m2(0);
                              for (std::size_t c = 0; c < s.c; ++c) {
                                const Scalar g = self.grad.plane(b, c)[p];
                                const Scalar xh = normed.plane(b, c)[p];
                                if (pg.requires_grad) pg.grad_buffer()[c] += g * xh;
                                if (pb.requires_grad) pb.grad_buffer()[c] += g;
                                dxh[c] = g * pg.value[c];
                                m1 += dxh[c];
                                m2 += dxh[c] * xh;
                              }
                              if (!px.requires_grad) continue;
                              m1 /= C;
                              m2 /= C;
                              const Scalar inv = inv_std[b * hw + p];
                              for (std::size_t c = 0; c < s.c; ++c) {
                                px.grad_buffer().plane(b, c)[p] += inv * (dxh[c] - m1 - normed.plane(b, c)[p] * m2);
                              }
                            }
                          }
                        });
}

/// Softmax along the last (width) axis, max-subtracted.
template <typename Scalar>
Var<Scalar> softmax_last(const Var<Scalar>& x) {
  const Shape s = x.shape();
  const std::size_t len = s.w;
  const std::size_t rows = len == 0 ? 0 : x.size() / len;
  Tensor<Scalar> out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* in = x.value().data() + r * len;
    Scalar* o = out.data() + r * len;
    const Scalar m = *std::max_element(in, in + len);
    Scalar z(0);
    for (std::size_t i = 0; i < len; ++i) {
      o[i] = std::exp(in[i] - m);
      z += o[i];
    }
    for (std::size_t i = 0; i < len; ++i) o[i] /= z;
  }
  return record<Scalar>(std::move(out), {x}, [rows, len](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const Scalar* y = self.value.data() + r * len;
      const Scalar* gy = self.grad.data() + r * len;
      Scalar dot(0);
      for (std::size_t i = 0; i < len; ++i) dot += gy[i] * y[i];
      for (std::size_t i = 0; i < len; ++i) g[r * len + i] += y[i] * (gy[i] - dot);
    }
  });
}

/// Rows along the last axis scaled to unit L2 norm: x / sqrt(|x|^2 + eps).
template <typename Scalar>
Var<Scalar> l2_normalize_last(const Var<Scalar>& x, Scalar eps = Scalar(1e-12)) {
  const Shape s = x.shape();
  const std::size_t len = s.w;
  const std::size_t rows = len == 0 ? 0 : x.size() / len;
  Tensor<Scalar> out(s);
  std::vector<Scalar> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* in = x.value().data() + r * len;
    Scalar ss(0);
    for (std::size_t i = 0; i < len; ++i) ss += in[i] * in[i];
    const Scalar n = std::sqrt(ss + eps);
    norms[r] = n;
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] = in[i] / n;
  }
  return record<Scalar>(std::move(out), {x}, [rows, len, norms = std::move(norms)](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const Scalar* y = self.value.data() + r * len;
      const Scalar* gy = self.grad.data() + r * len;
      Scalar dot(0);
      for (std::size_t i = 0; i < len; ++i) dot += gy[i] * y[i];
      for (std::size_t i = 0; i < len; ++i) g[r * len + i] += (gy[i] - y[i] * dot) / norms[r];
    }
  });
}

/// Batched matrix product over the (h, w) planes of each (n, c) slice:
/// (M x K) * (K x P), or (M x K) * (P x K)^T when transpose_b is set.
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_b = false) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.c != bs.c) throw ContractViolation("matmul: batch mismatch " + as.str() + " vs " + bs.str());
  const std::size_t m = as.h, kdim = as.w;
  const std::size_t bk = transpose_b ? bs.w : bs.h;
  const std::size_t pdim = transpose_b ? bs.h : bs.w;
  if (bk != kdim) throw ContractViolation("matmul: inner dimensions differ " + as.str() + " vs " + bs.str());
  using RM = detail::RowMatrix<Scalar>;
  using Map = Eigen::Map<RM>;
  using CMap = Eigen::Map<const RM>;
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(kdim), P = static_cast<Eigen::Index>(pdim);
  Tensor<Scalar> out(Shape{as.n, as.c, m, pdim});
  for (std::size_t i = 0; i < as.n * as.c; ++i) {
    CMap am(a.value().data() + i * m * kdim, M, K);
    Map om(out.data() + i * m * pdim, M, P);
    if (transpose_b) {
      om.noalias() = am * CMap(b.value().data() + i * pdim * kdim, P, K).transpose();
    } else {
      om.noalias() = am * CMap(b.value().data() + i * kdim * pdim, K, P);
    }
  }
  const std::size_t batches = as.n * as.c;
  return record<Scalar>(std::move(out), {a, b}, [=](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < batches; ++i) {
      CMap g(self.grad.data() + i * m * pdim, M, P);
      CMap am(pa.value.data() + i * m * kdim, M, K);
      if (transpose_b) {
        CMap bm(pb.value.data() + i * pdim * kdim, P, K);
        if (pa.requires_grad) Map(pa.grad_buffer().data() + i * m * kdim, M, K).noalias() += g * bm;
        if (pb.requires_grad) Map(pb.grad_buffer().data() + i * pdim * kdim, P, K).noalias() += g.transpose() * am;
      } else {
        CMap bm(pb.value.data() + i * kdim * pdim, K, P);
        if (pa.requires_grad) Map(pa.grad_buffer().data() + i * m * kdim, M, K).noalias() += g * bm.transpose();
        if (pb.requires_grad) Map(pb.grad_buffer().data() + i * kdim * pdim, K, P).noalias() += am.transpose() * g;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Frequency domain

/// rfft2 with real and imaginary parts stacked on the channel axis:
/// (N, C, H, W) -> (N, 2C, H, W/2+1), real parts first.
template <typename Scalar>
Var<Scalar> rfft2_stacked(const Var<Scalar>& x) {
  const Shape s = x.shape();
  const ComplexGrid<Scalar> grid = fft::rfft2(x.value());
  const Shape gs = grid.shape;
  Tensor<Scalar> out(Shape{s.n, 2 * s.c, gs.h, gs.w});
  const std::size_t bins = gs.plane();
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (b * s.c + c) * bins;
      std::copy_n(grid.real.data() + base, bins, out.plane(b, c));
      std::copy_n(grid.imag.data() + base, bins, out.plane(b, s.c + c));
    }
  }
  return record<Scalar>(std::move(out), {x}, [s, bins](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    std::vector<fft::cplx> z(bins);
    std::vector<Scalar> plane(s.plane());
    for (std::size_t b = 0; b < s.n; ++b) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const Scalar* gr = self.grad.plane(b, c);
        const Scalar* gi = self.grad.plane(b, s.c + c);
        for (std::size_t i = 0; i < bins; ++i) z[i] = fft::cplx(gr[i], gi[i]);
        fft::detail::synthesize_plane(z, s.h, s.w, false, 1.0, plane.data());
        Scalar* gx = p.grad_buffer().plane(b, c);
        for (std::size_t i = 0; i < s.plane(); ++i) gx[i] += plane[i];
      }
    }
  });
}

/// Inverse of rfft2_stacked: (N, 2C, H, W/2+1) -> (N, C, H, width).
template <typename Scalar>
Var<Scalar> irfft2_stacked(const Var<Scalar>& spec, std::size_t width) {
  const Shape s = spec.shape();
  if (s.c % 2 != 0) throw ContractViolation("irfft2_stacked: channel count must be even, got " + s.str());
  const std::size_t c_half = s.c / 2;
  ComplexGrid<Scalar> grid(Shape{s.n, c_half, s.h, s.w});
  const std::size_t bins = s.plane();
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < c_half; ++c) {
      const std::size_t base = (b * c_half + c) * bins;
      std::copy_n(spec.value().plane(b, c), bins, grid.real.data() + base);
      std::copy_n(spec.value().plane(b, c_half + c), bins, grid.imag.data() + base);
    }
  }
  Tensor<Scalar> out = fft::irfft2(grid, width);
  return record<Scalar>(std::move(out), {spec}, [s, c_half, width](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    const double scale = 1.0 / static_cast<double>(s.h * width);
    std::vector<fft::cplx> g;
    for (std::size_t b = 0; b < s.n; ++b) {
      for (std::size_t c = 0; c < c_half; ++c) {
        fft::detail::forward_plane(self.grad.plane(b, c), s.h, width, g);
        Scalar* gr = p.grad_buffer().plane(b, c);
        Scalar* gi = p.grad_buffer().plane(b, c_half + c);
        for (std::size_t ky = 0; ky < s.h; ++ky) {
          for (std::size_t kx = 0; kx < s.w; ++kx) {
            const bool self_conjugate = kx == 0 || (width % 2 == 0 && kx == width / 2);
            const double wgt = (self_conjugate ? 1.0 : 2.0) * scale;
            const std::size_t i = ky * s.w + kx;
            gr[i] += static_cast<Scalar>(wgt * g[i].real());
            gi[i] += static_cast<Scalar>(wgt * g[i].imag());
          }
        }
      }
    }
  });
}

}  // namespace spaformer::ops
