#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "spaformer/tensor.hpp"

namespace spaformer::fft {

using cplx = std::complex<double>;

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

struct Radix2Plan {
  std::size_t n = 0;
  std::vector<std::size_t> bitrev;
  std::vector<cplx> twiddle;  // exp(-2 pi i k / n), k < n/2

  explicit Radix2Plan(std::size_t size) : n(size), bitrev(size), twiddle(size / 2) {
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      bitrev[i] = r;
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddle[k] = cplx(std::cos(a), std::sin(a));
    }
  }

  void forward(cplx* x) const {
    for (std::size_t i = 0; i < n; ++i) {
      if (i < bitrev[i]) std::swap(x[i], x[bitrev[i]]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = n / len;
      for (std::size_t start = 0; start < n; start += len) {
        for (std::size_t k = 0; k < half; ++k) {
          const cplx t = twiddle[k * stride] * x[start + k + half];
          x[start + k + half] = x[start + k] - t;
          x[start + k] += t;
        }
      }
    }
  }
};

inline const Radix2Plan& radix2_plan(std::size_t n);

// Chirp-z (Bluestein) reduction of an arbitrary-length DFT to a power-of-two
// circular convolution.
struct BluesteinPlan {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<cplx> chirp;      // exp(-pi i k^2 / n)
  std::vector<cplx> kernel_hat;  // FFT of conj(chirp), wrapped to length m

  explicit BluesteinPlan(std::size_t size) : n(size), m(next_pow2(2 * size - 1)), chirp(size), kernel_hat(m) {
    for (std::size_t k = 0; k < n; ++k) {
      // k^2 mod 2n keeps the phase argument small.
      const std::size_t k2 = (k * k) % (2 * n);
      const double a = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
      chirp[k] = cplx(std::cos(a), std::sin(a));
    }
    kernel_hat[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) {
      kernel_hat[k] = std::conj(chirp[k]);
      kernel_hat[m - k] = std::conj(chirp[k]);
    }
    radix2_plan(m).forward(kernel_hat.data());
  }

  void forward(cplx* x) const {
    const Radix2Plan& p = radix2_plan(m);
    std::vector<cplx> buf(m, cplx(0.0, 0.0));
    for (std::size_t k = 0; k < n; ++k) buf[k] = x[k] * chirp[k];
    p.forward(buf.data());
    for (std::size_t k = 0; k < m; ++k) buf[k] *= kernel_hat[k];
    // inverse via conjugation
    for (auto& v : buf) v = std::conj(v);
    p.forward(buf.data());
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) x[k] = std::conj(buf[k]) * inv_m * chirp[k];
  }
};

inline const Radix2Plan& radix2_plan(std::size_t n) {
  thread_local std::unordered_map<std::size_t, Radix2Plan> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, Radix2Plan(n)).first;
  return it->second;
}

inline const BluesteinPlan& bluestein_plan(std::size_t n) {
  thread_local std::unordered_map<std::size_t, BluesteinPlan> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, BluesteinPlan(n)).first;
  return it->second;
}

}  // namespace detail

/// In-place unnormalized DFT of length n. inverse selects exp(+2 pi i jk/n).
inline void transform(cplx* x, std::size_t n, bool inverse) {
  if (n <= 1) return;
  if (inverse) {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::conj(x[i]);
  }
  if (detail::is_pow2(n)) {
    detail::radix2_plan(n).forward(x);
  } else {
    detail::bluestein_plan(n).forward(x);
  }
  if (inverse) {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::conj(x[i]);
  }
}

inline void transform(std::vector<cplx>& x, bool inverse) { transform(x.data(), x.size(), inverse); }

namespace detail {

// Complex DFT along the rows axis of an h x wh grid held in `grid` (row-major).
inline void transform_columns(std::vector<cplx>& grid, std::size_t h, std::size_t wh, bool inverse) {
  std::vector<cplx> col(h);
  for (std::size_t kx = 0; kx < wh; ++kx) {
    for (std::size_t y = 0; y < h; ++y) col[y] = grid[y * wh + kx];
    transform(col, inverse);
    for (std::size_t y = 0; y < h; ++y) grid[y * wh + kx] = col[y];
  }
}

// Forward real-to-half-spectrum 2-D DFT of one h x w plane.
template <typename Scalar>
void forward_plane(const Scalar* in, std::size_t h, std::size_t w, std::vector<cplx>& out) {
  const std::size_t wh = w / 2 + 1;
  out.assign(h * wh, cplx(0.0, 0.0));
  std::vector<cplx> row(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) row[x] = cplx(static_cast<double>(in[y * w + x]), 0.0);
    transform(row, false);
    for (std::size_t kx = 0; kx < wh; ++kx) out[y * wh + kx] = row[kx];
  }
  transform_columns(out, h, wh, false);
}

// x[y, n] = scale * sum_k weight(k) * Re(Z[y, k] exp(+2 pi i k n / w)) after an
// inverse complex DFT along the rows axis. With Hermitian weights (1, 2, .., 2, 1)
// and scale 1/(h w) this is the inverse real transform; with unit weights and
// scale 1 it is the adjoint of the forward real transform.
template <typename Scalar>
void synthesize_plane(std::vector<cplx> grid, std::size_t h, std::size_t w, bool hermitian_weights,
                      double scale, Scalar* out) {
  const std::size_t wh = w / 2 + 1;
  transform_columns(grid, h, wh, true);
  std::vector<cplx> row(w);
  for (std::size_t y = 0; y < h; ++y) {
    std::fill(row.begin(), row.end(), cplx(0.0, 0.0));
    for (std::size_t k = 0; k < wh; ++k) {
      double wgt = 1.0;
      if (hermitian_weights && k != 0 && !(w % 2 == 0 && k == w / 2)) wgt = 2.0;
      row[k] = grid[y * wh + k] * wgt;
    }
    transform(row, true);
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = static_cast<Scalar>(row[x].real() * scale);
  }
}

}  // namespace detail

/// Forward unnormalized real 2-D transform over (h, w) of every (b, c) plane.
template <typename Scalar>
ComplexGrid<Scalar> rfft2(const Tensor<Scalar>& input) {
  const Shape s = input.shape();
  ComplexGrid<Scalar> grid(Shape{s.n, s.c, s.h, s.w / 2 + 1});
  std::vector<cplx> buf;
  const std::size_t plane_bins = s.h * (s.w / 2 + 1);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t ch = 0; ch < s.c; ++ch) {
      detail::forward_plane(input.plane(b, ch), s.h, s.w, buf);
      const std::size_t base = (b * s.c + ch) * plane_bins;
      for (std::size_t i = 0; i < plane_bins; ++i) {
        grid.real[base + i] = static_cast<Scalar>(buf[i].real());
        grid.imag[base + i] = static_cast<Scalar>(buf[i].imag());
      }
    }
  }
  return grid;
}

/// Inverse of rfft2; divides by h*w. `width` is the original spatial width.
/// Imaginary parts of self-conjugate bins are ignored.
template <typename Scalar>
Tensor<Scalar> irfft2(const ComplexGrid<Scalar>& grid, std::size_t width) {
  const Shape g = grid.shape;
  if (width / 2 + 1 != g.w) {
    throw ContractViolation("irfft2: width " + std::to_string(width) + " is inconsistent with half-spectrum width " +
                            std::to_string(g.w));
  }
  if (grid.real.size() != g.numel() || grid.imag.size() != g.numel()) {
    throw ContractViolation("irfft2: real/imag arrays do not match grid shape " + g.str());
  }
  Tensor<Scalar> out(Shape{g.n, g.c, g.h, width});
  const double scale = 1.0 / static_cast<double>(g.h * width);
  std::vector<cplx> buf(g.h * g.w);
  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t ch = 0; ch < g.c; ++ch) {
      const std::size_t base = (b * g.c + ch) * g.h * g.w;
      for (std::size_t i = 0; i < g.h * g.w; ++i) buf[i] = cplx(grid.real[base + i], grid.imag[base + i]);
      detail::synthesize_plane(buf, g.h, width, true, scale, out.plane(b, ch));
    }
  }
  return out;
}

}  // namespace spaformer::fft
