#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spaformer/ops.hpp"

namespace spaformer::losses {

inline constexpr double kProbabilityEpsilon = 1e-7;

enum class GeneratorGanForm {
  non_saturating,  // minimize -log sigma(fake)
  literal,         // minimize log(1 - sigma(fake)); negative-valued
};

namespace detail {

// Elementwise -log(clamp(sigma(s))) when `real`, -log(clamp(1 - sigma(s))) otherwise,
// averaged. The clamp zeroes the gradient where it is active.
template <typename Scalar>
Var<Scalar> mean_bce_logits(const Var<Scalar>& scores, bool real) {
  const double eps = kProbabilityEpsilon;
  const auto& s = scores.value();
  const std::size_t n = s.size();
  if (n == 0) throw ContractViolation("adversarial loss: empty score grid");
  Tensor<Scalar> out(Shape{1, 1, 1, 1});
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = ops::sigmoid_scalar(static_cast<double>(s[i]));
    const double q = real ? p : 1.0 - p;
    acc -= std::log(std::min(std::max(q, eps), 1.0 - eps));
  }
  out[0] = static_cast<Scalar>(acc / static_cast<double>(n));
  return record<Scalar>(std::move(out), {scores}, [n, real, eps](Node<Scalar>& self) {
    auto& ps = *self.parents[0];
    if (!ps.requires_grad) return;
    auto& g = ps.grad_buffer();
    const double scale = static_cast<double>(self.grad[0]) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = ops::sigmoid_scalar(static_cast<double>(ps.value[i]));
      const double q = real ? p : 1.0 - p;
      if (q <= eps || q >= 1.0 - eps) continue;
      // d/ds -log(sigma) = -(1 - sigma); d/ds -log(1 - sigma) = sigma
      const double d = real ? -(1.0 - p) : p;
      g[i] += static_cast<Scalar>(scale * d);
    }
  });
}

}  // namespace detail

template <typename Scalar>
struct CganLosses {
  Var<Scalar> d_loss;
  Var<Scalar> g_loss;
};

/// d_loss = -mean log sigma(real) - mean log(1 - sigma(fake));
/// g_loss = -mean log sigma(fake) (or mean log(1 - sigma(fake)) in literal form).
template <typename Scalar>
Var<Scalar> discriminator_loss(const Var<Scalar>& real_scores, const Var<Scalar>& fake_scores) {
  require_same_shape(real_scores.shape(), fake_scores.shape(), "cgan_losses");
  return ops::add(detail::mean_bce_logits(real_scores, true), detail::mean_bce_logits(fake_scores, false));
}

template <typename Scalar>
Var<Scalar> generator_adversarial_loss(const Var<Scalar>& fake_scores,
                                       GeneratorGanForm form = GeneratorGanForm::non_saturating) {
  if (form == GeneratorGanForm::non_saturating) return detail::mean_bce_logits(fake_scores, true);
  return ops::scale(detail::mean_bce_logits(fake_scores, false), Scalar(-1));
}

template <typename Scalar>
CganLosses<Scalar> cgan_losses(const Var<Scalar>& real_scores, const Var<Scalar>& fake_scores,
                               GeneratorGanForm form = GeneratorGanForm::non_saturating) {
  return {discriminator_loss(real_scores, fake_scores), generator_adversarial_loss(fake_scores, form)};
}

/// (1 / (divisor * H * W)) * sum_c weight_c * sum_pixels |output - target|,
/// averaged over the batch. divisor defaults to 4.
template <typename Scalar>
Var<Scalar> l1_weighted(const Var<Scalar>& output, const Var<Scalar>& target, const std::vector<double>& channel_weights,
                        double divisor = 4.0) {
  require_same_shape(output.shape(), target.shape(), "l1_weighted");
  const Shape s = output.shape();
  if (channel_weights.size() != s.c) {
    throw ContractViolation("l1_weighted: " + std::to_string(channel_weights.size()) + " channel weights for " +
                            std::to_string(s.c) + " channels");
  }
  const double norm = 1.0 / (divisor * static_cast<double>(s.plane()) * static_cast<double>(s.n));
  double acc = 0.0;
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const Scalar* o = output.value().plane(b, c);
      const Scalar* t = target.value().plane(b, c);
      double part = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) part += std::abs(static_cast<double>(o[i]) - static_cast<double>(t[i]));
      acc += channel_weights[c] * part;
    }
  }
  Tensor<Scalar> out(Shape{1, 1, 1, 1});
  out[0] = static_cast<Scalar>(acc * norm);
  return record<Scalar>(std::move(out), {output, target}, [s, norm, channel_weights](Node<Scalar>& self) {
    auto& po = *self.parents[0];
    auto& pt = *self.parents[1];
    const double g0 = static_cast<double>(self.grad[0]) * norm;
    for (std::size_t b = 0; b < s.n; ++b) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const Scalar* o = po.value.plane(b, c);
        const Scalar* t = pt.value.plane(b, c);
        const double w = g0 * channel_weights[c];
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const double d = static_cast<double>(o[i]) - static_cast<double>(t[i]);
          const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
          if (po.requires_grad) po.grad_buffer().plane(b, c)[i] += static_cast<Scalar>(w * sg);
          if (pt.requires_grad) pt.grad_buffer().plane(b, c)[i] -= static_cast<Scalar>(w * sg);
        }
      }
    }
  });
}

template <typename Scalar>
void require_binary_mask(const Tensor<Scalar>& m, const char* op) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double v = static_cast<double>(m[i]);
    if (std::abs(v) > 1e-6 && std::abs(v - 1.0) > 1e-6) {
      throw ContractViolation(std::string(op) + ": mask value " + std::to_string(v) + " at index " +
                              std::to_string(i) + " is not binary");
    }
  }
}

/// ||A - M||^2 as a mean over elements (or a sum when `mean` is false).
template <typename Scalar>
Var<Scalar> attention_loss(const Var<Scalar>& map, const Var<Scalar>& mask, bool mean = true) {
  require_same_shape(map.shape(), mask.shape(), "attention_loss");
  if (map.shape().c != 1) throw ContractViolation("attention_loss: map must have one channel, got " + map.shape().str());
  require_binary_mask(mask.value(), "attention_loss");
  const std::size_t n = map.size();
  const double norm = mean ? 1.0 / static_cast<double>(n) : 1.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(map.value()[i]) - static_cast<double>(mask.value()[i]);
    acc += d * d;
  }
  Tensor<Scalar> out(Shape{1, 1, 1, 1});
  out[0] = static_cast<Scalar>(acc * norm);
  return record<Scalar>(std::move(out), {map, mask}, [n, norm](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pm = *self.parents[1];
    const double g0 = static_cast<double>(self.grad[0]) * norm;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = 2.0 * g0 * (static_cast<double>(pa.value[i]) - static_cast<double>(pm.value[i]));
      if (pa.requires_grad) pa.grad_buffer()[i] += static_cast<Scalar>(d);
      if (pm.requires_grad) pm.grad_buffer()[i] -= static_cast<Scalar>(d);
    }
  });
}

/// Sum of attention_loss over every progressive step, each against the same mask.
template <typename Scalar>
Var<Scalar> attention_loss_steps(const std::vector<Var<Scalar>>& maps, const Var<Scalar>& mask, bool mean = true) {
  if (maps.empty()) throw ContractViolation("attention_loss_steps: no maps");
  Var<Scalar> total = attention_loss(maps.front(), mask, mean);
  for (std::size_t i = 1; i < maps.size(); ++i) total = ops::add(total, attention_loss(maps[i], mask, mean));
  return total;
}

struct LossWeights {
  double l1 = 1.0;
  double cgan = 1.0;
  double attention = 1.0;
};

struct LossBreakdown {
  double l_cgan_g = 0.0;
  double l_cgan_d = 0.0;
  double l1 = 0.0;
  double l_attention = 0.0;
  double total = 0.0;
};

/// Generator objective l1 + cgan_g + attention, each scaled by its weight.
/// A zero weight drops the term from the graph entirely.
template <typename Scalar>
Var<Scalar> total_loss(const Var<Scalar>& l1, const Var<Scalar>& cgan_g, const Var<Scalar>& attention,
                       const LossWeights& w = {}) {
  std::vector<Var<Scalar>> terms;
  auto push = [&](const Var<Scalar>& v, double weight) {
    if (weight == 0.0 || !v.defined()) return;
    terms.push_back(weight == 1.0 ? v : ops::scale(v, static_cast<Scalar>(weight)));
  };
  push(l1, w.l1);
  push(cgan_g, w.cgan);
  push(attention, w.attention);
  if (terms.empty()) return constant(Tensor<Scalar>(Shape{1, 1, 1, 1}));
  Var<Scalar> acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ops::add(acc, terms[i]);
  return acc;
}

inline LossBreakdown breakdown(double l1, double cgan_g, double cgan_d, double attention, const LossWeights& w = {}) {
  LossBreakdown b;
  b.l1 = l1;
  b.l_cgan_g = cgan_g;
  b.l_cgan_d = cgan_d;
  b.l_attention = attention;
  b.total = w.l1 * l1 + w.cgan * cgan_g + w.attention * attention;
  return b;
}

}  // namespace spaformer::losses
