#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "spaformer/errors.hpp"
#include "spaformer/params.hpp"

namespace spaformer {

struct AdamConfig {
  double learning_rate = 4e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ContractViolation("adam: learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ContractViolation("adam: beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ContractViolation("adam: beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ContractViolation("adam: epsilon must be > 0");
  }
};

/// First/second moments per parameter, in set order, plus the step count.
template <typename Scalar>
struct AdamState {
  std::vector<Tensor<Scalar>> m, v;
  std::int64_t step = 0;

  explicit AdamState(const ParameterSet<Scalar>& set) {
    for (const auto& p : set) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    }
  }
};

/// One bias-corrected Adam update of every parameter in `set`. Gradients are
/// all checked before anything is written, so a NaN leaves the set untouched.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& set, AdamState<Scalar>& state, const AdamConfig& cfg) {
  if (state.m.size() != set.size()) throw ContractViolation("adam_step: state was built for a different set");
  for (auto& p : set) {
    if (!p.grad().all_finite()) throw NonFiniteError("non-finite gradient in parameter '" + p.name() + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  std::size_t k = 0;
  for (auto& p : set) {
    Tensor<Scalar>& w = p.value();
    const Tensor<Scalar>& g = p.grad();
    Tensor<Scalar>& m = state.m[k];
    Tensor<Scalar>& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<Scalar>(mi);
      v[i] = static_cast<Scalar>(vi);
      const double update = cfg.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg.epsilon);
      w[i] = static_cast<Scalar>(static_cast<double>(w[i]) - update);
    }
    ++k;
  }
}

}  // namespace spaformer
