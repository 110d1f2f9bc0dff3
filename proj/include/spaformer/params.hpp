#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "spaformer/autodiff.hpp"

namespace spaformer {

/// Ordered, name-unique collection of parameters.
template <typename Scalar>
class ParameterSet {
 public:
  Parameter<Scalar>& add(const std::string& name, Tensor<Scalar> value) {
    if (index_.count(name) != 0) throw ContractViolation("duplicate parameter name '" + name + "'");
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(value));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter<Scalar>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
    return params_[it->second];
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.name());
    return out;
  }

  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  // deque-like stability: parameters alias shared nodes, so vector growth is safe
  std::vector<Parameter<Scalar>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Creates parameters into a set with a seeded, platform-independent stream.
template <typename Scalar>
class Initializer {
 public:
  Initializer(ParameterSet<Scalar>& set, std::uint64_t seed) : set_(set), rng_(seed) {}

  /// Zero-mean uniform fan-in init, bound gain * sqrt(6 / fan_in), where fan_in
  /// is the number of inputs feeding one output (in * kh * kw).
  Parameter<Scalar> kernel(const std::string& name, Shape shape, double gain = 1.0) {
    const double fan_in = static_cast<double>(shape.c * shape.h * shape.w);
    const double bound = gain * std::sqrt(6.0 / fan_in);
    Tensor<Scalar> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>((2.0 * uniform01() - 1.0) * bound);
    return set_.add(name, std::move(t));
  }

  Parameter<Scalar> constant(const std::string& name, Shape shape, Scalar v) {
    return set_.add(name, Tensor<Scalar>(shape, v));
  }
  Parameter<Scalar> zeros(const std::string& name, Shape shape) { return constant(name, shape, Scalar(0)); }

  ParameterSet<Scalar>& set() { return set_; }

 private:
  double uniform01() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  ParameterSet<Scalar>& set_;
  std::mt19937_64 rng_;
};

}  // namespace spaformer
