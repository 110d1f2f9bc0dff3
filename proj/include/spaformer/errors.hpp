#pragma once

#include <stdexcept>
#include <string>

namespace spaformer {

/// Raised when an argument violates an operation's documented preconditions
/// (shape mismatch, out-of-range value, wrong kernel layout).
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

/// A metric was requested over a region that holds no pixels.
class EmptyRegionError : public std::runtime_error {
 public:
  explicit EmptyRegionError(const std::string& what) : std::runtime_error(what) {}
};

/// File-level failures: missing, undecodable or inconsistent inputs.
class IoError : public std::runtime_error {
 public:
  IoError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Training hit a NaN/Inf in a loss or gradient.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace spaformer
