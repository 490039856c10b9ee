#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace isdsm {

/// Bad or inconsistent configuration (schema violations, tolerance misses in
/// setup quadratures, resource caps).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A user-supplied function produced a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear algebra failure (Gram factorisation after jitter escalation).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse, e.g. spawning a trajectory at a time other than the state's.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Picard iteration hit max_iter; carries the sup-distance of every iterate.
class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

}  // namespace isdsm
