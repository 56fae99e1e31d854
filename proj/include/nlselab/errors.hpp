#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace nlselab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition broken by the caller (dimension mismatch, bad parameter, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Fixed-point iteration did not reach the tolerance.
class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& what, double residual, int iterations,
                std::optional<long> step = std::nullopt)
      : Error(what + " (residual " + std::to_string(residual) + " after " +
              std::to_string(iterations) + " iterations" +
              (step ? ", step " + std::to_string(*step) : std::string()) + ")"),
        residual_(residual),
        iterations_(iterations),
        step_(step) {}

  double residual() const { return residual_; }
  int iterations() const { return iterations_; }
  std::optional<long> step() const { return step_; }

  NoConvergence at_step(long step) const {
    return NoConvergence("midpoint iteration failed", residual_, iterations_, step);
  }

 private:
  double residual_;
  int iterations_;
  std::optional<long> step_;
};

class StiffnessError : public Error {
 public:
  using Error::Error;
};

class NonDecayingSeries : public Error {
 public:
  NonDecayingSeries(const std::string& what, int k) : Error(what), k_(k) {}
  int index() const { return k_; }

 private:
  int k_;
};

class Unsupported : public Error {
 public:
  using Error::Error;
};

class CflViolation : public Error {
 public:
  CflViolation(double h, double max_h)
      : Error("time step h=" + std::to_string(h) +
              " violates the CFL condition; max admissible h=" + std::to_string(max_h)),
        max_h_(max_h) {}
  double max_h() const { return max_h_; }

 private:
  double max_h_;
};

class IllConditionedFit : public Error {
 public:
  IllConditionedFit(const std::string& what, double residual) : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class FloorReached : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration; `key()` names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace nlselab
