#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adrpo {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input vector sizes do not match the network or problem topology.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An operation was called out of order, e.g. backward without a recorded forward.
class StateError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument lies outside its mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller supplied an argument that violates the documented usage.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A precondition between two library values was broken.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared while training.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Non-finite state during ODE integration.
class SamplerDivergenceError : public Error {
 public:
  explicit SamplerDivergenceError(std::size_t step)
      : Error("sampler diverged at Euler step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Reference pretraining ran out of budget above its W2 threshold.
class PretrainError : public Error {
 public:
  PretrainError(double final_w2, double threshold)
      : Error("pretraining did not reach W2 threshold " + std::to_string(threshold) +
              " (final W2 " + std::to_string(final_w2) + ")"),
        final_w2_(final_w2) {}
  double final_w2() const noexcept { return final_w2_; }

 private:
  double final_w2_;
};

/// Malformed configuration text; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed configuration with an invalid or unknown field.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Filesystem or serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace adrpo
