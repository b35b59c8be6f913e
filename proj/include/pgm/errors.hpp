#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pgm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Argument outside the domain of an operation (negative lambda, t > T, ...).
struct DomainError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

// Raised by oracle routines: quadrature underflow, infeasible search boxes.
struct OracleError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// A sampler produced a non-finite state.
struct DivergenceError : Error {
  DivergenceError(std::string sampler, std::size_t step)
      : Error(sampler + ": non-finite state at step " + std::to_string(step)),
        step(step) {}
  std::size_t step;
};

inline void require_dims(std::size_t expected, std::size_t actual,
                         const char* what) {
  if (expected != actual) {
    throw ShapeError(std::string(what) + ": expected dimension " +
                     std::to_string(expected) + ", got " +
                     std::to_string(actual));
  }
}

}  // namespace pgm
