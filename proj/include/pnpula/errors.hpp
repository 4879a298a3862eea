#pragma once

#include <stdexcept>
#include <string>

namespace pnpula {

// Error taxonomy shared by the library and the CLI. The CLI maps these to
// exit codes: ConfigError/ShapeError/RangeError -> 2, DivergenceError and
// SolverError -> 3, FileError -> 4.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct FileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverError : std::runtime_error {
  double residual;
  SolverError(const std::string& msg, double final_residual)
      : std::runtime_error(msg), residual(final_residual) {}
};

struct DivergenceError : std::runtime_error {
  long iteration;
  double norm;
  DivergenceError(const std::string& msg, long k, double offending_norm)
      : std::runtime_error(msg), iteration(k), norm(offending_norm) {}
};

}  // namespace pnpula
