#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sqd {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

// Base for all library errors. Subtypes map to CLI exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// Raised whenever a public operation would produce NaN/Inf.
struct NonFiniteError : Error {
  using Error::Error;
};

struct TapeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  std::string field;
  ConfigError(const std::string& field_path, const std::string& msg)
      : Error("config error at '" + field_path + "': " + msg), field(field_path) {}
};

struct StoreError : Error {
  using Error::Error;
};

struct MissingInputError : Error {
  using Error::Error;
};

struct DivergenceError : Error {
  Index iteration;
  DivergenceError(Index iter, const std::string& msg)
      : Error("divergence at iteration " + std::to_string(iter) + ": " + msg),
        iteration(iter) {}
};

inline Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

}  // namespace sqd
