#pragma once

#include <stdexcept>
#include <string>

namespace volact {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a 3x3 system is numerically singular.
struct SingularMatrix : Error {
  using Error::Error;
};

struct NonFiniteLoss : Error {
  using Error::Error;
};

/// Clustering input cannot support the requested number of clusters.
struct DegenerateInput : Error {
  using Error::Error;
};

/// No foreground pixels available for correspondence matching.
struct EmptyForeground : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace volact
