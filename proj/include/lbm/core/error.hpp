#pragma once

#include <stdexcept>
#include <string>

namespace lbm {

// Root of the library's exception hierarchy. Each subclass maps to one failure
// category so callers (and the CLI exit-code table) can dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a numeric kernel.
class NumericError : public Error {
 public:
  using Error::Error;
};

class EpisodeFinished : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A required input file or checkpoint is missing, unreadable or incompatible.
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace lbm
