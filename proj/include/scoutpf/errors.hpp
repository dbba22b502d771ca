#pragma once

#include <stdexcept>
#include <string>

namespace scoutpf {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Dimension / variable-count / truncation-order mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Expansion point outside the domain of an elementary function
/// (sqrt at 0, log of a non-positive constant, asin at |1|, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-square or ill-conditioned polynomial map; inversion refused.
class SingularMapError : public Error {
 public:
  using Error::Error;
};

/// Total weight degeneracy or a collapsed particle/scout set.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration: unknown scenario/filter name, invalid counts, ...
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File I/O failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace scoutpf
