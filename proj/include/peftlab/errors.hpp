#pragma once

#include <stdexcept>
#include <string>

namespace peftlab {

// Base class for everything this library throws.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
  public:
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Frozen base weight has zero Frobenius norm.
class ZeroBaseError : public Error {
  public:
    explicit ZeroBaseError(const std::string& msg) : Error(msg) {}
};

// Low-rank update collapsed to (numerically) zero where a nonzero norm is required.
class DegenerateUpdateError : public Error {
  public:
    explicit DegenerateUpdateError(const std::string& msg) : Error(msg) {}
};

class NormUnderflowError : public Error {
  public:
    explicit NormUnderflowError(const std::string& msg) : Error(msg) {}
};

// A column of the composed weight has norm below the clamp threshold.
class ZeroColumnError : public Error {
  public:
    explicit ZeroColumnError(const std::string& msg) : Error(msg) {}
};

class RangeError : public Error {
  public:
    explicit RangeError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class VersionError : public Error {
  public:
    explicit VersionError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf encountered where all values must stay finite.
class NumericError : public Error {
  public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace peftlab
