#pragma once

#include <stdexcept>
#include <string>

namespace coopamp {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Non-finite or otherwise unusable spin state.
class InvalidStateError : public Error {
public:
  using Error::Error;
};

// Operation requested outside the regime where it is defined
// (e.g. a coherence time when Gamma + xi <= 0).
class RegimeError : public Error {
public:
  using Error::Error;
};

// Bad configuration: invalid parameters, unknown keys, unit mismatches.
// `path` names the offending config entry when one exists.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg, std::string path = {})
      : Error(path.empty() ? msg : path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

// ODE integration failed (step size underflow, non-finite state, too many steps).
class IntegrationError : public Error {
public:
  using Error::Error;
};

// Least-squares problem is rank deficient.
class RankError : public Error {
public:
  using Error::Error;
};

// Record too short for the requested spectral resolution.
class ResolutionError : public Error {
public:
  using Error::Error;
};

}  // namespace coopamp
