#ifndef SSSA_ERRORS_HPP
#define SSSA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace sssa {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct ShapeError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

// Invalid parameter set (triangularity violated, alpha <= 0, ...).
struct ParamError : Error {
  using Error::Error;
};

// Zero diagonal entry makes the temporal mixer non-invertible.
struct SingularMixerError : ParamError {
  using ParamError::ParamError;
};

// Operation called before required cached state exists.
struct StateError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Monte Carlo run produced too few usable samples.
struct StatsError : Error {
  using Error::Error;
};

struct TrainingError : Error {
  using Error::Error;
};

struct TapeError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

struct MigrationError : CheckpointError {
  using CheckpointError::CheckpointError;
};

}

#endif
