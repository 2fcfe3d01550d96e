#pragma once

#include <stdexcept>
#include <string>

namespace plrefine {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file is not a well-formed container (bad magic, truncated header, unsupported dtype).
class MalformedFile : public Error {
 public:
  using Error::Error;
};

/// A value lies outside its admissible domain (likelihood outside [0,1], mask value not in {0,1}).
class ValueOutOfRange : public Error {
 public:
  using Error::Error;
};

/// An array does not have the expected number of dimensions.
class WrongRank : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// The refinement backend could not be reached (transport failure after retries).
class RefinerUnavailable : public Error {
 public:
  using Error::Error;
};

/// The refinement backend answered with something that violates the wire protocol.
class ProtocolViolation : public Error {
 public:
  using Error::Error;
};

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, index, search space or ablation plan.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace plrefine
