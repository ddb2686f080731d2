#pragma once

#include <stdexcept>
#include <string>

namespace plume {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent trace data (bad manifest, missing file, broken invariant).
class DatasetError : public Error {
 public:
  using Error::Error;
};

/// Invalid arguments or preconditions to a numerical routine.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A fit or search could not produce a usable model.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Episode-level misuse of an environment (e.g. stepping a finished episode).
class EnvError : public Error {
 public:
  using Error::Error;
};

}  // namespace plume
