#pragma once

#include <stdexcept>
#include <string>

namespace foldcity {

/// Base for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or inconsistent input data (malformed files, shape mismatches, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf or other numeric breakdown during computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument combination or value supplied by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace foldcity
