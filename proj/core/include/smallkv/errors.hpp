// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace smallkv {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or lengths of inputs disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Budget fraction out of range, or a budget too small to hold any critical token.
class BudgetError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Zero vectors and similar inputs for which a metric is undefined.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A domain-type invariant does not hold (e.g. a non-stochastic attention row).
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Attention tried to read a V row that is not resident in the hot tier.
class CacheMissError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace smallkv
