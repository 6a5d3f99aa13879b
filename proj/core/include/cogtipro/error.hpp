// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cogtipro {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or violated precondition on user-supplied input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A record whose timestamp falls outside the study window.
class WindowingError : public Error {
 public:
  using Error::Error;
};

/// Malformed or dimensionally inconsistent input file.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an interface contract (shape mismatch, wrong modality, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Network failure or timeout reaching a remote service. Retryable.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// A scripted fixture ran out of responses.
class FixtureExhaustedError : public Error {
 public:
  using Error::Error;
};

/// Refiner output carried no parseable instruction block.
class RefinementParseError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value encountered during forward or backward evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cogtipro
