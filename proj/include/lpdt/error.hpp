// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lpdt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument value was violated (bad range, bad bits, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed external input (dataset files, adjacency files, serialized messages).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Experiment or layer configuration rejected during validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss, failed eigensolve, non-positive push-sum weight.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace lpdt
