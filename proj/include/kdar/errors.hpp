// Copyright (c) 2026 The KDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every module.

#pragma once

#include <stdexcept>
#include <string>

namespace kdar {

/// Root of all library errors. Catch this to handle any failure uniformly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A hyperparameter, dimension or spec field violates its invariant.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Inputs are well-typed but outside the operation's domain
/// (length mismatch, empty vector, index out of range, stale cache).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine produced a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Stored content does not match its recorded hash, or the file is truncated.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace kdar
