// Copyright 2026 The hoconv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace hoconv {

// Numeric values double as CLI exit codes and C API status codes.
enum class ErrorCode : int {
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
  kIo = 5,
  kContract = 6,
  kOverflow = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Invalid configuration or shape setup, detected before any arithmetic.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::kConfig, what) {}
};

/// Malformed or inconsistent input data (files, counts, labels).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCode::kData, what) {}
};

/// Non-finite values or undefined numeric results.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCode::kNumeric, what) {}
};

// Distinct file-format failures, all data errors.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};
class TruncatedError : public DataError {
 public:
  using DataError::DataError;
};
class VersionError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCode::kIo, what) {}
};

/// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorCode::kContract, what) {}
};

class OverflowError : public Error {
 public:
  explicit OverflowError(const std::string& what) : Error(ErrorCode::kOverflow, what) {}
};

#define HOCONV_REQUIRE(cond, ErrType, msg)  \
  do {                                      \
    if (!(cond)) throw ErrType(msg);        \
  } while (0)

}  // namespace hoconv
