/*
 * Copyright 2026 The MLFF Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MLFF_ERROR_HPP_
#define MLFF_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace mlff {

// Error categories. The CLI maps each category onto a process exit code.
enum class ErrorKind {
  kConfig,      // invalid configuration or shape mismatch
  kData,        // labels/dims inconsistent with the declared schema
  kFormat,      // unrecognized container (magic, version, schema)
  kCorruption,  // truncated or otherwise damaged payload
  kNumeric,     // NaN/Inf reached a layer boundary
  kProtocol,    // operation invoked in a state where it is undefined
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::kFormat, what) {}
};

class CorruptionError : public Error {
 public:
  explicit CorruptionError(const std::string& what)
      : Error(ErrorKind::kCorruption, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what) : Error(ErrorKind::kProtocol, what) {}
};

}  // namespace mlff

#endif  // MLFF_ERROR_HPP_
