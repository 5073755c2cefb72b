// Copyright 2026 The dynembed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dynembed {

// Stable wire-visible error codes (u16). Values are part of the protocol,
// see docs/protocol.md; append only.
enum class ErrorCode : std::uint16_t {
  kOk = 0,
  kInvalidConfig = 1,
  kInvalidKey = 2,
  kKeyTooLarge = 3,
  kDimensionMismatch = 4,
  kNonFiniteValue = 5,
  kBackendUnavailable = 6,
  kFormatError = 7,
  kSinkWriteFailure = 8,
  kEmptyUniverse = 9,
  kWorkerUnreachable = 10,
  kPartialCheckpoint = 11,
  kDigestMismatch = 12,
  kSandboxViolation = 13,
  kTableNotFound = 14,
  kTableExists = 15,
  kProtocolError = 16,
  kInternal = 17,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        message_(std::move(message)) {}

  ErrorCode code() const noexcept { return code_; }

  // The message without the code-name prefix that what() carries. Use this
  // when re-transporting an error so prefixes do not pile up hop by hop.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

inline const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "Ok";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kInvalidKey: return "InvalidKey";
    case ErrorCode::kKeyTooLarge: return "KeyTooLarge";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kBackendUnavailable: return "BackendUnavailable";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kSinkWriteFailure: return "SinkWriteFailure";
    case ErrorCode::kEmptyUniverse: return "EmptyUniverse";
    case ErrorCode::kWorkerUnreachable: return "WorkerUnreachable";
    case ErrorCode::kPartialCheckpoint: return "PartialCheckpoint";
    case ErrorCode::kDigestMismatch: return "DigestMismatch";
    case ErrorCode::kSandboxViolation: return "SandboxViolation";
    case ErrorCode::kTableNotFound: return "TableNotFound";
    case ErrorCode::kTableExists: return "TableExists";
    case ErrorCode::kProtocolError: return "ProtocolError";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Unknown";
}

}  // namespace dynembed
