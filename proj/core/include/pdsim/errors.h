/* Copyright 2026 The pdsim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pdsim {

enum class ErrorCode {
  kInvalidArgument,
  kBatchOutOfRange,
  kTimeTravel,
  kLengthMismatch,
  kInsufficientBlocks,
  kInvalidState,
  kConfig,
  kRouting,
};

std::string_view ErrorCodeName(ErrorCode code);

// All library failures surface as this exception; `code()` identifies the
// contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void Throw(ErrorCode code, const std::string& message);

inline void Require(bool condition, ErrorCode code, const char* message) {
  if (!condition) {
    Throw(code, message);
  }
}

}  // namespace pdsim
