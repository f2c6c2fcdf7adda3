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

#include "pdsim/errors.h"

namespace pdsim {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "InvalidArgument";
    case ErrorCode::kBatchOutOfRange:
      return "BatchOutOfRange";
    case ErrorCode::kTimeTravel:
      return "TimeTravel";
    case ErrorCode::kLengthMismatch:
      return "LengthMismatch";
    case ErrorCode::kInsufficientBlocks:
      return "InsufficientBlocks";
    case ErrorCode::kInvalidState:
      return "InvalidState";
    case ErrorCode::kConfig:
      return "Config";
    case ErrorCode::kRouting:
      return "Routing";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
      code_(code) {}

void Throw(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace pdsim
