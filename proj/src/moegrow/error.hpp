/*
 * Copyright (c) 2026 The moegrow Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace moegrow {

/// Failure categories. The numeric values are part of the C API and must not
/// be reordered.
enum class ErrorKind : int {
  kDimension = 1,
  kArgument = 2,
  kNumeric = 3,
  kFormat = 4,
  kCorruption = 5,
  kUnsupported = 6,
  kIo = 7,
  kTraining = 8,
  kData = 9,
  kSpec = 10,
};

const char* ErrorKindName(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void Fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

#define MOEGROW_CHECK(cond, kind, msg)                   \
  do {                                                   \
    if (!(cond)) ::moegrow::Fail((kind), (msg));         \
  } while (0)

}  // namespace moegrow
