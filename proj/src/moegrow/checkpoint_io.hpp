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

#include <filesystem>
#include <string>
#include <string_view>

#include "moegrow/config.hpp"

// Single-file checkpoint layout:
//   "MGRW1" | u32 little-endian header length | header JSON | payload
// The header holds "config", "metadata" and a "tensors" index of
// {name, dtype:"f32", shape, byte_offset, byte_length} sorted by name, with
// offsets relative to the payload start. The payload is every tensor's
// little-endian float32 data in index order with no gaps.
namespace moegrow {

inline constexpr std::string_view kCheckpointMagic = "MGRW1";

std::string SerializeCheckpoint(const Checkpoint& ckpt);
Checkpoint ParseCheckpoint(std::string_view bytes);

/// Writes to a temporary sibling and renames it into place.
void SaveCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

std::string ReadFileBytes(const std::filesystem::path& path);
void WriteFileAtomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace moegrow
