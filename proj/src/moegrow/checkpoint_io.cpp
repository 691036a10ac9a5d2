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

#include "moegrow/checkpoint_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <system_error>
#include <unistd.h>

#include "moegrow/error.hpp"

namespace moegrow {

using nlohmann::json;

namespace {

void PutU32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(char((v >> (8 * b)) & 0xFFu));
}

std::uint32_t GetU32(std::string_view in) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b)
    v |= std::uint32_t(static_cast<unsigned char>(in[b])) << (8 * b);
  return v;
}

void PutF32(std::string& out, float f) { PutU32(out, std::bit_cast<std::uint32_t>(f)); }

}  // namespace

std::string SerializeCheckpoint(const Checkpoint& ckpt) {
  ValidateCheckpoint(ckpt);
  json index = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    const std::uint64_t len = std::uint64_t(t.size()) * 4;
    index.push_back(json{{"name", name},
                         {"dtype", "f32"},
                         {"shape", t.shape()},
                         {"byte_offset", offset},
                         {"byte_length", len}});
    offset += len;
  }
  const json header{{"config", ToJson(ckpt.config)},
                    {"metadata", ToJson(ckpt.metadata)},
                    {"tensors", index}};
  const std::string text = header.dump();
  MOEGROW_CHECK(text.size() <= 0xFFFFFFFFu, ErrorKind::kArgument,
                "checkpoint header exceeds 4 GiB");

  std::string out;
  out.reserve(kCheckpointMagic.size() + 4 + text.size() + offset);
  out.append(kCheckpointMagic);
  PutU32(out, std::uint32_t(text.size()));
  out.append(text);
  for (const auto& [_, t] : ckpt.tensors)
    for (float v : t.data()) PutF32(out, v);
  return out;
}

Checkpoint ParseCheckpoint(std::string_view bytes) {
  const std::size_t magic_len = kCheckpointMagic.size();
  MOEGROW_CHECK(bytes.size() >= magic_len &&
                    bytes.substr(0, magic_len) == kCheckpointMagic,
                ErrorKind::kFormat, "not a checkpoint file (bad magic)");
  MOEGROW_CHECK(bytes.size() >= magic_len + 4, ErrorKind::kCorruption,
                "checkpoint truncated inside header length");
  const std::uint32_t header_len = GetU32(bytes.substr(magic_len, 4));
  const std::size_t payload_start = magic_len + 4 + std::size_t(header_len);
  MOEGROW_CHECK(bytes.size() >= payload_start, ErrorKind::kCorruption,
                "checkpoint truncated inside header");

  json header;
  try {
    header = json::parse(bytes.substr(magic_len + 4, header_len));
  } catch (const json::exception& e) {
    Fail(ErrorKind::kFormat, std::string("checkpoint header is not JSON: ") +
                                 e.what());
  }
  Checkpoint ckpt;
  try {
    RejectUnknownKeys(header, {"config", "metadata", "tensors"}, "header");
    ckpt.config = ModelConfigFromJson(header.at("config"));
    ckpt.metadata = MetadataFromJson(header.at("metadata"));
  } catch (const json::exception& e) {
    Fail(ErrorKind::kFormat, std::string("malformed checkpoint header: ") +
                                 e.what());
  } catch (const Error& e) {
    Fail(ErrorKind::kFormat, std::string("malformed checkpoint header: ") +
                                 e.what());
  }

  const std::string_view payload = bytes.substr(payload_start);
  const auto& index = header.at("tensors");
  MOEGROW_CHECK(index.is_array(), ErrorKind::kFormat,
                "header.tensors must be an array");
  std::uint64_t expected_offset = 0;
  for (const auto& entry : index) {
    std::string name;
    std::string dtype;
    Shape shape;
    std::uint64_t offset = 0, length = 0;
    try {
      name = entry.at("name").get<std::string>();
      dtype = entry.at("dtype").get<std::string>();
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("byte_offset").get<std::uint64_t>();
      length = entry.at("byte_length").get<std::uint64_t>();
    } catch (const json::exception& e) {
      Fail(ErrorKind::kFormat,
           std::string("malformed tensor index entry: ") + e.what());
    }
    MOEGROW_CHECK(dtype == "f32", ErrorKind::kUnsupported,
                  "tensor '" + name + "' has unsupported dtype '" + dtype +
                      "'");
    MOEGROW_CHECK(offset == expected_offset, ErrorKind::kCorruption,
                  "tensor '" + name + "' offset " + std::to_string(offset) +
                      " breaks the contiguous payload layout (expected " +
                      std::to_string(expected_offset) + ")");
    const std::uint64_t numel = NumElements(shape);
    MOEGROW_CHECK(length == numel * 4, ErrorKind::kCorruption,
                  "tensor '" + name + "' byte length does not match its shape");
    MOEGROW_CHECK(offset + length <= payload.size(), ErrorKind::kCorruption,
                  "payload truncated inside tensor '" + name + "'");
    std::vector<float> data(numel);
    for (std::uint64_t i = 0; i < numel; ++i)
      data[i] = std::bit_cast<float>(GetU32(payload.substr(offset + 4 * i, 4)));
    MOEGROW_CHECK(ckpt.tensors.emplace(name, Tensor(shape, std::move(data))).second,
                  ErrorKind::kCorruption,
                  "tensor '" + name + "' listed more than once");
    expected_offset = offset + length;
  }
  MOEGROW_CHECK(expected_offset == payload.size(), ErrorKind::kCorruption,
                "payload has " +
                    std::to_string(payload.size() - expected_offset) +
                    " trailing bytes not covered by the index");
  ValidateCheckpoint(ckpt);
  return ckpt;
}

std::string ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  MOEGROW_CHECK(is.good(), ErrorKind::kIo,
                "cannot open '" + path.string() + "'");
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

void WriteFileAtomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    MOEGROW_CHECK(os.good(), ErrorKind::kIo,
                  "cannot open '" + tmp.string() + "' for writing");
    os.write(bytes.data(), std::streamsize(bytes.size()));
    os.flush();
    MOEGROW_CHECK(os.good(), ErrorKind::kIo,
                  "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    Fail(ErrorKind::kIo, "cannot move checkpoint into '" + path.string() + "'");
  }
}

void SaveCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  WriteFileAtomic(path, SerializeCheckpoint(ckpt));
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  return ParseCheckpoint(ReadFileBytes(path));
}

}  // namespace moegrow
