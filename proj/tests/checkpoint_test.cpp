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

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>
#include "moegrow/checkpoint_io.hpp"
#include "moegrow/error.hpp"
#include "moegrow/growth.hpp"
#include "moegrow/model.hpp"
#include "test_util.hpp"

namespace moegrow {
namespace {

ModelConfig Tiny() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_kv_groups = 1;
  c.vocab = 10;
  c.n_experts = 3;
  c.top_k = 2;
  c.d_expert = 4;
  c.router_bias = true;
  return c;
}

Checkpoint Sample() {
  auto ck = InitModel(Tiny(), 1);
  ck.metadata.step = 77;
  ck.metadata.cumulative_flops = 12345678901234ull;
  return GrowDepth(ck, DepthPlan::Stack(2));
}

std::uint32_t HeaderLength(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 5;
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

nlohmann::json Header(const std::string& bytes) {
  return nlohmann::json::parse(bytes.substr(9, HeaderLength(bytes)));
}

std::string Rebuild(const nlohmann::json& header, const std::string& payload) {
  const std::string h = header.dump();
  std::string out = "MGRW1";
  for (int i = 0; i < 4; ++i) out.push_back(char((h.size() >> (8 * i)) & 0xff));
  return out + h + payload;
}

ErrorKind ParseErrorKind(const std::string& bytes, std::string* msg = nullptr) {
  try {
    ParseCheckpoint(bytes);
  } catch (const Error& e) {
    if (msg) *msg = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "parse succeeded";
  return ErrorKind::kArgument;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  testing::TempDir dir;
  const auto ck = Sample();
  SaveCheckpoint(ck, dir / "a.ckpt");
  const auto loaded = LoadCheckpoint(dir / "a.ckpt");
  SaveCheckpoint(loaded, dir / "b.ckpt");
  EXPECT_EQ(ReadFileBytes(dir / "a.ckpt"), ReadFileBytes(dir / "b.ckpt"));
  EXPECT_EQ(loaded.config, ck.config);
  EXPECT_EQ(loaded.metadata, ck.metadata);
  ASSERT_EQ(loaded.tensors.size(), ck.tensors.size());
  for (const auto& [n, t] : ck.tensors) {
    EXPECT_TRUE(t.BitEqual(loaded.at(n))) << n;
    EXPECT_EQ(t.shape(), loaded.at(n).shape());
  }
}

TEST(Checkpoint, LayoutIsSelfDescribing) {
  const auto ck = Sample();
  const std::string bytes = SerializeCheckpoint(ck);
  ASSERT_EQ(bytes.substr(0, 5), "MGRW1");
  const auto h = Header(bytes);
  EXPECT_EQ(h.at("metadata").at("step"), 77);
  EXPECT_EQ(h.at("metadata").at("cumulative_flops").get<std::uint64_t>(),
            12345678901234ull);
  ASSERT_EQ(h.at("metadata").at("growth_history").size(), 1u);
  const auto& idx = h.at("tensors");
  ASSERT_EQ(idx.size(), ck.tensors.size());
  std::uint64_t cursor = 0;
  std::string prev;
  const std::size_t payload_start = 9 + HeaderLength(bytes);
  for (const auto& e : idx) {
    const std::string name = e.at("name");
    EXPECT_LT(prev, name);
    prev = name;
    EXPECT_EQ(e.at("dtype"), "f32");
    EXPECT_EQ(e.at("byte_offset").get<std::uint64_t>(), cursor);
    const Tensor& t = ck.at(name);
    EXPECT_EQ(e.at("shape").get<Shape>(), t.shape());
    EXPECT_EQ(e.at("byte_length").get<std::uint64_t>(), 4 * t.size());
    // Little-endian float32 payload.
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= std::uint32_t(static_cast<unsigned char>(
                    bytes[payload_start + cursor + 4 * i + std::size_t(b)]))
                << (8 * b);
      float v;
      std::memcpy(&v, &bits, 4);
      ASSERT_EQ(v, t[i]);
    }
    cursor += 4 * t.size();
  }
  EXPECT_EQ(payload_start + cursor, bytes.size());
}

TEST(Checkpoint, WrongMagicIsFormatError) {
  std::string bytes = SerializeCheckpoint(Sample());
  bytes[4] = '2';
  EXPECT_EQ(ParseErrorKind(bytes), ErrorKind::kFormat);
  EXPECT_EQ(ParseErrorKind("MG"), ErrorKind::kFormat);
}

TEST(Checkpoint, TruncatedPayloadNamesTensor) {
  const std::string bytes = SerializeCheckpoint(Sample());
  const auto h = Header(bytes);
  const std::string last = h.at("tensors").back().at("name");
  std::string msg;
  EXPECT_EQ(ParseErrorKind(bytes.substr(0, bytes.size() - 3), &msg),
            ErrorKind::kCorruption);
  EXPECT_NE(msg.find(last), std::string::npos) << msg;
}

TEST(Checkpoint, IndexInconsistenciesAreCorruption) {
  const std::string bytes = SerializeCheckpoint(Sample());
  auto h = Header(bytes);
  const std::string payload = bytes.substr(9 + HeaderLength(bytes));

  auto gap = h;
  gap["tensors"][1]["byte_offset"] = gap["tensors"][1]["byte_offset"].get<std::uint64_t>() + 4;
  EXPECT_EQ(ParseErrorKind(Rebuild(gap, payload)), ErrorKind::kCorruption);

  auto len = h;
  len["tensors"][0]["byte_length"] = 4;
  EXPECT_EQ(ParseErrorKind(Rebuild(len, payload)), ErrorKind::kCorruption);

  EXPECT_EQ(ParseErrorKind(Rebuild(h, payload + "xxxx")), ErrorKind::kCorruption);

  auto missing = h;
  missing["tensors"].erase(missing["tensors"].size() - 1);
  const auto last_len = h["tensors"].back()["byte_length"].get<std::size_t>();
  EXPECT_EQ(ParseErrorKind(Rebuild(missing, payload.substr(0, payload.size() - last_len))),
            ErrorKind::kCorruption);
}

TEST(Checkpoint, UnknownDtypeIsUnsupported) {
  const std::string bytes = SerializeCheckpoint(Sample());
  auto h = Header(bytes);
  h["tensors"][0]["dtype"] = "bf16";
  EXPECT_EQ(ParseErrorKind(Rebuild(h, bytes.substr(9 + HeaderLength(bytes)))),
            ErrorKind::kUnsupported);
}

TEST(Checkpoint, HeaderNotJsonIsFormatError) {
  std::string bytes = SerializeCheckpoint(Sample());
  bytes[9] = '#';
  EXPECT_EQ(ParseErrorKind(bytes), ErrorKind::kFormat);
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    LoadCheckpoint("/nonexistent/dir/x.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

TEST(Checkpoint, GrowthHistoryAppendOnlyAcrossSaveLoad) {
  testing::TempDir dir;
  SaveCheckpoint(Sample(), dir / "g1.ckpt");
  const auto g1 = LoadCheckpoint(dir / "g1.ckpt");
  ASSERT_EQ(g1.metadata.growth_history.size(), 1u);
  EXPECT_EQ(g1.metadata.growth_history[0].kind, "depth");
  EXPECT_EQ(g1.metadata.growth_history[0].base_step, 77u);
  SaveCheckpoint(GrowWidth(g1, {2, 0.01, 3}), dir / "g2.ckpt");
  const auto g2 = LoadCheckpoint(dir / "g2.ckpt");
  ASSERT_EQ(g2.metadata.growth_history.size(), 2u);
  EXPECT_EQ(g2.metadata.growth_history[0], g1.metadata.growth_history[0]);
  EXPECT_EQ(g2.metadata.growth_history[1].kind, "width");
  EXPECT_EQ(g2.metadata.cumulative_flops, 12345678901234ull);
}

TEST(Checkpoint, AtomicWriteLeavesNoTemporaries) {
  testing::TempDir dir;
  SaveCheckpoint(Sample(), dir / "x.ckpt");
  SaveCheckpoint(Sample(), dir / "x.ckpt");
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 1u);
}

}  // namespace
}  // namespace moegrow
