// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "common.hpp"

using namespace xatl;
using xatl::testing::TempDir;

namespace {

template <class U>
void put_le(std::string& s, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) s.push_back(char((std::uint64_t(v) >> (8 * i)) & 0xFF));
}

std::string expected_bytes_for_small_store() {
  // written straight from the format description
  std::string s = "XATL";
  put_le<std::uint32_t>(s, 1);
  const std::string meta = R"({"step":3})";
  put_le<std::uint64_t>(s, meta.size());
  s += meta;
  put_le<std::uint64_t>(s, 2);
  // "a": float32 [2] = {1.0, -2.0}
  put_le<std::uint32_t>(s, 1);
  s += "a";
  put_le<std::uint8_t>(s, 0);
  put_le<std::uint8_t>(s, 1);
  put_le<std::uint64_t>(s, 2);
  put_le<std::uint32_t>(s, 0x3F800000u);
  put_le<std::uint32_t>(s, 0xC0000000u);
  // "b.w": float32 [1,1] = {0.5}
  put_le<std::uint32_t>(s, 3);
  s += "b.w";
  put_le<std::uint8_t>(s, 0);
  put_le<std::uint8_t>(s, 2);
  put_le<std::uint64_t>(s, 1);
  put_le<std::uint64_t>(s, 1);
  put_le<std::uint32_t>(s, 0x3F000000u);
  return s;
}

ParameterStore<float> small_store() {
  ParameterStore<float> s;
  s.set("b.w", Tensor<float>({1, 1}, 0.5f));
  s.set("a", Tensor<float>({2}, std::vector<float>{1.0f, -2.0f}));
  return s;
}

}  // namespace

TEST(Checkpoint, MatchesHandWrittenBytes) {
  EXPECT_EQ(encode_checkpoint(small_store(), nlohmann::json{{"step", 3}}), expected_bytes_for_small_store());
  auto img = decode_checkpoint(expected_bytes_for_small_store());
  ASSERT_EQ(img.records.size(), 2u);
  EXPECT_EQ(img.records[0].name, "a");
  EXPECT_EQ(img.records[1].values[0], 0.5);
  EXPECT_EQ(img.metadata.at("step"), 3);
}

TEST(Checkpoint, EmptyStore) {
  TempDir dir;
  ParameterStore<float> empty;
  save_checkpoint(empty, nlohmann::json{{"step", 0}}, dir.file("e.xatl"));
  auto back = load_checkpoint<float>(dir.file("e.xatl"));
  EXPECT_TRUE(back.store.empty());
  EXPECT_EQ(back.metadata.at("step"), 0);
  EXPECT_EQ(xatl::testing::read_text(dir.file("e.xatl")).size(), 4u + 4 + 8 + 10 + 8);
}

TEST(Checkpoint, ToyModelRoundTrip) {
  TempDir dir;
  for (MixerKind kind : {MixerKind::kMha, MixerKind::kRetention, MixerKind::kSsm}) {
    auto c = presets::toy(kind);
    auto s = build_model<float>(c, 8);
    nlohmann::json meta = {{"config", nlohmann::json(c)}, {"step", 0}, {"seed", 8}, {"dtype", "float32"}};
    save_checkpoint(s, meta, dir.file("toy.xatl"));
    auto back = load_checkpoint<float>(dir.file("toy.xatl"));
    EXPECT_TRUE(back.store.bit_equal(s));
    EXPECT_EQ(back.metadata, meta);
    EXPECT_EQ(config_from_metadata(back.metadata, "toy"), c);
    save_checkpoint(s, meta, dir.file("toy2.xatl"));
    EXPECT_EQ(xatl::testing::read_text(dir.file("toy.xatl")), xatl::testing::read_text(dir.file("toy2.xatl")));
  }
  EXPECT_FALSE(std::filesystem::exists(dir.file("toy.xatl.tmp")));
}

TEST(Checkpoint, SpecialValuesSurviveBitExactly) {
  ParameterStore<double> s;
  s.set("x", Tensor<double>({5}, std::vector<double>{-0.0, std::numeric_limits<double>::denorm_min(),
                                                     std::numeric_limits<double>::infinity(),
                                                     std::numeric_limits<double>::quiet_NaN(), 1e308}));
  auto back = to_store<double>(image_of(s));
  EXPECT_TRUE(back.store.bit_equal(s));
  EXPECT_TRUE(std::signbit(back.store.at("x")[0]));
}

TEST(Checkpoint, BadMagicShowsFoundBytes) {
  auto bytes = expected_bytes_for_small_store();
  bytes[0] = 'Z';
  bytes[3] = '\x01';
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const BadMagic& e) {
    EXPECT_NE(std::string(e.what()).find("\"ZAT\\x01\""), std::string::npos) << e.what();
  }
  EXPECT_THROW(decode_checkpoint("XA"), BadMagic);
}

TEST(Checkpoint, VersionMismatch) {
  auto bytes = expected_bytes_for_small_store();
  bytes[4] = 2;
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const VersionMismatch& e) {
    EXPECT_EQ(e.found(), 2u);
  }
}

TEST(Checkpoint, TruncatedFinalTensorNamesIt) {
  const auto bytes = expected_bytes_for_small_store();
  for (std::size_t cut = 1; cut <= 8; ++cut) {
    try {
      decode_checkpoint(bytes.substr(0, bytes.size() - cut));
      FAIL() << "cut " << cut;
    } catch (const TruncatedRecord& e) {
      EXPECT_EQ(e.record(), "b.w") << "cut " << cut;
    }
  }
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 20)), TruncatedRecord);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), CheckpointError);
}

TEST(Checkpoint, DuplicateNameRejected) {
  std::string s = "XATL";
  put_le<std::uint32_t>(s, 1);
  put_le<std::uint64_t>(s, 2);
  s += "{}";
  put_le<std::uint64_t>(s, 2);
  for (int i = 0; i < 2; ++i) {
    put_le<std::uint32_t>(s, 1);
    s += "a";
    put_le<std::uint8_t>(s, 1);
    put_le<std::uint8_t>(s, 1);
    put_le<std::uint64_t>(s, 1);
    put_le<std::uint64_t>(s, 0);
  }
  EXPECT_THROW(decode_checkpoint(s), DuplicateName);
}

TEST(Checkpoint, DtypeMismatchOnTypedLoad) {
  EXPECT_THROW(to_store<double>(image_of(small_store())), DtypeMismatch);
  EXPECT_NO_THROW(to_store<float>(image_of(small_store())));
}

TEST(Checkpoint, MissingFile) {
  EXPECT_THROW(read_checkpoint("/nonexistent/dir/x.xatl"), ConfigError);
  EXPECT_THROW(save_checkpoint(small_store(), {}, "/nonexistent/dir/x.xatl"), IoError);
}

TEST(Diff, SelfDiffHasNoChanges) {
  auto img = image_of(build_model<float>(presets::toy(MixerKind::kSsm), 1));
  auto d = diff_checkpoints(img, img);
  EXPECT_TRUE(d.no_changes());
  EXPECT_EQ(d.identical.size(), img.records.size());
}

TEST(Diff, ThreeWayPartition) {
  ParameterStore<float> a, b;
  a.set("same", Tensor<float>({2}, 1.0f));
  b.set("same", Tensor<float>({2}, 1.0f));
  a.set("moved", Tensor<float>({2}, 1.0f));
  b.set("moved", Tensor<float>({2}, std::vector<float>{1.0f, 1.25f}));
  a.set("reshaped", Tensor<float>({2}, 0.0f));
  b.set("reshaped", Tensor<float>({1, 2}, 0.0f));
  a.set("gone", Tensor<float>({1}, 0.0f));
  b.set("new", Tensor<float>({1}, 0.0f));
  auto d = diff_checkpoints(image_of(a), image_of(b));
  EXPECT_EQ(d.identical, (std::vector<std::string>{"same"}));
  ASSERT_EQ(d.changed.size(), 2u);
  EXPECT_EQ(d.changed[0].name, "moved");
  EXPECT_DOUBLE_EQ(d.changed[0].max_abs_delta, 0.25);
  EXPECT_TRUE(std::isinf(d.changed[1].max_abs_delta));
  EXPECT_EQ(d.only_a, (std::vector<std::string>{"gone"}));
  EXPECT_EQ(d.only_b, (std::vector<std::string>{"new"}));
  auto j = diff_to_json(d);
  EXPECT_EQ(j.at("changed").size(), 2u);
  EXPECT_FALSE(d.no_changes());
}

TEST(Diff, TransferShowsZeroDeltaOnPlanEntries) {
  auto dcfg = presets::toy(MixerKind::kMha);
  auto scfg = presets::toy(MixerKind::kRetention);
  auto donor = build_model<float>(dcfg, 1);
  auto student = build_model<float>(scfg, 2);
  auto plan = build_transfer_plan(dcfg, scfg, {Component::kEmb, Component::kFfn});
  apply_transfer(donor, student, plan);
  auto d = diff_checkpoints(image_of(donor), image_of(student));
  std::set<std::string> identical(d.identical.begin(), d.identical.end());
  for (const auto& e : plan.entries) EXPECT_TRUE(identical.contains(e.dst)) << e.dst;
}

TEST(Diff, FrozenTrainingChangesExactlyTheUnfrozenNames) {
  auto audit = verify::freeze_invariance(30, 4);
  EXPECT_EQ(audit.failure, "");
  EXPECT_EQ(audit.frozen, 28u);
  EXPECT_GT(audit.changed, 0u);
}

TEST(RoundTrip, RandomStoresAllDtypes) {
  TempDir dir;
  std::mt19937_64 rng(2024);
  for (std::size_t k = 0; k < 50; ++k) {
    EXPECT_EQ(verify::roundtrip_failure(verify::random_store<float>(rng), dir.path(), k), "");
    EXPECT_EQ(verify::roundtrip_failure(verify::random_store<double>(rng), dir.path(), k), "");
  }
}
