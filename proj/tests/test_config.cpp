#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "stseq/checkpoint.hpp"
#include "stseq/config.hpp"

namespace stseq {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

RunConfig sample_config() {
  RunConfig c;
  c.seed = 42;
  c.frames = 8;
  c.eval_frames = {4, 8};
  c.layout = {8, 2};
  c.input_mode = InputMode::kGlobalLocal;
  c.local_frames = 4;
  c.global_local = GlobalLocalVariant::kSimpleAdd;
  c.mask.mode = MaskMode::kDynamicUniform;
  c.positions = PositionPolicy::kKeep;
  c.mask_granularity = MaskGranularity::kBatch;
  c.mvm = true;
  c.mvm_target = MvmTarget::kLogits;
  c.model.dim = 32;
  c.model.vocab = 32;
  c.optimizer.steps = 17;
  c.precision = Precision::kF64;
  return c;
}

TEST(RunConfigTest, DefaultsValidate) { EXPECT_NO_THROW(RunConfig{}.validate()); }

TEST(RunConfigTest, JsonRoundTrip) {
  const auto c = sample_config();
  const auto j = c.to_json();
  const auto back = RunConfig::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(back.input_mode, InputMode::kGlobalLocal);
  EXPECT_EQ(back.positions, PositionPolicy::kKeep);
  EXPECT_EQ(back.mvm_target, MvmTarget::kLogits);
}

TEST(RunConfigTest, AbsentKeysKeepDefaults) {
  const auto c = RunConfig::from_json(json{{"seed", 5}, {"model", {{"dim", 32}}}});
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.model.dim, 32u);
  EXPECT_EQ(c.model.layers, RunConfig{}.model.layers);
  EXPECT_EQ(c.frames, RunConfig{}.frames);
}

TEST(RunConfigTest, RejectsUnknownKeys) {
  EXPECT_THROW(RunConfig::from_json(json{{"sed", 1}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"mask", {{"sigmaa", 0.1}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"optimizer", {{"momentum", 0.9}}}}), ConfigError);
}

TEST(RunConfigTest, RejectsBadValues) {
  auto bad = [](json j) { EXPECT_THROW(RunConfig::from_json(j), ConfigError) << j.dump(); };
  bad({{"frames", 2}});  // reversal needs three
  bad({{"eval_frames", json::array()}});
  bad({{"input_mode", "pooling"}});
  bad({{"precision", "f16"}});
  bad({{"task", "jump"}});
  bad({{"frames", "many"}});
  bad({{"mask", {{"mode", "dynamic-normal"}, {"sigma", -0.1}}}});
  bad({{"mask", {{"positions", "shift"}}}});
  bad({{"mvm", {{"target", "embeddings"}}}});
  bad({{"optimizer", {{"lr", 0.0}}}});
  bad({{"optimizer", {{"beta1", 1.0}}}});
  bad({{"optimizer", {{"batch_size", 0}}}});
  bad({{"model", {{"heads", 3}}}});
  bad({{"model", {{"vocab", 8}}}});
  bad({{"input_mode", "global-local"}, {"local_frames", 32}});
  bad({{"schema_version", 99}});
  bad({{"llm_weight", -1.0}});
}

TEST(RunConfigTest, HashTracksContent) {
  auto a = sample_config();
  auto b = sample_config();
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  b.mask.sigma = 0.2;
  EXPECT_NE(a.hash(), b.hash());
  b = a;
  b.seed = 43;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(RunConfigTest, LoadFromFile) {
  const auto dir = fs::temp_directory_path() / "stseq_config_test";
  fs::create_directories(dir);
  const auto path = dir / "config.json";
  std::ofstream(path) << sample_config().to_json().dump(2);
  EXPECT_EQ(RunConfig::load(path.string()).hash(), sample_config().hash());
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(RunConfig::load(path.string()), ConfigError);
  EXPECT_THROW(RunConfig::load((dir / "missing.json").string()), IoError);
  fs::remove_all(dir);
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config = sample_config().to_json();
  c.tensors.push_back({"a", {2, 3}, {1.0f, -2.5f, 3.25f, 0.0f, 1e-30f, -7.0f}});
  c.tensors.push_back({"b", {4}, {0.5f, 0.25f, 0.125f, 0.0625f}});
  return c;
}

TEST(CheckpointTest, EncodeDecodeRoundTrip) {
  const auto c = sample_checkpoint();
  const auto bytes = encode_checkpoint(c);
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(std::memcmp(bytes.data(), kCheckpointMagic, 8), 0);
  std::uint64_t hlen = 0;
  for (int i = 7; i >= 0; --i) hlen = (hlen << 8) | bytes[8 + std::size_t(i)];
  const auto header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + long(hlen));
  EXPECT_EQ(header.at("format_version"), kCheckpointFormatVersion);
  EXPECT_EQ(header.at("payload_bytes").get<std::size_t>(), 10u * 4u);
  // Payload values are little-endian binary32.
  const std::size_t base = 16 + hlen;
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | bytes[base + 4 + std::size_t(i)];
  float second;
  std::memcpy(&second, &bits, 4);
  EXPECT_EQ(second, -2.5f);

  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.config, c.config);
  ASSERT_EQ(back.tensors.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.tensors[i].name, c.tensors[i].name);
    EXPECT_EQ(back.tensors[i].shape, c.tensors[i].shape);
    EXPECT_EQ(back.tensors[i].values, c.tensors[i].values);
  }
  EXPECT_THROW(back.find("missing"), IoError);
}

TEST(CheckpointTest, CorruptionIsIoError) {
  const auto good = encode_checkpoint(sample_checkpoint());
  auto bad_magic = good;
  bad_magic[3] ^= 0xff;
  EXPECT_THROW(decode_checkpoint(bad_magic), IoError);
  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), IoError);
  auto huge_header = good;
  huge_header[15] = 0x7f;
  EXPECT_THROW(decode_checkpoint(huge_header), IoError);
  auto bad_json = good;
  bad_json[16] = '[';
  bad_json[17] = '[';
  EXPECT_THROW(decode_checkpoint(bad_json), IoError);
  EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>(5, 0)), IoError);
}

TEST(CheckpointTest, FileRoundTrip) {
  const auto path = fs::temp_directory_path() / "stseq_ckpt_test.bin";
  write_checkpoint(path, sample_checkpoint());
  EXPECT_EQ(read_checkpoint(path).tensors[1].values, sample_checkpoint().tensors[1].values);
  fs::remove(path);
  EXPECT_THROW(read_checkpoint(path), IoError);
}

}  // namespace
}  // namespace stseq
