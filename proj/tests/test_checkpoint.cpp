#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "ntta/checkpoint.hpp"
#include "support.hpp"

using namespace ntta;
using ntta::testing::randn_f;

namespace {

ExperimentConfig tiny_config() {
  return ExperimentConfig::parse(
      "model.channels = 2\nmodel.time_len = 32\nmodel.patch_len = 8\nmodel.d_model = 8\nmodel.n_layers = 3\n"
      "model.n_heads = 2\nmodel.n_classes = 4\nmodel.ff_hidden = 8\nmdm.levels = 2\nmdm.rank = 2\n");
}

Model<float> trained_like(const ExperimentConfig& cfg) {
  Model<float> m(cfg.model_config(), 5);
  Rng rng(5);
  for (auto& p : m.parameters())
    for (auto& v : p.tensor.data()) v += static_cast<float>(0.1 * rng.normal());
  m.forward(randn_f({6, 2, 32}, rng), Mode::train);  // move the running statistics
  GradTape<float>::current().clear();
  return m;
}

CheckpointError::Kind kind_of(std::span<const std::uint8_t> bytes, const ExperimentConfig* target = nullptr,
                              bool partial = false) {
  try {
    decode_checkpoint(bytes, target, partial);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a checkpoint error";
  return CheckpointError::Kind::corrupt;
}

// Offset of the first extent of the named tensor.
std::size_t extent_offset(std::span<const std::uint8_t> bytes, const std::string& name) {
  const std::string needle = name;
  for (std::size_t i = 10; i + needle.size() < bytes.size(); ++i)
    if (std::memcmp(bytes.data() + i, needle.data(), needle.size()) == 0 && bytes[i - 2] == needle.size())
      return i + needle.size() + 1;
  return 0;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto cfg = tiny_config();
  const auto model = trained_like(cfg);
  const auto path = std::filesystem::temp_directory_path() / "ntta_test_roundtrip.nckp";
  save_checkpoint(path, model, cfg);
  auto loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.config.serialize(), cfg.serialize());
  auto a = model.parameters();
  auto b = loaded.model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(std::memcmp(a[i].tensor.data().data(), b[i].tensor.data().data(), a[i].tensor.numel() * 4), 0)
        << a[i].name;
  }
  auto ba = model.buffers();
  auto bb = loaded.model.buffers();
  for (std::size_t i = 0; i < ba.size(); ++i)
    EXPECT_EQ(std::memcmp(ba[i].tensor.data().data(), bb[i].tensor.data().data(), ba[i].tensor.numel() * 4), 0);
  EXPECT_EQ(encode_checkpoint(loaded.model, loaded.config), encode_checkpoint(model, cfg));
}

TEST(Checkpoint, LoadedModelReproducesLogitsBitwise) {
  const auto cfg = tiny_config();
  auto model = trained_like(cfg);
  auto loaded = decode_checkpoint(encode_checkpoint(model, cfg));
  Rng rng(6);
  auto x = randn_f({4, 2, 32}, rng);
  auto a = model.forward(x, Mode::infer).logits;
  auto b = loaded.model.forward(x, Mode::infer).logits;
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.numel() * 4), 0);
}

TEST(Checkpoint, HeaderLayout) {
  const auto cfg = tiny_config();
  auto bytes = encode_checkpoint(trained_like(cfg), cfg);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "NCKP");
  EXPECT_EQ(bytes[4] | (bytes[5] << 8), kCheckpointVersion);
  const std::size_t count = bytes[6] | (bytes[7] << 8) | (bytes[8] << 16) | (bytes[9] << 24);
  Model<float> m(cfg.model_config(), 0);
  EXPECT_EQ(count, m.parameters().size() + m.buffers().size());
}

TEST(Checkpoint, TamperedShapeNamesTheTensor) {
  const auto cfg = tiny_config();
  auto bytes = encode_checkpoint(trained_like(cfg), cfg);
  const auto at = extent_offset(bytes, "head.fc.weight");
  ASSERT_GT(at, 0u);
  // [4, 8] -> [8, 4]: same payload size, wrong shape.
  bytes[at] = 8;
  bytes[at + 4] = 4;
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::shape_mismatch);
    EXPECT_EQ(e.tensor(), "head.fc.weight");
    EXPECT_NE(std::string(e.what()).find("head.fc.weight"), std::string::npos);
  }
}

TEST(Checkpoint, ChecksumAndVersionErrors) {
  const auto cfg = tiny_config();
  const auto good = encode_checkpoint(trained_like(cfg), cfg);
  const std::size_t config_len = good[good.size() - 12] | (good[good.size() - 11] << 8);
  auto flipped = good;
  flipped[good.size() - 12 - config_len - 1] ^= 0x01;  // last payload byte
  EXPECT_EQ(kind_of(flipped), CheckpointError::Kind::checksum_mismatch);
  auto version = good;
  version[4] = 7;
  EXPECT_EQ(kind_of(version), CheckpointError::Kind::version_mismatch);
  auto magic = good;
  magic[1] = 'X';
  EXPECT_EQ(kind_of(magic), CheckpointError::Kind::corrupt);
  EXPECT_EQ(kind_of(std::span(good).first(good.size() / 2)), CheckpointError::Kind::corrupt);
  EXPECT_EQ(kind_of(std::span(good).first(9)), CheckpointError::Kind::corrupt);
}

TEST(Checkpoint, MissingAndExtraTensors) {
  auto with_sd = tiny_config();
  auto no_sd = ExperimentConfig::parse(with_sd.serialize() + "");
  no_sd.sd.enabled = false;
  const auto sd_bytes = encode_checkpoint(trained_like(with_sd), with_sd);
  const auto plain_bytes = encode_checkpoint(trained_like(no_sd), no_sd);

  EXPECT_EQ(kind_of(sd_bytes, &no_sd), CheckpointError::Kind::extra_tensor);
  auto partial = decode_checkpoint(sd_bytes, &no_sd, true);
  EXPECT_EQ(partial.skipped.size(), 2u * 2u);  // two aux heads, weight + bias
  for (const auto& name : partial.skipped) EXPECT_EQ(name.rfind("sd_heads.", 0), 0u) << name;
  EXPECT_TRUE(partial.model.sd_heads.empty());

  EXPECT_EQ(kind_of(plain_bytes, &with_sd), CheckpointError::Kind::missing_tensor);
  EXPECT_EQ(kind_of(plain_bytes, &with_sd, true), CheckpointError::Kind::missing_tensor);
}

TEST(Checkpoint, MissingFileIsReported) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.nckp"), std::runtime_error);
}
