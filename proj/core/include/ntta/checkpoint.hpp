#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ntta/config.hpp"
#include "ntta/errors.hpp"
#include "ntta/model.hpp"

// Little-endian "NCKP" container:
//   "NCKP" u16 version u32 tensor_count
//   tensor_count x [u16 name_len, name, u8 rank, u32 extents[rank], float32 payload]
//   config text, u32 config_len
//   u64 FNV-1a checksum of every preceding byte
// Tensors are the model's parameters followed by its buffers, in enumeration order.

namespace ntta {

inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public FormatError {
 public:
  enum class Kind { corrupt, version_mismatch, missing_tensor, extra_tensor, shape_mismatch, checksum_mismatch };

  CheckpointError(Kind kind, const std::string& what, std::size_t offset, std::string tensor = {})
      : FormatError(what, offset), kind_(kind), tensor_(std::move(tensor)) {}

  Kind kind() const noexcept { return kind_; }
  /// Offending tensor name, when the error concerns one.
  const std::string& tensor() const noexcept { return tensor_; }

 private:
  Kind kind_;
  std::string tensor_;
};

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, const ExperimentConfig& config);
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const ExperimentConfig& config);

struct LoadedCheckpoint {
  ExperimentConfig config;  // the config the model was built from
  Model<float> model;
  std::vector<std::string> skipped;  // extra tensors ignored under `partial`
};

/// Rebuilds the model from `target` (or the embedded config when null) and fills
/// it from the file. Every declared shape is checked against the target model.
/// With `partial`, tensors the target does not have are skipped instead of rejected.
LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const ExperimentConfig* target = nullptr,
                                   bool partial = false);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ExperimentConfig* target = nullptr,
                                 bool partial = false);

}  // namespace ntta
