#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ntta/data.hpp"
#include "ntta/model.hpp"
#include "ntta/objectives.hpp"
#include "ntta/tta.hpp"

namespace ntta {

struct TrainOptions {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
};

struct DataOptions {
  std::string path;               // trial file; empty -> synthetic data
  std::size_t n_trials = 1000;    // synthetic train/val/test pool
  std::size_t stream_trials = 1600;  // synthetic held-out stream for adaptation
  double noise_sd = 0.5;
  std::size_t levels = 2;
  Normalization normalization = Normalization::population;
  std::uint64_t seed = 0;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
};

struct TentConfig {
  bool enabled = true;
  TentOptions options;
  std::size_t batch_size = 32;
};

/// Every knob of a run. Text form is flat `key = value` lines; `#` starts a
/// comment; unknown keys are rejected. See ExperimentConfig::keys().
struct ExperimentConfig {
  ModelConfig model;  // its mdm / sd_enabled fields are replaced by model_config()
  bool mdm_enabled = true;
  MdmConfig mdm;
  SdOptions sd;
  TentConfig tent;
  TrainOptions train;
  DataOptions data;
  ShiftSpec shift = ShiftSpec::uniform(8, 1.5, 0.0, 0.5);
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5};

  /// Model config with the mdm and sd switches applied.
  ModelConfig model_config() const;
  SynthSpec synth_spec() const;
  /// Cross-field checks (channel counts, split fractions, ...). Throws ConfigError.
  void validate() const;

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Canonical text: every key in fixed order. parse(serialize()) == *this.
  std::string serialize() const;
  /// FNV-1a of serialize(), as 16 hex digits.
  std::string hash() const;

  static const std::vector<std::string>& keys();
};

}  // namespace ntta
