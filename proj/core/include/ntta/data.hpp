#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ntta/tensor.hpp"

namespace ntta {

/// Synthetic multi-channel trial generator. Every class owns a template
///   s_k(t) = (0.5 + 0.5 sin(2π·slow_k·t/T + φ_k)) · sin(2π·fast_k·t/T + ψ_k)
/// (a slow envelope modulating a fast carrier) and per-channel weights w_k[c].
/// A trial of class k is w_k[c]·s_k(t) + noise_sd·N(0,1) per channel, then each
/// channel is z-scored over time.
/// How generated trials are scaled.
///   population: every channel divided by its fixed population RMS; amplitude stays informative
///   trial: per-trial, per-channel z-score
enum class Normalization { population, trial };

std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

struct SynthSpec {
  std::size_t n_classes = 10;
  std::size_t channels = 8;
  std::size_t time_len = 128;
  double noise_sd = 0.5;
  std::uint64_t seed = 0;
  std::size_t levels = 2;  // activation levels per rhythm; class k has level k mod levels
  Normalization normalization = Normalization::population;

  void validate() const;
};

struct ClassTemplate {
  double slow_cycles = 0;   // envelope cycles per trial
  double fast_cycles = 0;   // carrier cycles per trial
  double slow_phase = 0;
  double fast_phase = 0;
  double level = 1.0;       // amplitude
  std::vector<double> channel_weights;
};

/// Class templates derived from the spec's seed. Class k plays rhythm k / levels (a
/// distinct (slow, fast) pair with its own channel weights) at amplitude 1.6^(k mod levels).
std::vector<ClassTemplate> class_templates(const SynthSpec& spec);

struct TrialBatch {
  Tensor<float> signals;  // [B, C, T]
  std::vector<int> labels;
  std::vector<std::uint32_t> trial_ids;

  std::size_t size() const { return labels.size(); }
  template <typename T>
  Tensor<T> as() const {
    return cast<T>(signals);
  }
};

/// Trials stored contiguously, channel-major within each trial.
struct TrialDataset {
  std::size_t channels = 0;
  std::size_t time_len = 0;
  std::size_t n_classes = 0;
  std::vector<float> signals;  // size() * channels * time_len
  std::vector<int> labels;
  std::vector<std::uint32_t> trial_ids;

  std::size_t size() const { return labels.size(); }
  std::size_t trial_size() const { return channels * time_len; }
  std::span<const float> trial(std::size_t i) const {
    return std::span<const float>(signals).subspan(i * trial_size(), trial_size());
  }
  TrialBatch batch(std::span<const std::size_t> indices) const;
  TrialBatch all() const;
  TrialDataset subset(std::span<const std::size_t> indices) const;
  /// Consecutive batches of `batch_size` (the last one may be shorter).
  std::vector<TrialBatch> batches(std::size_t batch_size) const;
};

/// Trials [first_index, first_index + n_trials) of the spec's infinite trial
/// sequence. Trial i has label i mod K and id i; its amplitude jitter and noise
/// depend only on (seed, i).
TrialDataset generate(const SynthSpec& spec, std::size_t n_trials, std::size_t first_index = 0);

enum class DriftSchedule { none, abrupt, ramp };

std::string to_string(DriftSchedule s);
DriftSchedule parse_drift_schedule(const std::string& s);

/// Covariate shift x' = gain ⊙ x + offset + noise, with gain/offset/noise
/// interpolated from identity by the drift schedule's factor at a stream position.
struct ShiftSpec {
  std::vector<double> gain;    // per channel; empty means 1
  std::vector<double> offset;  // per channel; empty means 0
  double noise_sd = 0.0;
  DriftSchedule schedule = DriftSchedule::none;
  std::size_t at_batch = 0;      // abrupt: first shifted batch
  std::size_t ramp_batches = 1;  // ramp: batches until the full shift
  std::uint64_t seed = 0;        // extra-noise stream

  static ShiftSpec identity() { return {}; }
  static ShiftSpec uniform(std::size_t channels, double gain, double offset, double noise_sd);

  /// 0 = unshifted, 1 = full shift.
  double factor(std::size_t position) const;
  bool is_identity() const;
};

/// Labels and ids are untouched. Extra noise depends only on (shift seed, trial id, position).
TrialBatch apply_shift(const TrialBatch& batch, const ShiftSpec& shift, std::size_t position);

struct DataSplit {
  TrialDataset train, val, test;
};

/// Label-stratified, seed-deterministic three-way split. Fractions must sum to 1.
DataSplit split(const TrialDataset& data, std::array<double, 3> fractions, std::uint64_t seed);

/// Little-endian "NTRL" v1 container:
///   "NTRL" u16 version u32 n_trials u32 C u32 T u32 K,
///   then n_trials x [u32 trial_id, u16 label, C*T float32 channel-major].
void write_trials(const std::filesystem::path& path, const TrialDataset& data);
std::vector<std::uint8_t> encode_trials(const TrialDataset& data);
/// Throws FormatError (with byte offset) on any malformed input.
TrialDataset read_trials(const std::filesystem::path& path);
TrialDataset decode_trials(std::span<const std::uint8_t> bytes);

}  // namespace ntta
