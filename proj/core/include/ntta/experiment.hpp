#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ntta/config.hpp"
#include "ntta/data.hpp"
#include "ntta/metrics.hpp"
#include "ntta/model.hpp"
#include "ntta/tta.hpp"

namespace ntta {

// ---- data -------------------------------------------------------------------

/// Train/val/test pool: the trial file when data.path is set, synthetic otherwise.
DataSplit load_split(const ExperimentConfig& config);

/// Unlabeled adaptation stream before any shift: fresh synthetic trials that
/// follow the pool (or the test split of a trial file), shuffled by the data
/// seed and cut into tent.batch_size batches.
std::vector<TrialBatch> clean_stream(const ExperimentConfig& config, const DataSplit& split);

/// Applies `shift` batch by batch; batch i sits at stream position i.
std::vector<TrialBatch> shifted_stream(std::span<const TrialBatch> clean, const ShiftSpec& shift);

// ---- training ---------------------------------------------------------------

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_ce = 0.0;
  double train_sd = 0.0;
  double train_accuracy = 0.0;  // running, on the training forward passes
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  bool improved = false;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t last_good_epoch)
      : std::runtime_error("training diverged (non-finite loss) in epoch " + std::to_string(epoch) +
                           "; last good epoch " + std::to_string(last_good_epoch)),
        epoch_(epoch),
        last_good_(last_good_epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t last_good_epoch() const noexcept { return last_good_; }

 private:
  std::size_t epoch_;
  std::size_t last_good_;
};

struct TrainResult {
  Model<float> model;  // best-validation state
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  std::vector<double> step_losses;  // total loss of every optimizer step
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// AdamW on the configured objective. Keeps the state with the best validation
/// accuracy (ties broken by lower validation loss). Deterministic per seed.
TrainResult train_model(const ExperimentConfig& config, const DataSplit& split, std::uint64_t seed,
                        const EpochCallback& on_epoch = {});

// ---- evaluation -------------------------------------------------------------

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  double mean_entropy = 0.0;
  ConfusionMatrix confusion;
  std::vector<int> predictions;
};

/// Frozen inference (running statistics, no dropout, no updates).
EvalResult evaluate(Model<float>& model, std::span<const TrialBatch> batches);
EvalResult evaluate(Model<float>& model, const TrialDataset& data, std::size_t batch_size = 64);

struct AdaptComparison {
  EvalResult frozen;          // control on the identical stream
  StreamReport adapted;       // Tent arm
  double adapted_accuracy = 0.0;
  ConfusionMatrix adapted_confusion;
  Model<float> adapted_model;  // final adapted state
};

/// Runs the frozen control and Tent on clones of `trained`, batch for batch.
/// Labels in `stream` are used for scoring only, after predictions are fixed.
AdaptComparison compare_adaptation(const Model<float>& trained, std::span<const TrialBatch> stream,
                                   const TentOptions& options);

// ---- ablation ---------------------------------------------------------------

enum class Arm { baseline, sd, sd_mdm, sd_mdm_tent };

inline constexpr Arm kArms[] = {Arm::baseline, Arm::sd, Arm::sd_mdm, Arm::sd_mdm_tent};

std::string arm_name(Arm arm);
/// Config of the model trained for `arm` (the Tent arm shares the +SD+MDM model).
ExperimentConfig arm_config(const ExperimentConfig& base, Arm arm);

struct ArmRun {
  Arm arm = Arm::baseline;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double stream_accuracy = 0.0;  // on the shifted stream; the arm's headline number
  double clean_accuracy = 0.0;   // frozen, clean test split
  double train_accuracy = 0.0;   // frozen, clean train split
  std::size_t mdm_parameters = 0;
  std::size_t sd_heads = 0;
  double wall_seconds = 0.0;
  // +SD+MDM and Tent arms only
  std::optional<double> frozen_accuracy;
  std::optional<double> identity_frozen_accuracy;
  std::optional<double> identity_adapted_accuracy;
  std::vector<double> entropy_trace;
  std::shared_ptr<const Model<float>> model;  // trained model (Tent arm: before adaptation), when kept
};

struct ArmSummary {
  Arm arm = Arm::baseline;
  std::vector<double> accuracies;  // successful seeds, in seed order
  MeanStd stats;
  std::size_t failed = 0;
};

struct AblationResult {
  std::vector<ArmRun> runs;  // arm-major, seed-minor
  std::vector<ArmSummary> summary;
  std::string config_hash;
};

using RunCallback = std::function<void(const ArmRun&)>;

/// Four-arm ladder over config.seeds. Independent (arm, seed) trainings run on
/// up to `jobs` threads; results do not depend on `jobs`. A failing run is
/// recorded and the rest proceed.
AblationResult run_ablation(const ExperimentConfig& config, std::size_t jobs = 1, const RunCallback& on_run = {},
                            bool keep_models = false);

std::string format_ablation_table(const AblationResult& result);

// ---- gradient check ---------------------------------------------------------

struct GradcheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  GradcheckEntry worst;
  std::vector<GradcheckEntry> offenders;  // rel_error > tolerance
  double seconds = 0.0;

  bool passed() const { return offenders.empty(); }
};

/// Small config used by the gradient check.
ModelConfig gradcheck_config();

/// Central differences over every scalar of every parameter, 64-bit, on
/// cross-entropy + self-distillation (teacher held fixed) + prediction entropy in train mode.
/// Parameters are randomized first so no gradient is structurally zero.
GradcheckReport gradcheck_model(const ModelConfig& config, std::uint64_t seed, double tolerance,
                                double step = 1e-4);

/// Same check restricted to the multi-scale front-end on a random projection loss.
GradcheckReport gradcheck_mdm(const MdmConfig& config, std::size_t channels, std::size_t time_len,
                              std::uint64_t seed, double tolerance, double step = 1e-4);

}  // namespace ntta
