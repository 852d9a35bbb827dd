#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntta/model.hpp"

// Test-time adaptation by entropy minimization. Only the gamma/beta tensors of
// normalization layers move; batch-norm layers switch to current-batch
// statistics. No labels and no training data enter the adapter.

namespace ntta {

enum class AdaptMode { episodic, online };

std::string to_string(AdaptMode mode);
AdaptMode parse_adapt_mode(const std::string& s);

struct TentOptions {
  double lr = 1e-3;
  double momentum = 0.9;
  std::size_t steps_per_batch = 1;
  AdaptMode mode = AdaptMode::online;
};

template <typename T>
struct AdaptState {
  ParamList<T> adaptable;                 // gamma, beta of every NormLayer
  ParamList<T> frozen;                    // everything else
  std::vector<std::vector<T>> snapshot;   // pristine adaptable values
  std::vector<std::vector<T>> velocity;   // momentum buffers, one per adaptable tensor
  TentOptions options;
};

struct StreamRow {
  std::size_t batch = 0;
  double entropy = 0.0;  // before this batch's update
  std::vector<int> predictions;
  std::optional<double> accuracy;  // only when scoring labels were supplied
  double drift_norm = 0.0;         // ||(gamma, beta) - snapshot|| after the update
  bool flagged = false;            // non-finite entropy or gradient: update skipped
};

struct StreamReport {
  std::vector<StreamRow> rows;
  std::size_t scored = 0;
  std::size_t correct = 0;

  double cumulative_accuracy() const { return scored ? static_cast<double>(correct) / scored : 0.0; }
  std::vector<double> entropy_trace() const;
};

/// Partitions parameters, marks frozen ones as not requiring grad, switches
/// batch norms to adapt mode and snapshots gamma/beta.
template <typename T>
AdaptState<T> collect_adaptable(Model<T>& model, const TentOptions& options = {});

/// Predict-then-update on one unlabeled batch [B, C, T].
template <typename T>
StreamRow adapt_batch(AdaptState<T>& state, Model<T>& model, const Tensor<T>& x);

/// Sequential adaptation over the stream. `scoring_labels` (one vector per
/// batch) are read only after each batch's predictions are fixed.
template <typename T>
StreamReport run_stream(AdaptState<T>& state, Model<T>& model, std::span<const Tensor<T>> batches,
                        const std::vector<std::vector<int>>* scoring_labels = nullptr);

/// Restores gamma/beta bitwise from the snapshot and clears momentum.
template <typename T>
void reset(AdaptState<T>& state, Model<T>& model);

template <typename T>
double drift_norm(const AdaptState<T>& state);

/// Row-wise argmax.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

}  // namespace ntta
