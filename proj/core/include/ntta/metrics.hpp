#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ntta {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for fewer than two values
  std::size_t n = 0;
};

MeanStd mean_std(std::span<const double> xs);

/// Ordinary least-squares slope of ys against 0, 1, 2, ...
double least_squares_slope(std::span<const double> ys);

/// "m.mm ± s.ss" in percent.
std::string format_percent(const MeanStd& s);

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t n_classes) : k_(n_classes), counts_(n_classes * n_classes, 0) {}

  void add(int truth, int predicted);
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  std::size_t classes() const { return k_; }
  std::size_t trace() const;
  std::size_t total() const;
  double accuracy() const;

 private:
  std::size_t k_ = 0;
  std::vector<std::size_t> counts_;
};

/// One row of the metrics table.
struct MetricsRow {
  std::string command;
  std::string arm;
  std::uint64_t seed = 0;
  std::string status = "ok";  // "ok" or "failed"
  double accuracy = 0.0;      // headline accuracy of the run
  std::optional<double> clean_accuracy;
  std::optional<double> frozen_accuracy;
  std::optional<double> adapted_accuracy;
  double wall_seconds = 0.0;
  std::string config_hash;
};

/// Fixed header of the metrics table.
const std::string& metrics_header();
std::string to_csv(const MetricsRow& row);
MetricsRow parse_metrics_row(const std::string& line);

void write_metrics(const std::filesystem::path& path, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

}  // namespace ntta
