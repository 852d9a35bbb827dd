#include "ntta/metrics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ntta/errors.hpp"

namespace ntta {

MeanStd mean_std(std::span<const double> xs) {
  MeanStd s;
  s.n = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() < 2) return s;
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return s;
}

double least_squares_slope(std::span<const double> ys) {
  const std::size_t n = ys.size();
  if (n < 2) return 0.0;
  const double xbar = (static_cast<double>(n) - 1.0) / 2.0;
  double ybar = 0.0;
  for (double y : ys) ybar += y;
  ybar /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xbar;
    sxy += dx * (ys[i] - ybar);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

std::string format_percent(const MeanStd& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * s.mean, 100.0 * s.std);
  return buf;
}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= k_ || static_cast<std::size_t>(predicted) >= k_)
    throw ContractError("confusion matrix: class index out of range");
  ++counts_[static_cast<std::size_t>(truth) * k_ + static_cast<std::size_t>(predicted)];
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  return n ? static_cast<double>(trace()) / static_cast<double>(n) : 0.0;
}

namespace {

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

double to_double(const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw FormatError("metrics: bad number '" + s + "'", 0);
  return v;
}

std::optional<double> to_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return to_double(s);
}

}  // namespace

const std::string& metrics_header() {
  static const std::string h =
      "command,arm,seed,status,accuracy,clean_accuracy,frozen_accuracy,adapted_accuracy,wall_seconds,config_hash";
  return h;
}

std::string to_csv(const MetricsRow& r) {
  std::ostringstream os;
  os << r.command << ',' << r.arm << ',' << r.seed << ',' << r.status << ',' << num(r.accuracy) << ','
     << opt(r.clean_accuracy) << ',' << opt(r.frozen_accuracy) << ',' << opt(r.adapted_accuracy) << ','
     << num(r.wall_seconds) << ',' << r.config_hash;
  return os.str();
}

MetricsRow parse_metrics_row(const std::string& line) {
  std::vector<std::string> f;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      f.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  f.push_back(cur);
  if (f.size() != 10) throw FormatError("metrics: expected 10 fields, got " + std::to_string(f.size()), 0);
  MetricsRow r;
  r.command = f[0];
  r.arm = f[1];
  r.seed = static_cast<std::uint64_t>(std::stoull(f[2]));
  r.status = f[3];
  r.accuracy = to_double(f[4]);
  r.clean_accuracy = to_opt(f[5]);
  r.frozen_accuracy = to_opt(f[6]);
  r.adapted_accuracy = to_opt(f[7]);
  r.wall_seconds = to_double(f[8]);
  r.config_hash = f[9];
  return r;
}

void write_metrics(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << metrics_header() << '\n';
  for (const auto& r : rows) out << to_csv(r) << '\n';
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
  std::string line;
  if (!std::getline(in, line) || line != metrics_header())
    throw FormatError("metrics: unexpected header in " + path.string(), 0);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(parse_metrics_row(line));
  return rows;
}

}  // namespace ntta
