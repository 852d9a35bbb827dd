// ntta: train, evaluate, adapt and ablate sEEG-style decoders from the command line.
//
// Exit codes: 0 success, 1 usage/config error, 2 data/format or runtime error,
// 3 acceptance-property failure (gradient check above tolerance, diverged training).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ntta/checkpoint.hpp"
#include "ntta/config.hpp"
#include "ntta/experiment.hpp"
#include "ntta/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kProperty = 3 };

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string mode;
  bool partial = false;
  bool verbose = false;
};

class JsonLog {
 public:
  explicit JsonLog(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  void write(json j) { out_ << j.dump() << '\n'; }

 private:
  std::ofstream out_;
};

ntta::ExperimentConfig load_config(const Common& c) {
  auto cfg = c.config_path.empty() ? ntta::ExperimentConfig{} : ntta::ExperimentConfig::load(c.config_path);
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.mode.empty()) cfg.tent.options.mode = ntta::parse_adapt_mode(c.mode);
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const Common& c) {
  fs::path out(c.out_dir);
  fs::create_directories(out);
  return out;
}

json confusion_json(const ntta::ConfusionMatrix& cm) {
  json rows = json::array();
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < cm.classes(); ++p) row.push_back(cm.at(t, p));
    rows.push_back(row);
  }
  return rows;
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_train(const Common& c) {
  const auto cfg = load_config(c);
  const auto out = prepare_out(c);
  const auto hash = cfg.hash();
  JsonLog log(out / "log.jsonl");
  log.write({{"event", "config"}, {"config_hash", hash}, {"config", cfg.serialize()}});
  const auto data = ntta::load_split(cfg);
  std::vector<ntta::MetricsRow> rows;
  for (auto seed : cfg.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    auto result = ntta::train_model(cfg, data, seed, [&](const ntta::EpochStats& e) {
      std::printf("seed %llu epoch %3zu  loss %.4f  ce %.4f  sd %.4f  val %.2f%%%s\n",
                  static_cast<unsigned long long>(seed), e.epoch, e.train_loss, e.train_ce, e.train_sd,
                  100.0 * e.val_accuracy, e.improved ? "  *" : "");
      std::fflush(stdout);
      log.write({{"event", "epoch"}, {"seed", seed}, {"epoch", e.epoch}, {"train_loss", e.train_loss},
                 {"train_ce", e.train_ce}, {"train_sd", e.train_sd}, {"val_accuracy", e.val_accuracy},
                 {"val_loss", e.val_loss}, {"improved", e.improved}, {"config_hash", hash}});
    });
    auto& m = result.model;
    const auto train = ntta::evaluate(m, data.train);
    const auto test = ntta::evaluate(m, data.test);
    const auto ckpt = cfg.seeds.size() == 1 ? out / "model.nckp" : out / ("model_seed" + std::to_string(seed) + ".nckp");
    ntta::save_checkpoint(ckpt, m, cfg);
    ntta::MetricsRow row{"train", "", seed, "ok", test.accuracy, test.accuracy, {}, {}, since(t0), hash};
    rows.push_back(row);
    log.write({{"event", "run"}, {"seed", seed}, {"best_epoch", result.best_epoch},
               {"train_accuracy", train.accuracy}, {"test_accuracy", test.accuracy},
               {"confusion", confusion_json(test.confusion)}, {"checkpoint", ckpt.string()},
               {"wall_seconds", row.wall_seconds}, {"config_hash", hash}});
    std::printf("seed %llu: best epoch %zu, train %.2f%%, test %.2f%% -> %s\n", static_cast<unsigned long long>(seed),
                result.best_epoch, 100.0 * train.accuracy, 100.0 * test.accuracy, ckpt.string().c_str());
  }
  std::vector<double> accs;
  for (const auto& r : rows) accs.push_back(r.accuracy);
  const auto s = ntta::mean_std(accs);
  log.write({{"event", "summary"}, {"accuracies", accs}, {"mean", s.mean}, {"std", s.std}, {"config_hash", hash}});
  ntta::write_metrics(out / "metrics.csv", rows);
  std::printf("test accuracy %s %%\n", ntta::format_percent(s).c_str());
  return kOk;
}

ntta::LoadedCheckpoint load_model(const std::string& path, const Common& c) {
  if (c.config_path.empty()) return ntta::load_checkpoint(path, nullptr, c.partial);
  const auto target = load_config(c);
  return ntta::load_checkpoint(path, &target, c.partial);
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  auto loaded = load_model(checkpoint, c);
  for (const auto& s : loaded.skipped) std::printf("skipped tensor %s\n", s.c_str());
  auto& cfg = loaded.config;
  if (c.seed) cfg.seeds = {*c.seed};
  const auto out = prepare_out(c);
  const auto hash = cfg.hash();
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = ntta::load_split(cfg);
  const auto test = ntta::evaluate(loaded.model, data.test);
  JsonLog log(out / "log.jsonl");
  log.write({{"event", "eval"}, {"checkpoint", checkpoint}, {"accuracy", test.accuracy}, {"loss", test.loss},
             {"confusion", confusion_json(test.confusion)}, {"config_hash", hash}});
  const std::vector<ntta::MetricsRow> rows{
      {"eval", "", cfg.seeds.front(), "ok", test.accuracy, test.accuracy, {}, {}, since(t0), hash}};
  ntta::write_metrics(out / "metrics.csv", rows);
  std::printf("test accuracy %.2f%% (%zu/%zu)\n", 100.0 * test.accuracy, test.confusion.trace(),
              test.confusion.total());
  return kOk;
}

int cmd_adapt(const Common& c, const std::string& checkpoint) {
  auto loaded = load_model(checkpoint, c);
  auto& cfg = loaded.config;
  if (!c.mode.empty()) cfg.tent.options.mode = ntta::parse_adapt_mode(c.mode);
  if (c.seed) cfg.seeds = {*c.seed};
  const auto out = prepare_out(c);
  const auto hash = cfg.hash();
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = ntta::load_split(cfg);
  const auto clean = ntta::clean_stream(cfg, data);
  const auto stream = ntta::shifted_stream(clean, cfg.shift);
  auto cmp = ntta::compare_adaptation(loaded.model, stream, cfg.tent.options);
  JsonLog log(out / "log.jsonl");
  for (const auto& r : cmp.adapted.rows)
    log.write({{"event", "batch"}, {"batch", r.batch}, {"entropy", r.entropy}, {"accuracy", r.accuracy.value_or(0.0)},
               {"drift_norm", r.drift_norm}, {"flagged", r.flagged}, {"config_hash", hash}});
  log.write({{"event", "adapt"}, {"mode", ntta::to_string(cfg.tent.options.mode)},
             {"frozen_accuracy", cmp.frozen.accuracy}, {"adapted_accuracy", cmp.adapted_accuracy},
             {"entropy_trace", cmp.adapted.entropy_trace()},
             {"confusion", confusion_json(cmp.adapted_confusion)}, {"config_hash", hash}});
  const std::vector<ntta::MetricsRow> rows{{"adapt", ntta::to_string(cfg.tent.options.mode), cfg.seeds.front(), "ok",
                                            cmp.adapted_accuracy, {}, cmp.frozen.accuracy, cmp.adapted_accuracy,
                                            since(t0), hash}};
  ntta::write_metrics(out / "metrics.csv", rows);
  std::printf("stream of %zu batches (%s): frozen %.2f%%, adapted %.2f%%\n", stream.size(),
              ntta::to_string(cfg.tent.options.mode).c_str(), 100.0 * cmp.frozen.accuracy,
              100.0 * cmp.adapted_accuracy);
  return kOk;
}

int cmd_ablate(const Common& c, std::size_t jobs) {
  const auto cfg = load_config(c);
  const auto out = prepare_out(c);
  JsonLog log(out / "log.jsonl");
  const auto hash = cfg.hash();
  log.write({{"event", "config"}, {"config_hash", hash}, {"config", cfg.serialize()}});
  const auto result = ntta::run_ablation(cfg, jobs, [](const ntta::ArmRun& r) {
    if (r.ok)
      std::printf("%-14s seed %llu: %.2f%%  (%.1fs)\n", ntta::arm_name(r.arm).c_str(),
                  static_cast<unsigned long long>(r.seed), 100.0 * r.stream_accuracy, r.wall_seconds);
    else
      std::printf("%-14s seed %llu: FAILED %s\n", ntta::arm_name(r.arm).c_str(),
                  static_cast<unsigned long long>(r.seed), r.error.c_str());
    std::fflush(stdout);
  });
  std::vector<ntta::MetricsRow> rows;
  for (const auto& r : result.runs) {
    ntta::MetricsRow row{"ablate", ntta::arm_name(r.arm), r.seed, r.ok ? "ok" : "failed", r.stream_accuracy,
                         r.clean_accuracy, r.frozen_accuracy, {}, r.wall_seconds, hash};
    if (r.arm == ntta::Arm::sd_mdm_tent) row.adapted_accuracy = r.stream_accuracy;
    rows.push_back(row);
    json j{{"event", "run"},           {"arm", ntta::arm_name(r.arm)}, {"seed", r.seed},
           {"ok", r.ok},               {"accuracy", r.stream_accuracy}, {"clean_accuracy", r.clean_accuracy},
           {"train_accuracy", r.train_accuracy}, {"mdm_parameters", r.mdm_parameters}, {"sd_heads", r.sd_heads},
           {"wall_seconds", r.wall_seconds}, {"config_hash", hash}};
    if (!r.ok) j["error"] = r.error;
    if (!r.entropy_trace.empty()) j["entropy_trace"] = r.entropy_trace;
    log.write(j);
  }
  for (const auto& s : result.summary)
    log.write({{"event", "summary"}, {"arm", ntta::arm_name(s.arm)}, {"accuracies", s.accuracies},
               {"mean", s.stats.mean}, {"std", s.stats.std}, {"failed", s.failed}, {"config_hash", hash}});
  ntta::write_metrics(out / "metrics.csv", rows);
  std::printf("\n%s", ntta::format_ablation_table(result).c_str());
  return kOk;
}

int cmd_synth(const Common& c, std::size_t trials, bool stream) {
  const auto cfg = load_config(c);
  fs::path out(c.out_dir);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  ntta::TrialDataset data;
  if (stream) {
    // The shifted adaptation stream in batch order.
    const auto split = ntta::load_split(cfg);
    const auto batches = ntta::shifted_stream(ntta::clean_stream(cfg, split), cfg.shift);
    data.channels = cfg.model.channels;
    data.time_len = cfg.model.time_len;
    data.n_classes = cfg.model.n_classes;
    for (const auto& b : batches) {
      data.signals.insert(data.signals.end(), b.signals.data().begin(), b.signals.data().end());
      data.labels.insert(data.labels.end(), b.labels.begin(), b.labels.end());
      data.trial_ids.insert(data.trial_ids.end(), b.trial_ids.begin(), b.trial_ids.end());
    }
  } else {
    data = ntta::generate(cfg.synth_spec(), trials ? trials : cfg.data.n_trials);
  }
  ntta::write_trials(out, data);
  std::printf("wrote %zu trials (%zu x %zu) to %s\n", data.size(), data.channels, data.time_len, out.string().c_str());
  return kOk;
}

int cmd_gradcheck(const Common& c, double tolerance, bool mdm_only) {
  const auto cfg = ntta::gradcheck_config();
  const std::uint64_t seed = c.seed.value_or(0);
  const auto rep = mdm_only ? ntta::gradcheck_mdm(*cfg.mdm, cfg.channels, cfg.time_len, seed, tolerance)
                            : ntta::gradcheck_model(cfg, seed, tolerance);
  std::printf("checked %zu scalars in %.2fs; max relative error %.3e at %s[%zu] (analytic %.9e, numeric %.9e)\n",
              rep.checked, rep.seconds, rep.max_rel_error, rep.worst.tensor.c_str(), rep.worst.index,
              rep.worst.analytic, rep.worst.numeric);
  if (rep.passed()) {
    std::printf("PASS (tolerance %.3e)\n", tolerance);
    return kOk;
  }
  std::printf("FAIL: %zu scalars above tolerance %.3e\n", rep.offenders.size(), tolerance);
  for (const auto& e : rep.offenders)
    std::printf("  %s[%zu] rel %.3e analytic %.9e numeric %.9e\n", e.tensor.c_str(), e.index, e.rel_error, e.analytic,
                e.numeric);
  return kProperty;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ntta: multi-scale transformer decoding with test-time adaptation"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_path, "Experiment config file (key = value lines)");
  app.add_option("--seed", common.seed, "Run a single seed instead of the configured list");
  app.add_option("--out", common.out_dir, "Output directory (synth: output file)");
  app.add_option("--mode", common.mode, "Adaptation mode")->check(CLI::IsMember({"episodic", "online"}));
  app.add_flag("--partial", common.partial, "Skip checkpoint tensors the target model does not have");
  app.add_flag("-v,--verbose", common.verbose, "Log progress to stderr");

  std::string checkpoint;
  std::size_t jobs = 1, trials = 0;
  double tolerance = 1e-3;
  bool mdm_only = false, stream = false;

  auto* train = app.add_subcommand("train", "Train one model per seed and save checkpoints");
  auto* eval = app.add_subcommand("eval", "Frozen evaluation of a checkpoint on the test split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  auto* adapt = app.add_subcommand("adapt", "Frozen control vs Tent on the shifted stream");
  adapt->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  auto* ablate = app.add_subcommand("ablate", "Four-arm ablation ladder over all seeds");
  ablate->add_option("--jobs", jobs, "Parallel training runs")->check(CLI::PositiveNumber);
  auto* synth = app.add_subcommand("synth", "Write synthetic trials to a trial file");
  synth->add_option("--trials", trials, "Number of trials (default data.n_trials)");
  synth->add_flag("--stream", stream, "Write the shifted adaptation stream instead");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gradcheck->add_option("--tolerance", tolerance, "Maximum relative error");
  gradcheck->add_flag("--mdm-only", mdm_only, "Check the multi-scale front-end alone");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (common.verbose) ntta::set_log_level(ntta::LogLevel::info);

  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, checkpoint);
    if (*adapt) return cmd_adapt(common, checkpoint);
    if (*ablate) return cmd_ablate(common, jobs);
    if (*synth) return cmd_synth(common, trials, stream);
    if (*gradcheck) return cmd_gradcheck(common, tolerance, mdm_only);
  } catch (const ntta::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const ntta::FormatError& e) {
    std::cerr << "format error: " << e.what() << " (byte " << e.offset() << ")\n";
    return kData;
  } catch (const ntta::TrainingDiverged& e) {
    std::cerr << e.what() << '\n';
    return kProperty;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
