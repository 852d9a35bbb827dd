#include "ntta/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "ntta/errors.hpp"
#include "ntta/log.hpp"
#include "ntta/objectives.hpp"
#include "ntta/optim.hpp"

namespace ntta {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

// ---- data -------------------------------------------------------------------

DataSplit load_split(const ExperimentConfig& config) {
  if (config.data.path.empty()) {
    const auto pool = generate(config.synth_spec(), config.data.n_trials);
    return split(pool, config.data.fractions, config.data.seed);
  }
  const auto data = read_trials(config.data.path);
  const auto& m = config.model;
  if (data.channels != m.channels || data.time_len != m.time_len)
    throw ConfigError("data: trial file has " + std::to_string(data.channels) + "x" + std::to_string(data.time_len) +
                      " trials, model expects " + std::to_string(m.channels) + "x" + std::to_string(m.time_len));
  if (data.n_classes > m.n_classes)
    throw ConfigError("data: trial file has " + std::to_string(data.n_classes) + " classes, model has " +
                      std::to_string(m.n_classes));
  return split(data, config.data.fractions, config.data.seed);
}

std::vector<TrialBatch> clean_stream(const ExperimentConfig& config, const DataSplit& split) {
  const TrialDataset pool = config.data.path.empty()
                                ? generate(config.synth_spec(), config.data.stream_trials, config.data.n_trials)
                                : split.test;
  auto order = iota_indices(pool.size());
  Rng rng(derive_seed(config.data.seed, 0x57AE));
  rng.shuffle(order.begin(), order.end());
  const std::size_t bs = config.tent.batch_size;
  std::vector<TrialBatch> out;
  for (std::size_t i = 0; i < order.size(); i += bs) {
    const std::size_t n = std::min(bs, order.size() - i);
    if (n < 2 && !out.empty()) break;
    out.push_back(pool.batch(std::span<const std::size_t>(order).subspan(i, n)));
  }
  if (out.empty()) throw ConfigError("stream: no trials");
  return out;
}

std::vector<TrialBatch> shifted_stream(std::span<const TrialBatch> clean, const ShiftSpec& shift) {
  std::vector<TrialBatch> out;
  out.reserve(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) out.push_back(apply_shift(clean[i], shift, i));
  return out;
}

// ---- evaluation -------------------------------------------------------------

EvalResult evaluate(Model<float>& model, std::span<const TrialBatch> batches) {
  NoGradGuard no_grad;
  EvalResult r;
  r.confusion = ConfusionMatrix(model.config().n_classes);
  double loss = 0.0, entropy = 0.0;
  std::size_t n = 0;
  for (const auto& b : batches) {
    const auto logits = model.forward(b.signals, Mode::infer).logits;
    const auto pred = argmax_rows(logits);
    loss += static_cast<double>(cross_entropy(logits, std::span<const int>(b.labels)).item()) * b.size();
    entropy += static_cast<double>(prediction_entropy(logits).item()) * b.size();
    for (std::size_t i = 0; i < pred.size(); ++i) r.confusion.add(b.labels[i], pred[i]);
    r.predictions.insert(r.predictions.end(), pred.begin(), pred.end());
    n += b.size();
  }
  if (n == 0) return r;
  r.accuracy = r.confusion.accuracy();
  r.loss = loss / static_cast<double>(n);
  r.mean_entropy = entropy / static_cast<double>(n);
  return r;
}

EvalResult evaluate(Model<float>& model, const TrialDataset& data, std::size_t batch_size) {
  const auto batches = data.batches(batch_size);
  return evaluate(model, batches);
}

AdaptComparison compare_adaptation(const Model<float>& trained, std::span<const TrialBatch> stream,
                                   const TentOptions& options) {
  auto frozen = trained.clone();
  EvalResult control = evaluate(frozen, stream);

  auto adapted = trained.clone();
  std::vector<Tensor<float>> inputs;
  std::vector<std::vector<int>> labels;
  for (const auto& b : stream) {
    inputs.push_back(b.signals);
    labels.push_back(b.labels);
  }
  auto state = collect_adaptable(adapted, options);
  auto report = run_stream(state, adapted, std::span<const Tensor<float>>(inputs), &labels);

  ConfusionMatrix cm(trained.config().n_classes);
  for (std::size_t i = 0; i < stream.size(); ++i)
    for (std::size_t j = 0; j < stream[i].size(); ++j) cm.add(stream[i].labels[j], report.rows[i].predictions[j]);
  const double acc = report.cumulative_accuracy();
  return AdaptComparison{std::move(control), std::move(report), acc, std::move(cm), std::move(adapted)};
}

// ---- training ---------------------------------------------------------------

TrainResult train_model(const ExperimentConfig& config, const DataSplit& split, std::uint64_t seed,
                        const EpochCallback& on_epoch) {
  config.validate();
  if (split.train.size() < 2) throw ConfigError("train: need at least 2 training trials");
  Model<float> model(config.model_config(), seed);
  AdamWOptions opt;
  opt.lr = config.train.lr;
  opt.weight_decay = config.train.weight_decay;
  AdamW<float> optimizer(model.parameters(), opt);
  auto& tape = GradTape<float>::current();

  TrainResult result{model.clone(), {}, 0, {}};
  double best_acc = -1.0, best_loss = 0.0;
  std::size_t last_good = 0;
  const auto val_batches = split.val.batches(64);
  auto order = iota_indices(split.train.size());
  const std::size_t bs = config.train.batch_size;

  for (std::size_t epoch = 1; epoch <= config.train.epochs; ++epoch) {
    Rng shuffler(derive_seed(seed, 1000 + epoch));
    shuffler.shuffle(order.begin(), order.end());
    EpochStats st;
    st.epoch = epoch;
    std::size_t steps = 0;
    for (std::size_t i = 0; i + 2 <= order.size(); i += bs) {
      const std::size_t n = std::min(bs, order.size() - i);
      if (n < 2) break;
      const auto batch = split.train.batch(std::span<const std::size_t>(order).subspan(i, n));
      tape.clear();
      auto br = training_loss(model, batch.signals, std::span<const int>(batch.labels), config.sd, Mode::train);
      const double total = static_cast<double>(br.total.item());
      if (!std::isfinite(total)) {
        tape.clear();
        throw TrainingDiverged(epoch, last_good);
      }
      backward(br.total);
      optimizer.step();
      result.step_losses.push_back(total);
      st.train_loss += total;
      st.train_ce += br.ce;
      st.train_sd += br.sd;
      ++steps;
    }
    if (steps) {
      st.train_loss /= static_cast<double>(steps);
      st.train_ce /= static_cast<double>(steps);
      st.train_sd /= static_cast<double>(steps);
    }
    last_good = epoch;
    if (!val_batches.empty()) {
      const auto val = evaluate(model, val_batches);
      st.val_accuracy = val.accuracy;
      st.val_loss = val.loss;
    }
    if (st.val_accuracy > best_acc || (st.val_accuracy == best_acc && st.val_loss < best_loss)) {
      best_acc = st.val_accuracy;
      best_loss = st.val_loss;
      result.model.copy_state_from(model);
      result.best_epoch = epoch;
      st.improved = true;
    }
    result.history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return result;
}

// ---- ablation ---------------------------------------------------------------

std::string arm_name(Arm arm) {
  switch (arm) {
    case Arm::baseline: return "baseline";
    case Arm::sd: return "+SD";
    case Arm::sd_mdm: return "+SD+MDM";
    case Arm::sd_mdm_tent: return "+SD+MDM+Tent";
  }
  return "?";
}

ExperimentConfig arm_config(const ExperimentConfig& base, Arm arm) {
  ExperimentConfig c = base;
  c.mdm_enabled = arm == Arm::sd_mdm || arm == Arm::sd_mdm_tent;
  c.sd.enabled = arm != Arm::baseline;
  return c;
}

namespace {

std::size_t mdm_parameter_count(const Model<float>& m) {
  std::size_t n = 0;
  for (const auto& p : m.parameters())
    if (p.name.rfind("mdm.", 0) == 0) n += p.tensor.numel();
  return n;
}

}  // namespace

AblationResult run_ablation(const ExperimentConfig& config, std::size_t jobs, const RunCallback& on_run,
                            bool keep_models) {
  config.validate();
  const auto split_data = load_split(config);
  const auto clean = clean_stream(config, split_data);
  const auto shifted = shifted_stream(clean, config.shift);

  const std::size_t n_seeds = config.seeds.size();
  std::vector<ArmRun> runs(4 * n_seeds);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t s = 0; s < n_seeds; ++s) {
      runs[a * n_seeds + s].arm = kArms[a];
      runs[a * n_seeds + s].seed = config.seeds[s];
    }

  std::mutex report_mutex;
  auto report = [&](const ArmRun& r) {
    if (!on_run) return;
    std::lock_guard lock(report_mutex);
    on_run(r);
  };

  // One job per trained model; the +SD+MDM job also produces the Tent arm.
  auto job = [&](std::size_t a, std::size_t s) {
    ArmRun& run = runs[a * n_seeds + s];
    ArmRun* tent = kArms[a] == Arm::sd_mdm ? &runs[3 * n_seeds + s] : nullptr;
    const auto t0 = Clock::now();
    try {
      const auto cfg = arm_config(config, run.arm);
      auto trained = train_model(cfg, split_data, run.seed);
      auto& m = trained.model;
      run.clean_accuracy = evaluate(m, split_data.test).accuracy;
      run.train_accuracy = evaluate(m, split_data.train).accuracy;
      run.mdm_parameters = mdm_parameter_count(m);
      run.sd_heads = m.sd_heads.size();
      run.stream_accuracy = evaluate(m, shifted).accuracy;
      run.frozen_accuracy = run.stream_accuracy;
      run.wall_seconds = seconds_since(t0);
      if (tent) {
        const auto t1 = Clock::now();
        tent->clean_accuracy = run.clean_accuracy;
        tent->train_accuracy = run.train_accuracy;
        tent->mdm_parameters = run.mdm_parameters;
        tent->sd_heads = run.sd_heads;
        auto cmp = compare_adaptation(m, shifted, config.tent.options);
        tent->frozen_accuracy = cmp.frozen.accuracy;
        tent->stream_accuracy = cmp.adapted_accuracy;
        tent->entropy_trace = cmp.adapted.entropy_trace();
        auto id = compare_adaptation(m, clean, config.tent.options);
        tent->identity_frozen_accuracy = id.frozen.accuracy;
        tent->identity_adapted_accuracy = id.adapted_accuracy;
        run.identity_frozen_accuracy = id.frozen.accuracy;
        tent->wall_seconds = seconds_since(t1);
      }
      if (keep_models) {
        run.model = std::make_shared<const Model<float>>(std::move(m));
        if (tent) tent->model = run.model;
      }
    } catch (const std::exception& e) {
      run.ok = false;
      run.error = e.what();
      run.wall_seconds = seconds_since(t0);
      if (tent) {
        tent->ok = false;
        tent->error = std::string("trained model unavailable: ") + e.what();
      }
      log_warn(arm_name(run.arm) + " seed " + std::to_string(run.seed) + " failed: " + e.what());
    }
    report(run);
    if (tent) report(*tent);
  };

  std::vector<std::pair<std::size_t, std::size_t>> work;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t s = 0; s < n_seeds; ++s) work.emplace_back(a, s);
  // Longest jobs first: the MDM arm also adapts.
  std::stable_sort(work.begin(), work.end(), [](auto x, auto y) { return x.first > y.first; });

  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, work.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) job(work[i].first, work[i].second);
  };
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  AblationResult result;
  result.runs = std::move(runs);
  result.config_hash = config.hash();
  for (std::size_t a = 0; a < 4; ++a) {
    ArmSummary sum;
    sum.arm = kArms[a];
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& r = result.runs[a * n_seeds + s];
      if (r.ok)
        sum.accuracies.push_back(r.stream_accuracy);
      else
        ++sum.failed;
    }
    sum.stats = mean_std(sum.accuracies);
    result.summary.push_back(std::move(sum));
  }
  return result;
}

std::string format_ablation_table(const AblationResult& result) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %16s %6s %7s\n", "arm", "accuracy (%)", "seeds", "failed");
  os << line;
  for (const auto& s : result.summary) {
    std::snprintf(line, sizeof line, "%-14s %16s %6zu %7zu\n", arm_name(s.arm).c_str(),
                  format_percent(s.stats).c_str(), s.accuracies.size(), s.failed);
    os << line;
  }
  return os.str();
}

// ---- gradient check ---------------------------------------------------------

ModelConfig gradcheck_config() {
  ModelConfig c;
  c.channels = 2;
  c.time_len = 16;
  c.patch_len = 4;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.n_classes = 3;
  c.ff_hidden = 16;
  c.dropout = 0.0;
  c.mdm = MdmConfig{3, 2, 2};
  c.sd_enabled = true;
  return c;
}

namespace {

constexpr double kRelFloor = 1e-6;

void randomize(ParamList<double>& params, Rng& rng) {
  for (auto& p : params) {
    auto w = p.tensor.data();
    switch (p.role) {
      case ParamRole::norm_gamma:
        for (auto& v : w) v = 1.0 + rng.uniform(-0.5, 0.5);
        break;
      case ParamRole::weight: {
        const double s = 1.0 / std::sqrt(static_cast<double>(p.tensor.dim(p.tensor.rank() - 1)));
        for (auto& v : w) v = rng.uniform(-s, s);
        break;
      }
      default:
        for (auto& v : w) v = rng.uniform(-0.3, 0.3);
    }
  }
}

template <typename LossFn>
GradcheckReport finite_difference(ParamList<double>& params, LossFn&& loss_fn, double tolerance, double step) {
  const auto t0 = Clock::now();
  auto& tape = GradTape<double>::current();
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.clear_grad();
  }
  tape.clear();
  backward(loss_fn());

  GradcheckReport rep;
  NoGradGuard no_grad;
  for (auto& p : params) {
    std::vector<double> analytic(p.tensor.numel(), 0.0);
    if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());
    auto w = p.tensor.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + step;
      const double lp = loss_fn().item();
      w[i] = orig - step;
      const double lm = loss_fn().item();
      w[i] = orig;
      GradcheckEntry e{p.name, i, analytic[i], (lp - lm) / (2.0 * step), 0.0};
      e.rel_error = std::abs(e.analytic - e.numeric) /
                    std::max({std::abs(e.analytic), std::abs(e.numeric), kRelFloor});
      ++rep.checked;
      if (e.rel_error > rep.max_rel_error || rep.checked == 1) {
        rep.max_rel_error = std::max(rep.max_rel_error, e.rel_error);
        rep.worst = e;
      }
      if (!(e.rel_error < tolerance)) rep.offenders.push_back(e);
    }
    p.tensor.clear_grad();
  }
  tape.clear();
  rep.seconds = seconds_since(t0);
  return rep;
}

Tensor<double> random_tensor(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace

GradcheckReport gradcheck_model(const ModelConfig& config, std::uint64_t seed, double tolerance, double step) {
  Model<double> model(config, seed);
  auto params = model.parameters();
  Rng rng(derive_seed(seed, 0x6C));
  randomize(params, rng);
  const std::size_t batch = 4;
  const auto x = random_tensor({batch, config.channels, config.time_len}, rng);
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % config.n_classes);

  // The distillation teacher is a stop-gradient; differences must see it as a constant too.
  Tensor<double> teacher;
  {
    NoGradGuard no_grad;
    teacher = model.forward(x, Mode::train).logits;
  }
  auto loss_fn = [&] {
    auto out = model.forward(x, Mode::train, config.sd_enabled);
    auto loss = add(cross_entropy(out.logits, std::span<const int>(labels)), prediction_entropy(out.logits));
    if (config.sd_enabled) {
      ForwardResult<double> fixed{teacher, {}, out.aux_logits};
      loss = add(loss, scale(self_distillation_loss(fixed, 2.0), 0.5));
    }
    return loss;
  };
  return finite_difference(params, loss_fn, tolerance, step);
}

GradcheckReport gradcheck_mdm(const MdmConfig& config, std::size_t channels, std::size_t time_len,
                              std::uint64_t seed, double tolerance, double step) {
  Rng rng(derive_seed(seed, 0x6D));
  Mdm<double> mdm(config, time_len, rng);
  ParamList<double> params;
  mdm.collect(params, "mdm");
  randomize(params, rng);
  const auto x = random_tensor({3, channels, time_len}, rng);
  const auto proj = random_tensor({3, channels, time_len}, rng);
  auto loss_fn = [&] { return sum(mul(mdm.forward(x), proj)); };
  return finite_difference(params, loss_fn, tolerance, step);
}

}  // namespace ntta
