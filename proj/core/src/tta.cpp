#include "ntta/tta.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "ntta/errors.hpp"
#include "ntta/log.hpp"
#include "ntta/objectives.hpp"

namespace ntta {

std::string to_string(AdaptMode mode) { return mode == AdaptMode::online ? "online" : "episodic"; }

AdaptMode parse_adapt_mode(const std::string& s) {
  if (s == "online") return AdaptMode::online;
  if (s == "episodic") return AdaptMode::episodic;
  throw ConfigError("unknown adaptation mode '" + s + "' (expected online or episodic)");
}

std::vector<double> StreamReport::entropy_trace() const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.entropy);
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto row = logits.data().subspan(i * k, k);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

template <typename T>
AdaptState<T> collect_adaptable(Model<T>& model, const TentOptions& options) {
  if (options.lr <= 0.0) throw ConfigError("tent: lr must be positive");
  if (options.steps_per_batch == 0) throw ConfigError("tent: steps_per_batch must be >= 1");
  const auto norms = model.norm_layers();
  if (norms.empty()) throw ConfigError("tent: model has no normalization layers to adapt");

  std::unordered_set<const void*> affine;
  for (const auto* n : norms) {
    affine.insert(n->gamma.id());
    affine.insert(n->beta.id());
  }
  AdaptState<T> state;
  state.options = options;
  for (auto& p : model.parameters()) {
    const bool adapt = affine.count(p.tensor.id()) > 0;
    p.tensor.set_requires_grad(adapt);
    p.tensor.clear_grad();
    (adapt ? state.adaptable : state.frozen).push_back(p);
  }
  if (state.adaptable.size() != 2 * norms.size())
    throw ConfigError("tent: normalization parameters missing from the model's parameter list");
  for (const auto& p : state.adaptable) {
    state.snapshot.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    state.velocity.emplace_back(p.tensor.numel(), T(0));
  }
  model.set_adapt_mode(true);
  return state;
}

template <typename T>
void reset(AdaptState<T>& state, Model<T>&) {
  for (std::size_t i = 0; i < state.adaptable.size(); ++i) {
    auto dst = state.adaptable[i].tensor.data();
    std::copy(state.snapshot[i].begin(), state.snapshot[i].end(), dst.begin());
    std::fill(state.velocity[i].begin(), state.velocity[i].end(), T(0));
    state.adaptable[i].tensor.clear_grad();
  }
}

template <typename T>
double drift_norm(const AdaptState<T>& state) {
  double acc = 0.0;
  for (std::size_t i = 0; i < state.adaptable.size(); ++i) {
    const auto cur = state.adaptable[i].tensor.data();
    for (std::size_t j = 0; j < cur.size(); ++j) {
      const double d = static_cast<double>(cur[j]) - static_cast<double>(state.snapshot[i][j]);
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

template <typename T>
StreamRow adapt_batch(AdaptState<T>& state, Model<T>& model, const Tensor<T>& x) {
  if (state.options.mode == AdaptMode::episodic) reset(state, model);
  auto& tape = GradTape<T>::current();
  StreamRow row;
  for (std::size_t step = 0; step < state.options.steps_per_batch; ++step) {
    tape.clear();
    const auto out = model.forward(x, Mode::adapt);
    const auto entropy = prediction_entropy(out.logits);
    const double h = static_cast<double>(entropy.item());
    if (step == 0) {
      row.entropy = h;
      row.predictions = argmax_rows(out.logits);
    }
    if (!std::isfinite(h)) {
      row.flagged = true;
      tape.clear();
      break;
    }
    backward(entropy);
    bool finite = true;
    for (const auto& p : state.adaptable)
      for (auto g : p.tensor.grad())
        if (!std::isfinite(static_cast<double>(g))) finite = false;
    if (!finite) {
      row.flagged = true;
      for (auto& p : state.adaptable) p.tensor.clear_grad();
      break;
    }
    const T lr = static_cast<T>(state.options.lr);
    const T mom = static_cast<T>(state.options.momentum);
    for (std::size_t i = 0; i < state.adaptable.size(); ++i) {
      auto& p = state.adaptable[i].tensor;
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto v = std::span<T>(state.velocity[i]);
      auto w = p.data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = mom * v[j] + g[j];
        w[j] -= lr * v[j];
      }
      p.clear_grad();
    }
  }
  if (row.flagged) log_warn("tent: non-finite entropy or gradient, update skipped");
  row.drift_norm = drift_norm(state);
  return row;
}

template <typename T>
StreamReport run_stream(AdaptState<T>& state, Model<T>& model, std::span<const Tensor<T>> batches,
                        const std::vector<std::vector<int>>* scoring_labels) {
  if (batches.empty()) throw ConfigError("run_stream: empty stream");
  if (scoring_labels && scoring_labels->size() != batches.size())
    throw ConfigError("run_stream: scoring labels do not match the stream length");
  StreamReport report;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    auto row = adapt_batch(state, model, batches[i]);
    row.batch = i;
    if (scoring_labels) {
      const auto& labels = (*scoring_labels)[i];
      std::size_t hit = 0;
      for (std::size_t j = 0; j < labels.size() && j < row.predictions.size(); ++j)
        hit += row.predictions[j] == labels[j];
      row.accuracy = labels.empty() ? 0.0 : static_cast<double>(hit) / labels.size();
      report.correct += hit;
      report.scored += labels.size();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

#define NTTA_INSTANTIATE_TTA(T)                                                                          \
  template std::vector<int> argmax_rows(const Tensor<T>&);                                              \
  template AdaptState<T> collect_adaptable(Model<T>&, const TentOptions&);                              \
  template StreamRow adapt_batch(AdaptState<T>&, Model<T>&, const Tensor<T>&);                          \
  template StreamReport run_stream(AdaptState<T>&, Model<T>&, std::span<const Tensor<T>>,              \
                                   const std::vector<std::vector<int>>*);                               \
  template void reset(AdaptState<T>&, Model<T>&);                                                       \
  template double drift_norm(const AdaptState<T>&);

NTTA_INSTANTIATE_TTA(float)
NTTA_INSTANTIATE_TTA(double)

#undef NTTA_INSTANTIATE_TTA

}  // namespace ntta
