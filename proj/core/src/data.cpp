#include "ntta/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "binio.hpp"
#include "ntta/errors.hpp"
#include "ntta/rng.hpp"

namespace ntta {

namespace {
constexpr std::uint64_t kTemplateStream = 0x7E3A11;
constexpr std::uint64_t kTrialStream = 0x7121A1;
constexpr std::uint16_t kTrialVersion = 1;
constexpr std::size_t kSlowChoices = 4;  // envelope cycles 1..4
constexpr std::size_t kFastBase = 6;     // carrier cycles start here
constexpr double kLevelStep = 1.6;
constexpr double kLevelJitter = 0.1;         // per-trial amplitude factor in [1 - j, 1 + j]
constexpr double kEnvCarrierPower = 0.1875;  // mean of (0.5 + 0.5 sin)^2 sin^2 over whole cycles

std::size_t rhythm_count(const SynthSpec& spec) { return (spec.n_classes + spec.levels - 1) / spec.levels; }
}  // namespace

std::string to_string(Normalization n) { return n == Normalization::trial ? "trial" : "population"; }

Normalization parse_normalization(const std::string& s) {
  if (s == "population") return Normalization::population;
  if (s == "trial") return Normalization::trial;
  throw ConfigError("unknown normalization '" + s + "' (expected population or trial)");
}

void SynthSpec::validate() const {
  if (n_classes == 0) throw ConfigError("synth: no class templates (n_classes == 0)");
  if (channels == 0 || time_len < 2) throw ConfigError("synth: need channels >= 1 and time_len >= 2");
  if (noise_sd < 0.0) throw ConfigError("synth: noise_sd must be >= 0");
  if (levels == 0) throw ConfigError("synth: levels must be >= 1");
  const std::size_t fast_choices = rhythm_count(*this) / kSlowChoices + 8;
  if (2 * (kFastBase + fast_choices) >= time_len)
    throw ConfigError("synth: time_len " + std::to_string(time_len) + " too short to resolve " +
                      std::to_string(n_classes) + " distinct carriers");
}

std::vector<ClassTemplate> class_templates(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, kTemplateStream));
  const std::size_t rhythms = rhythm_count(spec);
  const std::size_t fast_choices = rhythms / kSlowChoices + 8;
  std::vector<std::pair<std::size_t, std::size_t>> grid;
  for (std::size_t s = 1; s <= kSlowChoices; ++s)
    for (std::size_t f = 0; f < fast_choices; ++f) grid.emplace_back(s, kFastBase + f);
  rng.shuffle(grid.begin(), grid.end());

  std::vector<ClassTemplate> shapes(rhythms);
  for (std::size_t r = 0; r < rhythms; ++r) {
    auto& t = shapes[r];
    t.slow_cycles = static_cast<double>(grid[r].first);
    t.fast_cycles = static_cast<double>(grid[r].second);
    t.slow_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    t.fast_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    t.channel_weights.resize(spec.channels);
    for (auto& w : t.channel_weights) w = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
  }
  std::vector<ClassTemplate> out(spec.n_classes);
  for (std::size_t k = 0; k < spec.n_classes; ++k) {
    out[k] = shapes[k / spec.levels];
    out[k].level = std::pow(kLevelStep, static_cast<double>(k % spec.levels));
  }
  return out;
}

TrialDataset generate(const SynthSpec& spec, std::size_t n_trials, std::size_t first_index) {
  const auto templates = class_templates(spec);
  if (n_trials < spec.n_classes)
    throw ConfigError("synth: need at least one trial per class (" + std::to_string(spec.n_classes) + ")");
  TrialDataset d;
  d.channels = spec.channels;
  d.time_len = spec.time_len;
  d.n_classes = spec.n_classes;
  d.signals.resize(n_trials * d.trial_size());
  d.labels.resize(n_trials);
  d.trial_ids.resize(n_trials);

  // Fixed per-channel scale: population RMS over classes, so amplitude stays informative.
  std::vector<double> inv_scale(spec.channels);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    double power = 0.0;
    for (const auto& t : templates) power += t.level * t.level * t.channel_weights[c] * t.channel_weights[c];
    power = kEnvCarrierPower * power / static_cast<double>(templates.size()) + spec.noise_sd * spec.noise_sd;
    inv_scale[c] = 1.0 / std::sqrt(power);
  }

  const double tl = static_cast<double>(spec.time_len);
  std::vector<double> channel(spec.time_len);
  for (std::size_t n = 0; n < n_trials; ++n) {
    const std::size_t index = first_index + n;
    const std::size_t k = index % spec.n_classes;
    const auto& tpl = templates[k];
    d.labels[n] = static_cast<int>(k);
    d.trial_ids[n] = static_cast<std::uint32_t>(index);
    Rng rng(derive_seed(spec.seed ^ kTrialStream, index));
    const double amp = tpl.level * rng.uniform(1.0 - kLevelJitter, 1.0 + kLevelJitter);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      float* dst = d.signals.data() + n * d.trial_size() + c * spec.time_len;
      for (std::size_t t = 0; t < spec.time_len; ++t) {
        const double phase = 2.0 * std::numbers::pi * static_cast<double>(t) / tl;
        const double env = 0.5 + 0.5 * std::sin(tpl.slow_cycles * phase + tpl.slow_phase);
        const double carrier = std::sin(tpl.fast_cycles * phase + tpl.fast_phase);
        channel[t] = amp * tpl.channel_weights[c] * env * carrier;
        if (spec.noise_sd > 0.0) channel[t] += spec.noise_sd * rng.normal();
      }
      double shift = 0.0, scale = inv_scale[c];
      if (spec.normalization == Normalization::trial) {
        double mean = 0.0;
        for (auto v : channel) mean += v;
        mean /= tl;
        double var = 0.0;
        for (auto v : channel) var += (v - mean) * (v - mean);
        var /= tl;
        shift = mean;
        scale = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
      }
      for (std::size_t t = 0; t < spec.time_len; ++t) dst[t] = static_cast<float>((channel[t] - shift) * scale);
    }
  }
  return d;
}

TrialBatch TrialDataset::batch(std::span<const std::size_t> indices) const {
  TrialBatch b;
  b.signals = Tensor<float>({indices.size(), channels, time_len});
  auto dst = b.signals.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = trial(indices[i]);
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * trial_size()));
    b.labels.push_back(labels[indices[i]]);
    b.trial_ids.push_back(trial_ids[indices[i]]);
  }
  return b;
}

TrialBatch TrialDataset::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return batch(idx);
}

TrialDataset TrialDataset::subset(std::span<const std::size_t> indices) const {
  TrialDataset d;
  d.channels = channels;
  d.time_len = time_len;
  d.n_classes = n_classes;
  for (auto i : indices) {
    const auto src = trial(i);
    d.signals.insert(d.signals.end(), src.begin(), src.end());
    d.labels.push_back(labels[i]);
    d.trial_ids.push_back(trial_ids[i]);
  }
  return d;
}

std::vector<TrialBatch> TrialDataset::batches(std::size_t batch_size) const {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<TrialBatch> out;
  for (std::size_t start = 0; start < size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, size() - start));
    std::iota(idx.begin(), idx.end(), start);
    out.push_back(batch(idx));
  }
  return out;
}

std::string to_string(DriftSchedule s) {
  switch (s) {
    case DriftSchedule::none: return "none";
    case DriftSchedule::abrupt: return "abrupt";
    case DriftSchedule::ramp: return "ramp";
  }
  return "none";
}

DriftSchedule parse_drift_schedule(const std::string& s) {
  if (s == "none") return DriftSchedule::none;
  if (s == "abrupt") return DriftSchedule::abrupt;
  if (s == "ramp") return DriftSchedule::ramp;
  throw ConfigError("unknown drift schedule '" + s + "' (expected none, abrupt or ramp)");
}

ShiftSpec ShiftSpec::uniform(std::size_t channels, double gain, double offset, double noise_sd) {
  ShiftSpec s;
  s.gain.assign(channels, gain);
  s.offset.assign(channels, offset);
  s.noise_sd = noise_sd;
  return s;
}

double ShiftSpec::factor(std::size_t position) const {
  switch (schedule) {
    case DriftSchedule::none: return 1.0;
    case DriftSchedule::abrupt: return position >= at_batch ? 1.0 : 0.0;
    case DriftSchedule::ramp: {
      if (ramp_batches <= 1) return 1.0;
      return std::min(1.0, static_cast<double>(position) / static_cast<double>(ramp_batches - 1));
    }
  }
  return 1.0;
}

bool ShiftSpec::is_identity() const {
  const bool unit_gain = std::all_of(gain.begin(), gain.end(), [](double g) { return g == 1.0; });
  const bool zero_offset = std::all_of(offset.begin(), offset.end(), [](double o) { return o == 0.0; });
  return unit_gain && zero_offset && noise_sd == 0.0;
}

TrialBatch apply_shift(const TrialBatch& batch, const ShiftSpec& shift, std::size_t position) {
  TrialBatch out{batch.signals.clone(), batch.labels, batch.trial_ids};
  const double f = shift.factor(position);
  if (f == 0.0 || shift.is_identity()) return out;
  const std::size_t b = batch.signals.dim(0), c = batch.signals.dim(1), t = batch.signals.dim(2);
  if ((!shift.gain.empty() && shift.gain.size() != c) || (!shift.offset.empty() && shift.offset.size() != c))
    throw ShapeError("apply_shift: per-channel gain/offset do not match " + std::to_string(c) + " channels");
  auto data = out.signals.data();
  for (std::size_t i = 0; i < b; ++i) {
    Rng rng(derive_seed(derive_seed(shift.seed, batch.trial_ids[i]), position));
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double g = 1.0 + f * ((shift.gain.empty() ? 1.0 : shift.gain[ch]) - 1.0);
      const double o = f * (shift.offset.empty() ? 0.0 : shift.offset[ch]);
      const double sd = f * shift.noise_sd;
      float* row = data.data() + (i * c + ch) * t;
      for (std::size_t k = 0; k < t; ++k) {
        double v = g * static_cast<double>(row[k]) + o;
        if (sd > 0.0) v += sd * rng.normal();
        row[k] = static_cast<float>(v);
      }
    }
  }
  return out;
}

DataSplit split(const TrialDataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions)
    if (f < 0.0) throw ConfigError("split: negative fraction");
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9)
    throw ConfigError("split: fractions sum to " + std::to_string(total) + ", expected 1");

  // Shuffle each class, then interleave classes by relative position so every
  // prefix of the ordering is stratified to within one trial per class.
  Rng rng(derive_seed(seed, 0x5B117));
  std::vector<std::vector<std::size_t>> by_class(std::max<std::size_t>(data.n_classes, 1));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto k = static_cast<std::size_t>(data.labels[i]);
    if (k >= by_class.size()) by_class.resize(k + 1);
    by_class[k].push_back(i);
  }
  struct Keyed {
    double key;
    std::size_t cls, index;
  };
  std::vector<Keyed> order;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& members = by_class[k];
    rng.shuffle(members.begin(), members.end());
    for (std::size_t j = 0; j < members.size(); ++j)
      order.push_back({(static_cast<double>(j) + 0.5) / static_cast<double>(members.size()), k, members[j]});
  }
  std::sort(order.begin(), order.end(),
            [](const Keyed& a, const Keyed& b) { return a.key != b.key ? a.key < b.key : a.cls < b.cls; });

  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));
  std::vector<std::size_t> train, val, test;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_train ? train : i < n_train + n_val ? val : test).push_back(order[i].index);
  for (auto* part : {&train, &val, &test}) std::sort(part->begin(), part->end());
  return DataSplit{data.subset(train), data.subset(val), data.subset(test)};
}

std::vector<std::uint8_t> encode_trials(const TrialDataset& data) {
  detail::ByteWriter w;
  w.text("NTRL");
  w.u16(kTrialVersion);
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u32(static_cast<std::uint32_t>(data.channels));
  w.u32(static_cast<std::uint32_t>(data.time_len));
  w.u32(static_cast<std::uint32_t>(data.n_classes));
  for (std::size_t i = 0; i < data.size(); ++i) {
    w.u32(data.trial_ids[i]);
    w.u16(static_cast<std::uint16_t>(data.labels[i]));
    for (float v : data.trial(i)) w.f32(v);
  }
  return std::move(w.buffer());
}

TrialDataset decode_trials(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.text(4, "magic") != "NTRL") throw FormatError("bad magic, expected \"NTRL\"", 0);
  const auto version = r.u16("version");
  if (version != kTrialVersion)
    throw FormatError("unsupported trial file version " + std::to_string(version), 4);
  const std::size_t n = r.u32("n_trials");
  TrialDataset d;
  d.channels = r.u32("channels");
  d.time_len = r.u32("time_len");
  d.n_classes = r.u32("n_classes");
  const std::size_t header_end = r.offset();
  if (d.channels == 0 || d.time_len == 0 || d.n_classes == 0)
    throw FormatError("header declares a zero extent", header_end);
  const std::size_t record = 4 + 2 + 4 * d.trial_size();
  if (r.remaining() != n * record)
    throw FormatError("payload of " + std::to_string(r.remaining()) + " bytes does not match " +
                          std::to_string(n) + " records of " + std::to_string(record) + " bytes",
                      header_end);
  d.signals.reserve(n * d.trial_size());
  for (std::size_t i = 0; i < n; ++i) {
    d.trial_ids.push_back(r.u32("trial_id"));
    const std::size_t label_at = r.offset();
    const auto label = r.u16("label");
    if (label >= d.n_classes) throw FormatError("label " + std::to_string(label) + " out of range", label_at);
    d.labels.push_back(label);
    for (std::size_t j = 0; j < d.trial_size(); ++j) d.signals.push_back(r.f32("sample"));
  }
  return d;
}

void write_trials(const std::filesystem::path& path, const TrialDataset& data) {
  detail::write_file(path, encode_trials(data));
}

TrialDataset read_trials(const std::filesystem::path& path) { return decode_trials(detail::read_file(path)); }

}  // namespace ntta
