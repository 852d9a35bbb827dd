#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "ntta/data.hpp"
#include "ntta/errors.hpp"

using namespace ntta;

namespace {

SynthSpec desk_spec() { return SynthSpec{}; }

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ntta_test_" + name);
}

TrialBatch small_batch() {
  auto data = generate(desk_spec(), 10);
  return data.all();
}

}  // namespace

TEST(Generate, SameSeedIsBitwiseIdentical) {
  auto a = generate(desk_spec(), 40);
  auto b = generate(desk_spec(), 40);
  ASSERT_EQ(a.signals.size(), b.signals.size());
  EXPECT_EQ(std::memcmp(a.signals.data(), b.signals.data(), a.signals.size() * sizeof(float)), 0);
  EXPECT_EQ(a.labels, b.labels);
  auto other = desk_spec();
  other.seed = 1;
  auto c = generate(other, 40);
  EXPECT_NE(std::memcmp(a.signals.data(), c.signals.data(), a.signals.size() * sizeof(float)), 0);
}

TEST(Generate, TrialsDependOnlyOnIndex) {
  auto whole = generate(desk_spec(), 30);
  auto tail = generate(desk_spec(), 10, 20);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(tail.trial_ids[i], 20 + i);
    EXPECT_EQ(tail.labels[i], whole.labels[20 + i]);
    EXPECT_EQ(std::memcmp(tail.trial(i).data(), whole.trial(20 + i).data(), whole.trial_size() * sizeof(float)), 0);
  }
}

TEST(Generate, BalancedLabels) {
  auto d = generate(desk_spec(), 105);
  std::vector<std::size_t> counts(10, 0);
  for (int l : d.labels) ++counts[static_cast<std::size_t>(l)];
  for (auto c : counts) EXPECT_TRUE(c == 10 || c == 11);
}

TEST(Generate, TrialNormalizationZScoresEveryChannel) {
  auto spec = desk_spec();
  spec.normalization = Normalization::trial;
  auto d = generate(spec, 50);
  for (std::size_t n = 0; n < d.size(); ++n)
    for (std::size_t c = 0; c < d.channels; ++c) {
      const auto x = d.trial(n).subspan(c * d.time_len, d.time_len);
      double m = 0, v = 0;
      for (float s : x) m += s;
      m /= static_cast<double>(x.size());
      for (float s : x) v += (s - m) * (s - m);
      v /= static_cast<double>(x.size());
      EXPECT_LT(std::abs(m), 1e-5);
      EXPECT_NEAR(v, 1.0, 1e-3);
    }
}

TEST(Generate, NoiselessTrialsOfAClassMatchAfterZScore) {
  auto spec = desk_spec();
  spec.noise_sd = 0.0;
  spec.normalization = Normalization::trial;
  auto d = generate(spec, 30);
  for (std::size_t n = 10; n < 30; ++n)
    for (std::size_t j = 0; j < d.trial_size(); ++j) ASSERT_NEAR(d.trial(n)[j], d.trial(n % 10)[j], 1e-5);
}

TEST(Generate, NoiselessPopulationTrialsDifferOnlyInAmplitude) {
  auto spec = desk_spec();
  spec.noise_sd = 0.0;
  auto d = generate(spec, 20);
  for (std::size_t k = 0; k < 10; ++k) {
    const auto a = d.trial(k), b = d.trial(k + 10);
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      ab += a[j] * b[j];
      aa += a[j] * a[j];
      bb += b[j] * b[j];
    }
    EXPECT_NEAR(ab / std::sqrt(aa * bb), 1.0, 1e-6);
    const double ratio = std::sqrt(bb / aa);
    EXPECT_GT(ratio, 0.9 / 1.1 - 1e-6);
    EXPECT_LT(ratio, 1.1 / 0.9 + 1e-6);
  }
}

TEST(Generate, PopulationScaleKeepsAmplitudeLevels) {
  auto d = generate(desk_spec(), 400);
  const auto templates = class_templates(desk_spec());
  std::vector<double> power(10, 0.0);
  for (std::size_t n = 0; n < d.size(); ++n)
    for (float s : d.trial(n)) power[static_cast<std::size_t>(d.labels[n])] += s * s;
  // Class 2r and 2r+1 share rhythm r; the second plays it louder.
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_LT(templates[2 * r].level, templates[2 * r + 1].level);
    EXPECT_LT(power[2 * r], power[2 * r + 1]);
  }
  double total = 0;
  for (float s : d.signals) total += s * s;
  EXPECT_NEAR(total / static_cast<double>(d.signals.size()), 1.0, 0.15);
}

TEST(Generate, RejectsDegenerateSpecs) {
  auto spec = desk_spec();
  spec.n_classes = 0;
  EXPECT_THROW(generate(spec, 10), ConfigError);
  EXPECT_THROW(generate(desk_spec(), 5), ConfigError);
  spec = desk_spec();
  spec.levels = 0;
  EXPECT_THROW(spec.validate(), ConfigError);
  EXPECT_THROW(parse_normalization("none"), ConfigError);
  EXPECT_EQ(parse_normalization(to_string(Normalization::trial)), Normalization::trial);
}

TEST(Generate, NearestClassMeanProbeLearnsTheTask) {
  auto train = generate(desk_spec(), 500);
  auto test = generate(desk_spec(), 200, 500);
  const std::size_t k = 10, n = train.trial_size();
  std::vector<double> centroid(k * n, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto c = static_cast<std::size_t>(train.labels[i]);
    ++count[c];
    for (std::size_t j = 0; j < n; ++j) centroid[c * n + j] += train.trial(i)[j];
  }
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < n; ++j) centroid[c * n + j] /= static_cast<double>(count[c]);
  // argmin ||x - mu_c||^2 is a single linear layer: w_c = mu_c, b_c = -||mu_c||^2 / 2.
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    double best = -1e300;
    int arg = -1;
    for (std::size_t c = 0; c < k; ++c) {
      double score = 0, norm = 0;
      for (std::size_t j = 0; j < n; ++j) {
        score += centroid[c * n + j] * test.trial(i)[j];
        norm += centroid[c * n + j] * centroid[c * n + j];
      }
      score -= 0.5 * norm;
      if (score > best) {
        best = score;
        arg = static_cast<int>(c);
      }
    }
    correct += arg == test.labels[i];
  }
  EXPECT_GT(static_cast<double>(correct) / test.size(), 5.0 / k);
}

TEST(Shift, IdentityLeavesBatchBitwise) {
  auto b = small_batch();
  auto s = apply_shift(b, ShiftSpec::identity(), 3);
  EXPECT_EQ(std::memcmp(b.signals.data().data(), s.signals.data().data(), b.signals.numel() * sizeof(float)), 0);
  EXPECT_NE(b.signals.id(), s.signals.id());
}

TEST(Shift, GainTwoDoublesExactly) {
  auto b = small_batch();
  auto s = apply_shift(b, ShiftSpec::uniform(8, 2.0, 0.0, 0.0), 0);
  for (std::size_t i = 0; i < b.signals.numel(); ++i) ASSERT_EQ(s.signals[i], 2.0f * b.signals[i]);
  EXPECT_EQ(s.labels, b.labels);
  EXPECT_EQ(s.trial_ids, b.trial_ids);
}

TEST(Shift, OffsetAndNoise) {
  auto b = small_batch();
  auto s = apply_shift(b, ShiftSpec::uniform(8, 1.0, 0.5, 0.0), 0);
  for (std::size_t i = 0; i < b.signals.numel(); ++i) ASSERT_NEAR(s.signals[i], b.signals[i] + 0.5f, 1e-6);
  auto noisy = ShiftSpec::uniform(8, 1.0, 0.0, 0.5);
  auto n1 = apply_shift(b, noisy, 0);
  auto n2 = apply_shift(b, noisy, 0);
  auto n3 = apply_shift(b, noisy, 1);
  double var = 0;
  for (std::size_t i = 0; i < b.signals.numel(); ++i) {
    ASSERT_EQ(n1.signals[i], n2.signals[i]);
    var += (n1.signals[i] - b.signals[i]) * (n1.signals[i] - b.signals[i]);
  }
  EXPECT_NEAR(var / static_cast<double>(b.signals.numel()), 0.25, 0.02);
  EXPECT_NE(n1.signals[0], n3.signals[0]);
}

TEST(Shift, AbruptSchedule) {
  auto shift = ShiftSpec::uniform(8, 2.0, 0.0, 0.0);
  shift.schedule = DriftSchedule::abrupt;
  shift.at_batch = 3;
  auto b = small_batch();
  for (std::size_t pos = 0; pos < 6; ++pos) {
    auto s = apply_shift(b, shift, pos);
    EXPECT_EQ(s.signals[7], pos < 3 ? b.signals[7] : 2.0f * b.signals[7]) << pos;
  }
}

TEST(Shift, RampSchedule) {
  ShiftSpec s = ShiftSpec::uniform(8, 2.0, 0.0, 0.0);
  s.schedule = DriftSchedule::ramp;
  s.ramp_batches = 5;
  EXPECT_EQ(s.factor(0), 0.0);
  EXPECT_EQ(s.factor(2), 0.5);
  EXPECT_EQ(s.factor(4), 1.0);
  EXPECT_EQ(s.factor(40), 1.0);
  EXPECT_THROW(parse_drift_schedule("sudden"), ConfigError);
  EXPECT_EQ(parse_drift_schedule(to_string(DriftSchedule::ramp)), DriftSchedule::ramp);
}

TEST(Shift, ChannelMismatchThrows) {
  EXPECT_THROW(apply_shift(small_batch(), ShiftSpec::uniform(3, 2.0, 0.0, 0.0), 0), ShapeError);
}

TEST(Split, SizesStratifiedDisjoint) {
  auto d = generate(desk_spec(), 1000);
  auto s = split(d, {0.8, 0.1, 0.1}, 7);
  EXPECT_EQ(s.train.size(), 800u);
  EXPECT_EQ(s.val.size(), 100u);
  EXPECT_EQ(s.test.size(), 100u);
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    std::vector<double> counts(10, 0);
    for (int l : part->labels) ++counts[static_cast<std::size_t>(l)];
    for (auto c : counts) EXPECT_LE(std::abs(c - static_cast<double>(part->size()) / 10.0), 1.0);
  }
  std::set<std::uint32_t> ids;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (auto id : part->trial_ids) EXPECT_TRUE(ids.insert(id).second) << id;
  EXPECT_EQ(ids.size(), 1000u);
}

TEST(Split, SeedDeterministic) {
  auto d = generate(desk_spec(), 200);
  auto a = split(d, {0.8, 0.1, 0.1}, 3);
  auto b = split(d, {0.8, 0.1, 0.1}, 3);
  auto c = split(d, {0.8, 0.1, 0.1}, 4);
  EXPECT_EQ(a.test.trial_ids, b.test.trial_ids);
  EXPECT_NE(a.test.trial_ids, c.test.trial_ids);
  EXPECT_THROW(split(d, {0.8, 0.1, 0.2}, 3), ConfigError);
}

TEST(TrialFile, RoundTripIsBitwise) {
  auto d = generate(desk_spec(), 25);
  const auto path = temp_path("roundtrip.ntrl");
  write_trials(path, d);
  auto r = read_trials(path);
  std::filesystem::remove(path);
  EXPECT_EQ(r.channels, d.channels);
  EXPECT_EQ(r.time_len, d.time_len);
  EXPECT_EQ(r.n_classes, d.n_classes);
  EXPECT_EQ(r.labels, d.labels);
  EXPECT_EQ(r.trial_ids, d.trial_ids);
  ASSERT_EQ(r.signals.size(), d.signals.size());
  EXPECT_EQ(std::memcmp(r.signals.data(), d.signals.data(), d.signals.size() * sizeof(float)), 0);
}

TEST(TrialFile, HeaderLayout) {
  auto d = generate(desk_spec(), 10);
  auto bytes = encode_trials(d);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "NTRL");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 10);
  EXPECT_EQ(bytes.size(), 4u + 2 + 16 + 10 * (4 + 2 + 4 * 8 * 128));
}

TEST(TrialFile, MalformedInputsAreFormatErrors) {
  auto bytes = encode_trials(generate(desk_spec(), 10));
  auto truncated = std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(decode_trials(truncated), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    decode_trials(bad_magic);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  auto bad_extent = bytes;
  bad_extent[14] = 9;  // T = 9
  EXPECT_THROW(decode_trials(bad_extent), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_trials(bad_version), FormatError);
  EXPECT_THROW(decode_trials(std::vector<std::uint8_t>{'N', 'T'}), FormatError);
  EXPECT_THROW(read_trials(temp_path("does_not_exist.ntrl")), std::exception);
}
