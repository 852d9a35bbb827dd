#include <gtest/gtest.h>

#include <set>

#include "ntta/config.hpp"
#include "ntta/errors.hpp"

using namespace ntta;

TEST(Config, DefaultsMatchDeskSetup) {
  ExperimentConfig c;
  EXPECT_EQ(c.model.channels, 8u);
  EXPECT_EQ(c.model.time_len, 128u);
  EXPECT_EQ(c.model.n_classes, 10u);
  EXPECT_EQ(c.model.n_layers, 8u);
  EXPECT_EQ(c.seeds.size(), 6u);
  EXPECT_EQ(c.train.epochs, 30u);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.train.weight_decay, 1e-2);
  EXPECT_DOUBLE_EQ(c.tent.options.lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.tent.options.momentum, 0.9);
  EXPECT_DOUBLE_EQ(c.data.noise_sd, 0.5);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, SerializeParseRoundTrip) {
  ExperimentConfig c;
  c.model.d_model = 32;
  c.mdm_enabled = false;
  c.sd.lambda = 0.25;
  c.tent.options.mode = AdaptMode::episodic;
  c.data.normalization = Normalization::trial;
  c.shift.gain = {1, 2, 3, 4, 5, 6, 7, 8};
  c.shift.schedule = DriftSchedule::ramp;
  c.seeds = {4, 9};
  const auto text = c.serialize();
  const auto back = ExperimentConfig::parse(text);
  EXPECT_EQ(back.serialize(), text);
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(back.model.d_model, 32u);
  EXPECT_FALSE(back.mdm_enabled);
  EXPECT_EQ(back.shift.gain, c.shift.gain);
  EXPECT_EQ(back.seeds, (std::vector<std::uint64_t>{4, 9}));
}

TEST(Config, EveryKeySerializedOnce) {
  const auto text = ExperimentConfig{}.serialize();
  std::set<std::string> keys(ExperimentConfig::keys().begin(), ExperimentConfig::keys().end());
  EXPECT_EQ(keys.size(), ExperimentConfig::keys().size());
  for (const auto& k : keys) EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
}

TEST(Config, CommentsBlankLinesAndBroadcast) {
  auto c = ExperimentConfig::parse("# header\n\nmodel.d_model = 16  # inline\nshift.gain = 2\n");
  EXPECT_EQ(c.model.d_model, 16u);
  EXPECT_EQ(c.shift.gain, std::vector<double>(8, 2.0));
  EXPECT_EQ(c.shift.offset, std::vector<double>(8, 0.0));
}

TEST(Config, RejectsUnknownDuplicateAndMalformed) {
  EXPECT_THROW(ExperimentConfig::parse("model.dropuot = 0.1\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("seeds = 1\nseeds = 2\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("model.d_model 16\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("model.d_model = sixteen\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("model.d_model = -4\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("sd.enabled = maybe\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("tent.mode = sometimes\n"), ConfigError);
}

TEST(Config, RejectsInconsistentValues) {
  EXPECT_THROW(ExperimentConfig::parse("data.split = 0.5,0.3,0.3\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("model.n_heads = 5\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("model.patch_len = 12\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("shift.gain = 1,2,3\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("train.batch_size = 1\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("tent.lr = 0\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("mdm.levels = 9\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("seeds = \n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("sd.enabled = true\nmodel.n_layers = 1\n"), ConfigError);
  EXPECT_NO_THROW(ExperimentConfig::parse("sd.enabled = false\nmodel.n_layers = 1\n"));
}

TEST(Config, ModelConfigAppliesSwitches) {
  auto c = ExperimentConfig::parse("mdm.enabled = false\nsd.enabled = false\n");
  auto m = c.model_config();
  EXPECT_FALSE(m.mdm.has_value());
  EXPECT_FALSE(m.sd_enabled);
  auto d = ExperimentConfig::parse("mdm.levels = 3\nmdm.rank = 8\n").model_config();
  ASSERT_TRUE(d.mdm.has_value());
  EXPECT_EQ(d.mdm->levels, 3u);
  EXPECT_EQ(d.mdm->rank, 8u);
}

TEST(Config, HashTracksContent) {
  ExperimentConfig a, b;
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  b.train.epochs = 31;
  EXPECT_NE(a.hash(), b.hash());
}
