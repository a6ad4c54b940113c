#include <gtest/gtest.h>

#include "hlpd/synthetic.hpp"

namespace hlpd {
namespace {

SyntheticExperimentSpec small_spec() {
  SyntheticExperimentSpec s;
  s.train_pairs = 48;
  s.heldout_per_class = 120;
  s.seq_tokens = 32;
  s.prefix_tokens = 8;
  s.scorer.width = 16;
  s.scorer.context = 40;
  s.pretrain_windows = 400;
  s.pretrain.steps = 40;
  s.trainer.epochs = 1;
  s.humanize.candidates_per_iter = 4;
  s.humanize.iterations = 2;
  s.humanize_texts = 6;
  s.seeds = {42, 199};
  return s;
}

TEST(SyntheticSpec, RejectsIdenticalGeneratorsUnlessNull) {
  SyntheticExperimentSpec s = small_spec();
  s.generator_b = s.generator_a;
  EXPECT_THROW(s.validate(), InvalidConfig);
  s.allow_identical_generators = true;
  EXPECT_NO_THROW(s.validate());
  s.generator_b.temperature = 0.9;
  s.allow_identical_generators = false;
  EXPECT_NO_THROW(s.validate());
}

TEST(SyntheticSpec, RejectsBadShapes) {
  SyntheticExperimentSpec s = small_spec();
  s.seeds = {42};
  EXPECT_THROW(s.validate(), InvalidConfig);
  s = small_spec();
  s.seq_tokens = 64;
  EXPECT_THROW(s.validate(), InvalidConfig);
  s = small_spec();
  s.prefix_tokens = s.seq_tokens;
  EXPECT_THROW(s.validate(), InvalidConfig);
}

TEST(SyntheticSpec, JsonRoundTrip) {
  SyntheticExperimentSpec s = small_spec();
  s.generator_b.temperature = 0.7;
  s.trainer.loss_variant = LossVariant::sigmoid;
  const auto back = synthetic_spec_from_json(to_json(s));
  EXPECT_EQ(to_json(back).dump(), to_json(s).dump());
}

TEST(SyntheticPairs, MachineTextContinuesHumanPrefix) {
  const SyntheticExperimentSpec s = small_spec();
  const UniformLm a(kVocabSize, 256), b(kVocabSize, 256);
  const auto pairs = sample_synthetic_pairs(s, a, b, 5);
  ASSERT_EQ(pairs.train.size(), s.train_pairs);
  ASSERT_EQ(pairs.heldout.size(), s.heldout_per_class);
  for (const auto& p : pairs.train) {
    ASSERT_EQ(p.human.size(), s.seq_tokens + 1);
    ASSERT_EQ(p.machine.size(), s.seq_tokens + 1);
    EXPECT_EQ(p.machine.prefix(s.prefix_tokens + 1), p.human.prefix(s.prefix_tokens + 1));
  }
  const auto again = sample_synthetic_pairs(s, a, b, 5);
  EXPECT_EQ(again.heldout.back().machine, pairs.heldout.back().machine);
}

TEST(SyntheticExperiment, RerunIsIdentical) {
  const SyntheticExperimentSpec s = small_spec();
  const auto a = run_synthetic_experiment(s, HLPD_DATA_DIR);
  const auto b = run_synthetic_experiment(s, HLPD_DATA_DIR);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  ASSERT_EQ(a.seeds.size(), 2u);
  EXPECT_EQ(a.seeds[0].humanize_auroc.size(), 3u);
  EXPECT_DOUBLE_EQ(a.seeds[0].pre_margin, 0.0);
}

// No signal exists when both classes come from the same generator.
TEST(SyntheticExperiment, NullExperimentNearChance) {
  SyntheticExperimentSpec s = small_spec();
  s.generator_b = s.generator_a;
  s.allow_identical_generators = true;
  s.seeds = {42, 199, 410};
  const auto r = run_synthetic_experiment(s, HLPD_DATA_DIR);
  EXPECT_LE(std::abs(r.post_auroc.mean - 0.5), std::max(r.post_auroc.half_width_95, 0.1));
  EXPECT_LE(std::abs(r.pre_auroc.mean - 0.5), std::max(r.pre_auroc.half_width_95, 0.1));
}

TEST(SyntheticExperiment, MissingCorpusIsIoError) {
  SyntheticExperimentSpec s = small_spec();
  s.generator_a.corpus = "no_such_corpus.txt";
  EXPECT_THROW(run_synthetic_experiment(s, HLPD_DATA_DIR), IoError);
}

}  // namespace
}  // namespace hlpd
