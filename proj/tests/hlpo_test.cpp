#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hlpd/hlpo.hpp"
#include "hlpd/transformer.hpp"
#include "support/gradcheck.hpp"

namespace hlpd {
namespace {

TransformerConfig tiny_config() {
  TransformerConfig c;
  c.width = 16;
  c.heads = 2;
  c.context = 48;
  return c;
}

std::vector<PreferencePair> toy_pairs() {
  return {{tokenize("the old man walked slowly home"), tokenize("the elderly gentleman proceeded home"), "rewrite", "m"},
          {tokenize("rain again, of course"), tokenize("it is raining once more"), "polish", "m"},
          {tokenize("we ate bread and soup"), tokenize("bread and soup were consumed"), "expand", "m"}};
}

std::vector<RewardMargin> margins_of(std::initializer_list<double> values) {
  std::vector<RewardMargin> out;
  for (double v : values) out.push_back({v, v, false});
  return out;
}

TEST(RewardMargin, IdenticalModelsCancel) {
  const auto scoring = ModelHandle::scoring(std::make_shared<TransformerLm>(tiny_config(), 1));
  const auto reference = scoring.snapshot(ModelRole::reference);
  for (const auto& pair : toy_pairs()) EXPECT_EQ(reward_margin(scoring, reference, pair).value, 0.0);
}

TEST(RewardMargin, HandSetLogProbs) {
  EXPECT_DOUBLE_EQ(margin_from_scores(-10, -12, -11, -11, 20.0).value, 2.0);
}

TEST(RewardMargin, AntisymmetricUnderSwap) {
  const auto scoring = ModelHandle::scoring(std::make_shared<TransformerLm>(tiny_config(), 1));
  const auto reference = ModelHandle(ModelRole::reference, std::make_shared<TransformerLm>(tiny_config(), 2));
  for (const auto& pair : toy_pairs()) {
    EXPECT_EQ(reward_margin(scoring, reference, pair).value, -reward_margin(scoring, reference, pair.swapped()).value);
  }
}

TEST(RewardMargin, ClippedToRmax) {
  const auto m = margin_from_scores(0, -100, 0, 0, 20.0);
  EXPECT_EQ(m.value, 20.0);
  EXPECT_TRUE(m.clipped);
  EXPECT_EQ(margin_from_scores(-100, 0, 0, 0, 20.0).value, -20.0);
}

TEST(RewardMargin, ReferenceMustBeFrozen) {
  const auto scoring = ModelHandle::scoring(std::make_shared<TransformerLm>(tiny_config(), 1));
  EXPECT_THROW(reward_margin(scoring, scoring, toy_pairs()[0]), InvalidConfig);
}

TEST(BradleyTerry, KnownValues) {
  EXPECT_DOUBLE_EQ(bt_preference_prob({0.0}), 0.5);
  EXPECT_GE(bt_preference_prob({20.0}), 0.9999999);
  EXPECT_NEAR(bt_preference_prob({std::log(3.0)}), 0.75, 1e-15);
}

TEST(HlpoLoss, DirectEvaluation) {
  const auto pairs = toy_pairs();
  const std::span<const PreferencePair> batch(pairs.data(), 2);
  EXPECT_NEAR(hlpo_loss_from_margins(batch, margins_of({1.0, -0.5}), 0.1).loss, -0.025, 1e-15);
  EXPECT_EQ(hlpo_loss_from_margins(batch, margins_of({0.0, 0.0}), 0.1).loss, 0.0);
}

TEST(HlpoLoss, LinearInBeta) {
  const auto pairs = toy_pairs();
  const auto one = hlpo_loss_from_margins(pairs, margins_of({0.3, -1.7, 2.25}), 0.125).loss;
  const auto two = hlpo_loss_from_margins(pairs, margins_of({0.3, -1.7, 2.25}), 0.25).loss;
  EXPECT_DOUBLE_EQ(two, 2.0 * one);
}

TEST(HlpoLoss, EmptyBatch) {
  const auto scoring = ModelHandle::scoring(std::make_shared<TransformerLm>(tiny_config(), 1));
  const auto reference = scoring.snapshot(ModelRole::reference);
  EXPECT_THROW(hlpo_loss({}, scoring, reference, 0.1), EmptyBatch);
  EXPECT_THROW(dpo_sigmoid_loss({}, scoring, reference, 0.1), EmptyBatch);
}

TEST(SigmoidLoss, KnownValues) {
  const auto pairs = toy_pairs();
  const std::span<const PreferencePair> one(pairs.data(), 1);
  EXPECT_NEAR(dpo_sigmoid_loss_from_margins(one, margins_of({0.0}), 1.0).loss, std::log(2.0), 1e-15);
  EXPECT_LT(dpo_sigmoid_loss_from_margins(one, margins_of({1e6}), 1.0).loss, 1e-12);
  EXPECT_NEAR(dpo_sigmoid_loss_from_margins(one, margins_of({1.0}), 1.0).loss, 0.31326168751822286, 1e-12);
}

TEST(DynamicBeta, ClosedFormValues) {
  DynamicBetaConfig c;
  EXPECT_DOUBLE_EQ(DynamicBeta::beta_for_variance(c, 0.0), c.beta_max);
  EXPECT_DOUBLE_EQ(DynamicBeta::beta_for_variance(c, 1.0), 0.255);
  EXPECT_NEAR(DynamicBeta::beta_for_variance(c, 1e12), c.beta_min, 1e-12);
  EXPECT_DOUBLE_EQ(DynamicBeta::beta_for_variance(c, std::numeric_limits<double>::infinity()), c.beta_min);
}

TEST(DynamicBeta, StrictlyDecreasingAndBounded) {
  DynamicBetaConfig c;
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const double v1 = rng.uniform() * 50.0;
    const double v2 = v1 + 1e-6 + rng.uniform() * 50.0;
    const double b1 = DynamicBeta::beta_for_variance(c, v1);
    const double b2 = DynamicBeta::beta_for_variance(c, v2);
    EXPECT_GT(b1, b2);
    EXPECT_GE(b2, c.beta_min);
    EXPECT_LE(b1, c.beta_max);
  }
}

TEST(DynamicBeta, WindowSlidesAndUsesSampleVariance) {
  DynamicBeta beta({.window = 3});
  beta.update({1.0});
  EXPECT_EQ(beta.variance(), 0.0);
  EXPECT_EQ(beta.beta(), 0.5);
  beta.update({3.0});
  EXPECT_DOUBLE_EQ(beta.variance(), 2.0);
  beta.update({5.0});
  beta.update({7.0});  // window now {3, 5, 7}
  EXPECT_EQ(beta.size(), 3u);
  EXPECT_DOUBLE_EQ(beta.variance(), 4.0);
  EXPECT_DOUBLE_EQ(beta.beta(), 0.01 + 0.49 / 5.0);
}

// Gradients of both losses against central finite differences of the full
// margin -> loss pipeline.
TEST(LossGradient, BothVariantsMatchFiniteDifferences) {
  const std::vector<PreferencePair> pairs{{tokenize("so it goes"), tokenize("thus it is"), "rewrite", "m"},
                                          {tokenize("hm, fine"), tokenize("very well"), "polish", "m"}};
  for (LossVariant variant : {LossVariant::linear, LossVariant::sigmoid}) {
    TransformerLm model(tiny_config(), 9);
    const ModelHandle reference(ModelRole::reference, std::make_shared<TransformerLm>(tiny_config(), 10));
    for (const auto& err : testing::loss_gradient_errors(model, reference, pairs, variant, 0.3)) {
      EXPECT_LE(err.relative_error, 1e-3) << loss_variant_name(variant) << " " << err.name;
    }
  }
}

TEST(LossGradient, SmallStepDoesNotDecreaseMeanMargin) {
  auto model = std::make_shared<TransformerLm>(tiny_config(), 12);
  const auto scoring = ModelHandle::scoring(model);
  const auto reference = ModelHandle(ModelRole::reference, std::make_shared<TransformerLm>(tiny_config(), 13));
  const auto pairs = toy_pairs();
  const auto before = hlpo_loss(pairs, scoring, reference, 0.2);
  const auto grad = backward(scoring, before.gradient_spec);
  auto params = model->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= 1e-6 * grad[i];
  const auto after = hlpo_loss(pairs, scoring, reference, 0.2);
  const auto mean = [](const LossResult& r) {
    double s = 0.0;
    for (const auto& m : r.margins) s += m.value;
    return s / static_cast<double>(r.margins.size());
  };
  EXPECT_GE(mean(after), mean(before));
}

TEST(LossGradient, ClippedPairsCarryNoGradient) {
  const auto pairs = toy_pairs();
  const std::span<const PreferencePair> one(pairs.data(), 1);
  const auto r = hlpo_loss_from_margins(one, {margin_from_scores(0, -50, 0, 0, 20.0)}, 0.1);
  EXPECT_EQ(r.margins[0].value, 20.0);
  for (const auto& item : r.gradient_spec) EXPECT_EQ(item.weight, 0.0);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  auto model = std::make_shared<TransformerLm>(tiny_config(), 4);
  const std::vector<double> initial(model->parameters().begin(), model->parameters().end());
  const auto pairs = toy_pairs();
  TrainerConfig config;
  config.learning_rate = 0.0;
  config.epochs = 1;
  const std::span<const PreferencePair> one(pairs.data(), 1);
  const auto result = train(one, ModelHandle::scoring(model), config);
  EXPECT_TRUE(std::equal(initial.begin(), initial.end(), model->parameters().begin()));
  for (const auto& row : result.trace) EXPECT_EQ(row.mean_margin, 0.0);
}

TEST(Train, DeterministicUnderSeed) {
  const auto pairs = toy_pairs();
  TrainerConfig config;
  config.learning_rate = 1e-3;
  config.batch_size = 2;
  auto a = std::make_shared<TransformerLm>(tiny_config(), 4);
  auto b = std::make_shared<TransformerLm>(tiny_config(), 4);
  const auto ra = train(pairs, ModelHandle::scoring(a), config);
  const auto rb = train(pairs, ModelHandle::scoring(b), config);
  EXPECT_TRUE(std::equal(a->parameters().begin(), a->parameters().end(), b->parameters().begin()));
  ASSERT_EQ(ra.trace.size(), rb.trace.size());
  for (std::size_t i = 0; i < ra.trace.size(); ++i) EXPECT_EQ(ra.trace[i].loss, rb.trace[i].loss);
}

TEST(Train, RaisesTrainingMarginsAndKeepsBetaInBounds) {
  const auto pairs = toy_pairs();
  TrainerConfig config;
  config.learning_rate = 1e-3;
  config.epochs = 6;
  config.batch_size = 3;
  auto model = std::make_shared<TransformerLm>(tiny_config(), 6);
  const auto scoring = ModelHandle::scoring(model);
  const auto result = train(pairs, scoring, config);
  EXPECT_EQ(result.trace.front().mean_margin, 0.0);
  EXPECT_GT(result.trace.back().mean_margin, 0.0);
  for (const auto& row : result.trace) {
    EXPECT_GE(row.beta_t, config.beta.beta_min);
    EXPECT_LE(row.beta_t, config.beta.beta_max);
  }
  for (const auto& pair : pairs) EXPECT_GT(reward_margin(scoring, result.reference, pair).value, 0.0);
}

TEST(Train, SigmoidVariantRecordedInTrace) {
  const auto pairs = toy_pairs();
  TrainerConfig config;
  config.loss_variant = LossVariant::sigmoid;
  config.epochs = 1;
  const auto result = train(pairs, ModelHandle::scoring(std::make_shared<TransformerLm>(tiny_config(), 6)), config);
  EXPECT_EQ(to_json(result.trace.front()).at("variant"), "sigmoid");
  EXPECT_NEAR(result.trace.front().loss, std::log(2.0), 1e-12);
}

TEST(Train, RejectsInvalidConfig) {
  const auto pairs = toy_pairs();
  TrainerConfig config;
  config.epochs = 0;
  const auto scoring = ModelHandle::scoring(std::make_shared<TransformerLm>(tiny_config(), 6));
  EXPECT_THROW(train(pairs, scoring, config), InvalidConfig);
  config = {};
  config.margin.r_max = 0.0;
  EXPECT_THROW(train(pairs, scoring, config), InvalidConfig);
  EXPECT_THROW(train({}, scoring, TrainerConfig{}), EmptyBatch);
}

}  // namespace
}  // namespace hlpd
