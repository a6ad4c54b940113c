#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "hlpd/checkpoint.hpp"
#include "hlpd/lm.hpp"
#include "hlpd/lm_train.hpp"
#include "hlpd/ngram.hpp"
#include "hlpd/transformer.hpp"
#include "support/gradcheck.hpp"

namespace hlpd {
namespace {

TransformerConfig tiny_config() {
  TransformerConfig c;
  c.width = 16;
  c.layers = 2;
  c.heads = 2;
  c.context = 24;
  return c;
}

Sequence random_sequence(Rng& rng, std::size_t content) {
  Sequence s;
  for (std::size_t i = 0; i < content; ++i) s.push_back(static_cast<Token>(32 + rng.below(90)));
  return s;
}

TEST(Tokenizer, EmptyTextRejected) {
  EXPECT_THROW(tokenize(""), EmptyText);
  EXPECT_THROW(tokenize(" \n\t"), EmptyText);
}

TEST(Tokenizer, BytesMapOneToOne) {
  const Sequence s = tokenize("ab");
  EXPECT_EQ(s.vec(), (std::vector<Token>{kBos, 97, 98}));
}

TEST(Tokenizer, RoundTripsArbitraryBytes) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text(1 + rng.below(64), ' ');
    for (char& c : text) c = static_cast<char>(rng.below(256));
    text[0] = 'x';
    EXPECT_EQ(detokenize(tokenize(text)), text);
  }
  EXPECT_EQ(detokenize(tokenize("naïve café — 東京")), "naïve café — 東京");
}

TEST(ForwardLogprobs, UniformModelGivesMinusLogV) {
  UniformLm model;
  const Sequence x = tokenize("hello world");
  const auto lp = forward_logprobs(model, x);
  ASSERT_EQ(lp.size(), x.size() - 1);
  for (double v : lp) EXPECT_DOUBLE_EQ(v, -std::log(259.0));
}

TEST(ForwardLogprobs, SumEqualsSequenceLogprob) {
  TransformerLm model(tiny_config(), 3);
  Rng rng(1);
  const Sequence x = random_sequence(rng, 12);
  const auto lp = forward_logprobs(model, x);
  EXPECT_EQ(std::accumulate(lp.begin(), lp.end(), 0.0), sequence_logprob(model, x));
}

FunctionLm bigram_table() {
  return FunctionLm([](std::span<const Token> prefix) {
    std::vector<double> lp(kVocabSize, -std::numeric_limits<double>::infinity());
    const Token last = prefix.back();
    if (last == 'a') {
      lp['b'] = std::log(0.9);
      lp['c'] = std::log(0.1);
    } else if (last == 'b') {
      lp[kEos] = 0.0;
    } else {
      lp['a'] = 0.0;
    }
    return lp;
  });
}

TEST(ForwardLogprobs, HandBuiltBigramTable) {
  const FunctionLm model = bigram_table();
  Sequence x = tokenize("ab");
  x.push_back(kEos);
  const auto lp = forward_logprobs(model, x);
  ASSERT_EQ(lp.size(), 3u);
  EXPECT_DOUBLE_EQ(lp[1], std::log(0.9));
  EXPECT_DOUBLE_EQ(lp[2], 0.0);
}

TEST(ForwardLogprobs, ContextOverflow) {
  TransformerLm model(tiny_config(), 3);
  Sequence x;
  for (int i = 0; i < 24; ++i) x.push_back('a');
  EXPECT_THROW(forward_logprobs(model, x), ContextOverflow);
  EXPECT_THROW(forward_logprobs(model, Sequence{}), InvalidSequence);
}

TEST(PositionDistributions, BigramLookup) {
  const auto handle = ModelHandle::scoring(std::make_shared<FunctionLm>(bigram_table()));
  const auto dists = position_distributions(handle, tokenize("ab"));
  EXPECT_DOUBLE_EQ(dists[1].log_probs['b'], std::log(0.9));
}

TEST(PositionDistributions, NormalizedAndPrefixCausal) {
  const auto handle = ModelHandle::scoring(std::make_shared<TransformerLm>(tiny_config(), 11));
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Sequence x = random_sequence(rng, 1 + rng.below(20));
    const auto dists = position_distributions(handle, x);
    for (const auto& d : dists) EXPECT_NEAR(logsumexp(d.log_probs), 0.0, 1e-6);

    const std::size_t cut = 1 + rng.below(x.size() - 1);
    std::vector<Token> altered = x.vec();
    for (std::size_t j = cut; j < altered.size(); ++j) altered[j] = static_cast<Token>(rng.below(256));
    const auto dists2 = position_distributions(handle, Sequence(altered));
    for (std::size_t j = 0; j < cut; ++j) {
      for (std::size_t v = 0; v < kVocabSize; ++v) EXPECT_DOUBLE_EQ(dists[j].log_probs[v], dists2[j].log_probs[v]);
    }
  }
}

TEST(NgramLm, NormalizedAfterCounting) {
  const auto model = fit_ngram(std::vector<Sequence>{tokenize("the cat sat on the mat"), tokenize("a cat")});
  const auto handle = ModelHandle::scoring(std::make_shared<NgramLm>(model));
  for (const auto& d : position_distributions(handle, tokenize("the dog"))) {
    EXPECT_NEAR(logsumexp(d.log_probs), 0.0, 1e-12);
  }
  // "t" -> "h" is the only continuation seen after "the" contexts
  const auto next = model.next_distribution(tokenize("the cat sat on t"));
  EXPECT_GT(next.log_probs['h'], std::log(0.5));
}

TEST(SampleToken, PointMassAlwaysWins) {
  NextTokenDistribution dist{std::vector<double>(kVocabSize, -std::numeric_limits<double>::infinity())};
  dist.log_probs[42] = 0.0;
  Rng rng(3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_token(dist, 1.0, rng), 42);
}

TEST(SampleToken, DeterministicUnderSeed) {
  NextTokenDistribution dist{std::vector<double>(kVocabSize, -std::log(259.0))};
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_token(dist, 0.7, a), sample_token(dist, 0.7, b));
}

TEST(SampleToken, EmpiricalFrequencyMatches) {
  NextTokenDistribution dist{{std::log(0.7), std::log(0.3)}};
  Rng rng(2024);
  int zeros = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) zeros += sample_token(dist, 1.0, rng) == 0 ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(zeros) / draws, 0.7, 0.01);
}

TEST(SampleToken, RejectsNonPositiveTemperature) {
  NextTokenDistribution dist{{0.0}};
  Rng rng(1);
  EXPECT_THROW(sample_token(dist, 0.0, rng), InvalidConfig);
}

TEST(Backward, ZeroLossGivesZeroGradient) {
  const auto handle = ModelHandle::scoring(std::make_shared<TransformerLm>(tiny_config(), 1));
  const std::vector<WeightedSequence> spec{{tokenize("abc"), 0.0}};
  const auto grad = backward(handle, spec);
  for (double g : grad) EXPECT_EQ(g, 0.0);
}

TEST(Backward, FrozenHandlesReject) {
  const auto scoring = ModelHandle::scoring(std::make_shared<TransformerLm>(tiny_config(), 1));
  const auto reference = scoring.snapshot(ModelRole::reference);
  const std::vector<WeightedSequence> spec{{tokenize("abc"), 1.0}};
  EXPECT_THROW(backward(reference, spec), FrozenModel);
  const auto ngram = ModelHandle::scoring(std::make_shared<NgramLm>());
  EXPECT_THROW(backward(ngram, spec), FrozenModel);
}

TEST(Backward, MatchesFiniteDifferences) {
  auto model = std::make_shared<TransformerLm>(tiny_config(), 17);
  const auto handle = ModelHandle::scoring(model);
  Rng rng(8);
  const std::vector<WeightedSequence> spec{{random_sequence(rng, 9), 0.7}, {random_sequence(rng, 5), -1.3}};
  const auto grad = backward(handle, spec);
  const auto loss = [&] {
    double total = 0.0;
    for (const auto& item : spec) total += item.weight * sequence_logprob(*model, item.sequence);
    return total;
  };
  for (const auto& err : testing::finite_difference_check(*model, grad, loss, 1e-4)) {
    EXPECT_LE(err.relative_error, 1e-3) << err.name;
  }
}

TEST(Backward, Deterministic) {
  const auto handle = ModelHandle::scoring(std::make_shared<TransformerLm>(tiny_config(), 4));
  const std::vector<WeightedSequence> spec{{tokenize("determinism"), 1.0}, {tokenize("law"), -0.5}};
  EXPECT_EQ(backward(handle, spec), backward(handle, spec));
}

TEST(Transformer, ParameterCountFromDescriptor) {
  const auto c = tiny_config();
  TransformerLm a(c, 1), b(c, 2);
  EXPECT_EQ(a.parameters().size(), b.parameters().size());
  EXPECT_EQ(a.parameters().size(), TransformerLm::parameter_count(c));
  const std::size_t d = 16, f = 64, v = kVocabSize;
  const std::size_t per_layer = 2 * d + d * 3 * d + 3 * d + d * d + d + 2 * d + d * f + f + f * d + d;
  EXPECT_EQ(a.parameters().size(), v * d + 24 * d + 2 * per_layer + 2 * d + d * v + v);
}

TEST(Checkpoint, TransformerRoundTripIsBitExact) {
  const auto path = std::filesystem::temp_directory_path() / "hlpd_lm_core_ckpt.bin";
  TransformerLm model(tiny_config(), 21);
  save_checkpoint(model, path, {{"init_seed", 21}});
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.lineage.at("init_seed"), 21);
  const Sequence x = tokenize("round trip");
  EXPECT_EQ(forward_logprobs(model, x), forward_logprobs(*loaded.model, x));
  std::filesystem::remove(path);
}

TEST(Checkpoint, NgramRoundTripIsBitExact) {
  const auto path = std::filesystem::temp_directory_path() / "hlpd_lm_core_ngram.bin";
  const auto model = fit_ngram(std::vector<Sequence>{tokenize("counting model fixture text")});
  save_checkpoint(model, path);
  const auto loaded = load_checkpoint(path);
  const Sequence x = tokenize("count me");
  EXPECT_EQ(forward_logprobs(model, x), forward_logprobs(*loaded.model, x));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "hlpd_lm_core_garbage.bin";
  {
    std::ofstream out(path);
    out << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Pretrain, LowersNegativeLogLikelihood) {
  const auto handle = ModelHandle::scoring(std::make_shared<TransformerLm>(tiny_config(), 5));
  const std::string text = "abcabcabcabcabcabcabcabcabcabcabcabcabcabcabcabc";
  const auto data = tile_windows(text, 12);
  const auto trace = pretrain_mle(handle, data, {.steps = 60, .batch_size = 4, .learning_rate = 1e-2, .seed = 1});
  EXPECT_LT(trace.back().mean_nll, 0.5 * trace.front().mean_nll);
}

}  // namespace
}  // namespace hlpd
