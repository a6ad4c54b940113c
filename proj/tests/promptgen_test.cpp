#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "hlpd/promptgen.hpp"

namespace hlpd {
namespace {

nlohmann::json fixture() {
  std::ifstream in(std::string(HLPD_FIXTURE_DIR) + "/prompt_constants.json");
  return nlohmann::json::parse(in);
}

template <class List>
std::vector<std::string> as_strings(const List& list) {
  std::vector<std::string> out;
  for (const auto& v : list) out.emplace_back(v);
  return out;
}

template <class List>
std::vector<int> as_ints(const List& list) {
  return {list.begin(), list.end()};
}

TEST(PromptConstants, MatchEmbeddedFixtureByteForByte) {
  const auto f = fixture();
  EXPECT_EQ(as_strings(prompts::kRevisionGoals), f["revision_goals"].get<std::vector<std::string>>());
  EXPECT_EQ(as_strings(prompts::kStyleControls), f["style_controls"].get<std::vector<std::string>>());
  EXPECT_EQ(as_strings(prompts::kAdversarialText), f["adversarial_text"].get<std::vector<std::string>>());
  EXPECT_EQ(as_strings(prompts::kConstraints), f["constraints"].get<std::vector<std::string>>());
  EXPECT_EQ(as_strings(prompts::kAdditionalOpts), f["additional_opts"].get<std::vector<std::string>>());
  EXPECT_EQ(as_ints(prompts::kWordLens), f["word_lens"].get<std::vector<int>>());
  EXPECT_EQ(as_strings(prompts::kPolishStyles), f["polish_styles"].get<std::vector<std::string>>());
  EXPECT_EQ(as_ints(prompts::kPolishWordLens), f["polish_word_lens"].get<std::vector<int>>());
  const auto& t = f["templates"];
  EXPECT_EQ(std::string(prompts::kStage1Template), t["stage1"].get<std::string>());
  EXPECT_EQ(std::string(prompts::kGenerateTemplate), t["generate"].get<std::string>());
  EXPECT_EQ(std::string(prompts::kRewriteTemplate), t["rewrite"].get<std::string>());
  EXPECT_EQ(std::string(prompts::kPolishTemplate), t["polish"].get<std::string>());
  EXPECT_EQ(std::string(prompts::kExpandTemplate), t["expand"].get<std::string>());
}

TEST(PromptConstants, Cardinalities) {
  EXPECT_EQ(prompts::kRevisionGoals.size(), 5u);
  EXPECT_EQ(prompts::kStyleControls.size(), 11u);
  EXPECT_EQ(prompts::kAdversarialText.size(), 3u);
  EXPECT_EQ(prompts::kConstraints.size(), 3u);
  EXPECT_EQ(prompts::kAdditionalOpts.size(), 5u);
  EXPECT_EQ(prompts::kWordLens.size(), 3u);
  EXPECT_EQ(prompts::kPolishStyles.size(), 10u);
  EXPECT_EQ(prompts::kDimensionProduct, 7425u);
}

TEST(SampleDimensions, DeterministicAndValid) {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) {
    const auto da = sample_dimensions(a);
    EXPECT_EQ(da, sample_dimensions(b));
    EXPECT_NO_THROW(validate(da));
  }
}

TEST(SampleDimensions, GoalFrequenciesUniform) {
  Rng rng(2024);
  std::map<std::string, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) counts[sample_dimensions(rng).revision_goal]++;
  ASSERT_EQ(counts.size(), 5u);
  for (const auto& [goal, n] : counts) EXPECT_NEAR(static_cast<double>(n) / draws, 0.2, 0.01) << goal;
}

TEST(RenderStage1, SixSlotsFilled) {
  EXPECT_EQ(std::count(prompts::kStage1Template.begin(), prompts::kStage1Template.end(), '{'), 6);
  const PromptDimensions d{"Polish", "lyric", std::string(prompts::kAdversarialText[2]), "no hallucinated content",
                           "enhance expression", 50};
  EXPECT_EQ(render_stage1(d),
            "Create a prompt in 50 words that says you want GPT's help to Polish a paragraph in a lyric style, make "
            "this text sound less robotic and more human, enhance expression, and no hallucinated content.");
}

TEST(RenderStage1, InjectiveOverAllTuples) {
  std::set<std::string> seen;
  for (auto goal : prompts::kRevisionGoals)
    for (auto style : prompts::kStyleControls)
      for (auto adv : prompts::kAdversarialText)
        for (auto con : prompts::kConstraints)
          for (auto add : prompts::kAdditionalOpts)
            for (int w : prompts::kWordLens) {
              seen.insert(render_stage1({std::string(goal), std::string(style), std::string(adv), std::string(con),
                                         std::string(add), w}));
            }
  EXPECT_EQ(seen.size(), 7425u);
}

TEST(RenderStage1, RejectsUnknownValues) {
  PromptDimensions d{"Summarize", "formal", std::string(prompts::kAdversarialText[0]), "keep factual accuracy",
                     "enhance expression", 45};
  EXPECT_THROW(render_stage1(d), InvalidConfig);
}

TEST(SingleTask, GenerateEmbedsThirtyWordPrefix) {
  std::string source;
  for (int i = 0; i < 40; ++i) source += "w" + std::to_string(i) + (i % 7 == 0 ? "\n  " : " ");
  const std::string prompt = render_generate(source);
  std::string prefix;
  for (int i = 0; i < 30; ++i) prefix += (i ? " w" : "w") + std::to_string(i);
  EXPECT_EQ(prompt, "You are a News writer. Please write an article with about 150 words starting exactly with: " + prefix);
  EXPECT_THROW(render_generate("only a few words here"), PrefixTooShort);
}

TEST(SingleTask, RewritePolishExpand) {
  EXPECT_NE(render_rewrite("x").find("the length of the rewritten text similar"), std::string::npos);
  EXPECT_EQ(render_polish("oral", 15),
            "Write a prompt in 15 words that says you want gpt’s help in polishing a paragraph in a oral style, this "
            "prompt can only be 15 words or less.");
  EXPECT_THROW(render_polish("technical", 15), InvalidConfig);
  EXPECT_THROW(render_polish("oral", 45), InvalidConfig);
  EXPECT_EQ(render_expand("lyric", "Rain fell."),
            "Expand but not extend the paragraph in a lyric style. The paragraph to be expanded:Rain fell.");
}

TEST(SingleTask, TextWithBracesIsNotReinterpreted) {
  EXPECT_EQ(render_rewrite("{text} {style}").substr(render_rewrite("").size()), "{text} {style}");
}

TEST(BuildPool, DefaultSizeUniqueAndDeterministic) {
  const auto pool = build_pool(kDefaultPoolSize, 42);
  ASSERT_EQ(pool.size(), 750u);
  std::set<std::string> texts;
  for (const auto& r : pool) texts.insert(r.text);
  EXPECT_EQ(texts.size(), 750u);
  EXPECT_EQ(pool, build_pool(750, 42));
  EXPECT_NE(pool, build_pool(750, 43));
}

TEST(BuildPool, ExhaustionBoundary) {
  EXPECT_THROW(build_pool(7426, 1), PoolExhausted);
  EXPECT_EQ(build_pool(7425, 1).size(), 7425u);
}

TEST(BuildPool, RecordsRerenderExactly) {
  for (const auto& r : build_pool(50, 9)) EXPECT_EQ(render_record(r.kind, r.params), r.text);
  Rng rng(1);
  const auto p = sample_single_task_params(PromptKind::polish, rng);
  EXPECT_EQ(render_record(PromptKind::polish, {{"style", p.style}, {"word_len", p.word_len}}),
            render_polish(p.style, p.word_len));
}

TEST(BuildPool, JsonlRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "hlpd_prompt_pool.jsonl";
  const auto pool = build_pool(20, 3);
  write_prompt_pool(path, pool);
  EXPECT_EQ(read_prompt_pool(path), pool);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace hlpd
