#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "hlpd/error.hpp"
#include "hlpd/jsonl.hpp"
#include "hlpd/rng.hpp"
#include "json.hpp"

namespace hlpd {

namespace prompts {

inline constexpr std::array<std::string_view, 5> kRevisionGoals{"Paraphrase", "Rewrite", "Polish", "Expand",
                                                                "Restructure"};
inline constexpr std::array<std::string_view, 11> kStyleControls{
    "formal",      "oral",  "academic",  "literary",   "critical",  "narrative",
    "descriptive", "lyric", "objective", "subjective", "technical"};
inline constexpr std::array<std::string_view, 3> kAdversarialText{
    "make the paragraph sound as human as possible",
    "make this paragraph feel more natural, like a real person wrote it",
    "make this text sound less robotic and more human"};
inline constexpr std::array<std::string_view, 3> kConstraints{"keep factual accuracy", "no hallucinated content",
                                                              "maintain original intent"};
inline constexpr std::array<std::string_view, 5> kAdditionalOpts{
    "enhance expression", "make sentences more concise", "reorganize the structure", "preserve all factual details",
    "restructure sentences for better flow"};
inline constexpr std::array<int, 3> kWordLens{45, 50, 55};

// Single-task lists. Polish and expand share the ten-style list.
inline constexpr std::array<std::string_view, 10> kPolishStyles{"formal",    "oral",        "academic", "literary",
                                                                "critical",  "narrative",   "descriptive",
                                                                "lyric",     "objective",   "subjective"};
inline constexpr std::array<int, 3> kPolishWordLens{15, 30, 50};

inline constexpr std::string_view kStage1Template =
    "Create a prompt in {word_len} words that says you want GPT's help to {revision_goal} a paragraph in a {style} "
    "style, {adversarial}, {additional_opt}, and {constraint}.";
inline constexpr std::string_view kGenerateTemplate =
    "You are a News writer. Please write an article with about 150 words starting exactly with: {prefix}";
inline constexpr std::string_view kRewriteTemplate =
    "You are a professional rewriting expert and you can help paraphrasing this paragraph without missing the "
    "original details. Please keep the length of the rewritten text similar to the original text. {text}";
inline constexpr std::string_view kPolishTemplate =
    "Write a prompt in {word_len} words that says you want gpt’s help in polishing a paragraph in a {style} "
    "style, this prompt can only be {word_len} words or less.";
inline constexpr std::string_view kExpandTemplate =
    "Expand but not extend the paragraph in a {style} style. The paragraph to be expanded:{text}";

inline constexpr std::size_t kGeneratePrefixWords = 30;
inline constexpr std::size_t kDimensionProduct = kRevisionGoals.size() * kStyleControls.size() *
                                                  kAdversarialText.size() * kConstraints.size() *
                                                  kAdditionalOpts.size() * kWordLens.size();

}  // namespace prompts

// Replaces every "{key}" with its value. Unknown keys are left untouched.
inline std::string fill_template(std::string_view tmpl, const std::vector<std::pair<std::string, std::string>>& slots) {
  std::string out(tmpl);
  for (const auto& [key, value] : slots) {
    const std::string marker = "{" + key + "}";
    for (auto at = out.find(marker); at != std::string::npos; at = out.find(marker, at + value.size())) {
      out.replace(at, marker.size(), value);
    }
  }
  return out;
}

struct PromptDimensions {
  std::string revision_goal;
  std::string style;
  std::string adversarial;
  std::string constraint;
  std::string additional;
  int word_len = 45;

  friend bool operator==(const PromptDimensions&, const PromptDimensions&) = default;
};

namespace detail {

template <class List, class T>
bool listed(const List& list, const T& value) {
  for (const auto& item : list) {
    if (item == value) return true;
  }
  return false;
}

template <class List>
std::string pick(const List& list, Rng& rng) {
  return std::string(list[static_cast<std::size_t>(rng.below(list.size()))]);
}

template <class List>
int pick_int(const List& list, Rng& rng) {
  return list[static_cast<std::size_t>(rng.below(list.size()))];
}

}  // namespace detail

inline void validate(const PromptDimensions& d) {
  using namespace prompts;
  if (!detail::listed(kRevisionGoals, d.revision_goal)) throw InvalidConfig("unknown revision goal " + d.revision_goal);
  if (!detail::listed(kStyleControls, d.style)) throw InvalidConfig("unknown style " + d.style);
  if (!detail::listed(kAdversarialText, d.adversarial)) throw InvalidConfig("unknown adversarial text");
  if (!detail::listed(kConstraints, d.constraint)) throw InvalidConfig("unknown constraint " + d.constraint);
  if (!detail::listed(kAdditionalOpts, d.additional)) throw InvalidConfig("unknown option " + d.additional);
  if (!detail::listed(kWordLens, d.word_len)) throw InvalidConfig("word_len must be 45, 50 or 55");
}

// One independent uniform draw per dimension, in a fixed order.
inline PromptDimensions sample_dimensions(Rng& rng) {
  using namespace prompts;
  PromptDimensions d;
  d.word_len = detail::pick_int(kWordLens, rng);
  d.revision_goal = detail::pick(kRevisionGoals, rng);
  d.style = detail::pick(kStyleControls, rng);
  d.adversarial = detail::pick(kAdversarialText, rng);
  d.constraint = detail::pick(kConstraints, rng);
  d.additional = detail::pick(kAdditionalOpts, rng);
  return d;
}

inline std::string render_stage1(const PromptDimensions& d) {
  validate(d);
  return fill_template(prompts::kStage1Template, {{"word_len", std::to_string(d.word_len)},
                                                  {"revision_goal", d.revision_goal},
                                                  {"style", d.style},
                                                  {"adversarial", d.adversarial},
                                                  {"additional_opt", d.additional},
                                                  {"constraint", d.constraint}});
}

inline nlohmann::json to_json(const PromptDimensions& d) {
  return {{"revision_goal", d.revision_goal}, {"style", d.style},           {"adversarial", d.adversarial},
          {"constraint", d.constraint},       {"additional", d.additional}, {"word_len", d.word_len}};
}

inline PromptDimensions dimensions_from_json(const nlohmann::json& j) {
  PromptDimensions d{j.at("revision_goal").get<std::string>(), j.at("style").get<std::string>(),
                     j.at("adversarial").get<std::string>(),   j.at("constraint").get<std::string>(),
                     j.at("additional").get<std::string>(),    j.at("word_len").get<int>()};
  validate(d);
  return d;
}

enum class PromptKind { generate, rewrite, polish, expand, adversarial_stage1 };

inline std::string prompt_kind_name(PromptKind k) {
  switch (k) {
    case PromptKind::generate: return "generate";
    case PromptKind::rewrite: return "rewrite";
    case PromptKind::polish: return "polish";
    case PromptKind::expand: return "expand";
    case PromptKind::adversarial_stage1: return "adversarial_stage1";
  }
  return "";
}

inline PromptKind parse_prompt_kind(const std::string& s) {
  for (auto k : {PromptKind::generate, PromptKind::rewrite, PromptKind::polish, PromptKind::expand,
                 PromptKind::adversarial_stage1}) {
    if (prompt_kind_name(k) == s) return k;
  }
  throw InvalidConfig("unknown prompt kind '" + s + "'");
}

// Whitespace-delimited words; "tokens" in the generate template are words here.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

inline std::string generate_prefix(std::string_view source) {
  const auto words = split_words(source);
  if (words.size() < prompts::kGeneratePrefixWords) {
    throw PrefixTooShort("generate needs " + std::to_string(prompts::kGeneratePrefixWords) + " words, source has " +
                         std::to_string(words.size()));
  }
  std::string prefix;
  for (std::size_t i = 0; i < prompts::kGeneratePrefixWords; ++i) {
    if (i) prefix += ' ';
    prefix += words[i];
  }
  return prefix;
}

inline std::string render_generate(std::string_view source) {
  return fill_template(prompts::kGenerateTemplate, {{"prefix", generate_prefix(source)}});
}

inline std::string render_rewrite(std::string_view text) {
  return fill_template(prompts::kRewriteTemplate, {{"text", std::string(text)}});
}

inline std::string render_polish(const std::string& style, int word_len) {
  if (!detail::listed(prompts::kPolishStyles, style)) throw InvalidConfig("unknown polish style " + style);
  if (!detail::listed(prompts::kPolishWordLens, word_len)) throw InvalidConfig("polish word_len must be 15, 30 or 50");
  return fill_template(prompts::kPolishTemplate, {{"word_len", std::to_string(word_len)}, {"style", style}});
}

inline std::string render_expand(const std::string& style, std::string_view text) {
  if (!detail::listed(prompts::kPolishStyles, style)) throw InvalidConfig("unknown expand style " + style);
  return fill_template(prompts::kExpandTemplate, {{"style", style}, {"text", std::string(text)}});
}

// Single-task parameters: style and word_len where the kind uses them.
struct SingleTaskParams {
  std::string style;
  int word_len = 0;
};

inline SingleTaskParams sample_single_task_params(PromptKind kind, Rng& rng) {
  SingleTaskParams p;
  if (kind == PromptKind::polish) {
    p.word_len = detail::pick_int(prompts::kPolishWordLens, rng);
    p.style = detail::pick(prompts::kPolishStyles, rng);
  } else if (kind == PromptKind::expand) {
    p.style = detail::pick(prompts::kPolishStyles, rng);
  }
  return p;
}

struct PromptRecord {
  std::string id;
  PromptKind kind = PromptKind::adversarial_stage1;
  std::string text;
  nlohmann::json params;  // dimensions or single-task parameters
  std::uint64_t seed = 0;
  std::uint64_t draw = 0;

  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

// Re-renders a record from its kind and parameters. Kinds that embed a source
// text need it passed back in.
inline std::string render_record(PromptKind kind, const nlohmann::json& params, std::string_view source = {}) {
  switch (kind) {
    case PromptKind::adversarial_stage1: return render_stage1(dimensions_from_json(params));
    case PromptKind::polish: return render_polish(params.at("style").get<std::string>(), params.at("word_len").get<int>());
    case PromptKind::expand: return render_expand(params.at("style").get<std::string>(), source);
    case PromptKind::rewrite: return render_rewrite(source);
    case PromptKind::generate: return render_generate(source);
  }
  return {};
}

inline nlohmann::json to_json(const PromptRecord& r) {
  return {{"id", r.id},         {"kind", prompt_kind_name(r.kind)}, {"text", r.text},
          {"params", r.params}, {"seed", r.seed},                   {"draw", r.draw}};
}

inline PromptRecord prompt_record_from_json(const nlohmann::json& j) {
  return {j.at("id").get<std::string>(),  parse_prompt_kind(j.at("kind").get<std::string>()),
          j.at("text").get<std::string>(), j.at("params"),
          j.at("seed").get<std::uint64_t>(), j.at("draw").get<std::uint64_t>()};
}

inline const JsonlSchema& prompt_schema() {
  static const JsonlSchema schema{"hlpd.prompts", "1.0"};
  return schema;
}

inline void write_prompt_pool(const std::filesystem::path& path, const std::vector<PromptRecord>& pool) {
  std::vector<nlohmann::json> rows;
  for (const auto& r : pool) rows.push_back(to_json(r));
  write_jsonl(path, prompt_schema(), rows);
}

inline std::vector<PromptRecord> read_prompt_pool(const std::filesystem::path& path) {
  return decode_jsonl<PromptRecord>(read_jsonl(path, prompt_schema()), prompt_record_from_json);
}

inline constexpr std::size_t kDefaultPoolSize = 750;

// `size` stage-1 prompts with distinct rendered texts. Draws repeat until
// enough are unique, up to 100 * size attempts.
inline std::vector<PromptRecord> build_pool(std::size_t size, std::uint64_t seed) {
  if (size > prompts::kDimensionProduct) {
    throw PoolExhausted("requested " + std::to_string(size) + " prompts but only " +
                        std::to_string(prompts::kDimensionProduct) + " distinct combinations exist");
  }
  Rng rng(seed);
  std::vector<PromptRecord> pool;
  std::unordered_set<std::string> seen;
  const std::uint64_t cap = 100 * static_cast<std::uint64_t>(size);
  for (std::uint64_t draw = 0; pool.size() < size; ++draw) {
    if (draw >= cap) throw PoolExhausted("rejection cap reached before the pool filled");
    const PromptDimensions dims = sample_dimensions(rng);
    std::string text = render_stage1(dims);
    if (!seen.insert(text).second) continue;
    char id[32];
    std::snprintf(id, sizeof id, "p%05zu", pool.size());
    pool.push_back({id, PromptKind::adversarial_stage1, std::move(text), to_json(dims), seed, draw});
  }
  return pool;
}

}  // namespace hlpd
