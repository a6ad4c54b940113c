#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "hlpd/curvature.hpp"
#include "hlpd/lm.hpp"
#include "hlpd/parallel.hpp"
#include "json.hpp"

namespace hlpd {

struct HumanizeConfig {
  std::size_t candidates_per_iter = 100;
  int iterations = 4;
  double rho = 0.15;
  std::size_t span_min = 1;
  std::size_t span_max = 3;
  double temperature = 1.0;
  bool include_identity = true;
  std::optional<double> max_drift;  // fraction of positions allowed to differ from the input
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const {
    if (candidates_per_iter < 1) throw InvalidConfig("candidates_per_iter must be >= 1");
    if (iterations < 0) throw InvalidConfig("iterations must be >= 0");
    if (!(rho > 0.0 && rho < 1.0)) throw InvalidConfig("rho must lie in (0, 1)");
    if (span_min < 1 || span_max < span_min) throw InvalidConfig("need 1 <= span_min <= span_max");
    if (!(temperature > 0.0)) throw InvalidConfig("temperature must be positive");
    if (max_drift && !(*max_drift >= 0.0 && *max_drift <= 1.0)) throw InvalidConfig("max_drift must lie in [0, 1]");
  }
};

struct PerturbationCandidate {
  Sequence text;
  double score = -std::numeric_limits<double>::infinity();
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // [begin, end) token positions, BOS = 0
  bool identity = false;

  std::size_t masked() const {
    std::size_t n = 0;
    for (const auto& [b, e] : spans) n += e - b;
    return n;
  }
};

inline constexpr std::size_t kMinHumanizeTokens = 4;

// Non-overlapping spans covering round(rho * m) of the m content positions.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_spans(std::size_t length, const HumanizeConfig& config,
                                                                     Rng& rng) {
  const std::size_t m = length - 1;
  const auto target = static_cast<std::size_t>(std::llround(config.rho * static_cast<double>(m)));
  std::vector<bool> taken(length, false);
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t remaining = target;
  for (std::size_t attempt = 0; remaining > 0 && attempt < 100 * length; ++attempt) {
    const std::size_t width = std::min<std::size_t>(
        remaining, config.span_min + static_cast<std::size_t>(rng.below(config.span_max - config.span_min + 1)));
    const std::size_t begin = 1 + static_cast<std::size_t>(rng.below(m - width + 1));
    bool free = true;
    for (std::size_t j = begin; j < begin + width; ++j) free = free && !taken[j];
    if (!free) continue;
    for (std::size_t j = begin; j < begin + width; ++j) taken[j] = true;
    spans.emplace_back(begin, begin + width);
    remaining -= width;
  }
  std::sort(spans.begin(), spans.end());
  return spans;
}

// Masks spans and refills them left to right from the perturbation model,
// conditioning on the already fixed left context. Only byte tokens are drawn.
inline std::vector<PerturbationCandidate> generate_candidates(const Sequence& x, const ModelHandle& perturb,
                                                              const HumanizeConfig& config, Rng& rng) {
  config.validate();
  if (x.size() < kMinHumanizeTokens + 1) {
    throw TextTooShort("humanizer needs at least " + std::to_string(kMinHumanizeTokens) + " tokens");
  }
  std::vector<PerturbationCandidate> out;
  out.reserve(config.candidates_per_iter + 1);
  for (std::size_t c = 0; c < config.candidates_per_iter; ++c) {
    PerturbationCandidate cand{x, -std::numeric_limits<double>::infinity(), sample_spans(x.size(), config, rng), false};
    std::vector<Token> tokens = x.vec();
    for (const auto& [b, e] : cand.spans) {
      for (std::size_t j = b; j < e; ++j) {
        const Sequence prefix(std::vector<Token>(tokens.begin(), tokens.begin() + static_cast<long>(j)));
        const auto dist = bytes_only(perturb.model().next_distribution(prefix));
        tokens[j] = sample_token(dist, config.temperature, rng);
      }
    }
    cand.text = Sequence(std::move(tokens));
    out.push_back(std::move(cand));
  }
  if (config.include_identity) out.push_back({x, -std::numeric_limits<double>::infinity(), {}, true});
  return out;
}

inline std::size_t changed_positions(const Sequence& a, const Sequence& b) {
  std::size_t n = 0;
  for (std::size_t j = 0; j < std::min(a.size(), b.size()); ++j) n += a[j] != b[j] ? 1 : 0;
  return n + (std::max(a.size(), b.size()) - std::min(a.size(), b.size()));
}

// Scores every candidate under the scoring model and returns the index of the
// highest; the lowest index wins ties.
inline std::size_t select_best(std::vector<PerturbationCandidate>& candidates, const ModelHandle& scoring,
                               std::size_t threads = 1) {
  if (candidates.empty()) throw InvalidConfig("no candidates to select from");
  parallel_for(candidates.size(), threads,
               [&](std::size_t i) { candidates[i].score = sequence_logprob(scoring, candidates[i].text); });
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i].score > candidates[best].score) best = i;
  }
  return best;
}

// What the detector under attack uses: its own scoring and perturbation models.
struct Detector {
  ModelHandle scoring;
  ModelHandle perturb;
  DetectorConfig config;

  CurvatureScore score(const Sequence& x) const { return hlp_cpc_score(x, scoring, perturb, config); }
};

struct IterationStep {
  int iteration = 0;
  Sequence text;
  double scorer_logprob = 0.0;
  double d = 0.0;
  double detection_score = 0.0;  // -d for the hlp sign
  std::size_t selected_index = 0;
  std::size_t candidates = 0;
  double candidate_min = 0.0;
  double candidate_mean = 0.0;
  double candidate_max = 0.0;
  double drift = 0.0;
};

struct IterationTrace {
  std::vector<IterationStep> steps;  // steps[0] is the input
};

// generate -> select -> replace, `iterations` times.
inline IterationTrace humanize(const Sequence& x, const ModelHandle& scoring, const ModelHandle& perturb,
                               const Detector& detector, const HumanizeConfig& config) {
  config.validate();
  const auto step_for = [&](int it, const Sequence& text, double logprob) {
    IterationStep s;
    s.iteration = it;
    s.text = text;
    s.scorer_logprob = logprob;
    const auto cs = detector.score(text);
    s.d = cs.d;
    s.detection_score = decide_from_score(cs, detector.config).score;
    s.drift = static_cast<double>(changed_positions(text, x)) / static_cast<double>(x.size() - 1);
    return s;
  };

  IterationTrace trace;
  trace.steps.push_back(step_for(0, x, sequence_logprob(scoring, x)));
  const Rng root(config.seed);
  Sequence current = x;
  for (int it = 1; it <= config.iterations; ++it) {
    Rng rng = root.fork(static_cast<std::uint64_t>(it));
    auto candidates = generate_candidates(current, perturb, config, rng);
    if (config.max_drift) {
      const double limit = *config.max_drift * static_cast<double>(x.size() - 1);
      std::erase_if(candidates, [&](const PerturbationCandidate& c) {
        return !c.identity && static_cast<double>(changed_positions(c.text, x)) > limit;
      });
      if (candidates.empty()) candidates.push_back({current, 0.0, {}, true});
    }
    const std::size_t best = select_best(candidates, scoring, config.threads);
    current = candidates[best].text;
    IterationStep s = step_for(it, current, candidates[best].score);
    s.selected_index = best;
    s.candidates = candidates.size();
    s.candidate_min = std::numeric_limits<double>::infinity();
    s.candidate_max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const auto& c : candidates) {
      s.candidate_min = std::min(s.candidate_min, c.score);
      s.candidate_max = std::max(s.candidate_max, c.score);
      sum += c.score;
    }
    s.candidate_mean = sum / static_cast<double>(candidates.size());
    trace.steps.push_back(std::move(s));
  }
  return trace;
}

inline nlohmann::json to_json(const IterationStep& s) {
  return {{"iteration", s.iteration},
          {"text", detokenize(s.text)},
          {"scorer_logprob", s.scorer_logprob},
          {"d", s.d},
          {"detection_score", s.detection_score},
          {"selected_index", s.selected_index},
          {"candidates", s.candidates},
          {"candidate_min", s.candidate_min},
          {"candidate_mean", s.candidate_mean},
          {"candidate_max", s.candidate_max},
          {"drift", s.drift}};
}

inline nlohmann::json to_json(const IterationTrace& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps) steps.push_back(to_json(s));
  return {{"steps", steps}};
}

}  // namespace hlpd
