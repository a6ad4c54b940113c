#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hlpd/lm.hpp"
#include "json.hpp"

namespace hlpd {

enum class Estimator { analytic, monte_carlo };
enum class ScoreSign { hlp, fast_detect };

inline std::string estimator_name(Estimator e) { return e == Estimator::analytic ? "analytic" : "monte_carlo"; }
inline std::string sign_name(ScoreSign s) { return s == ScoreSign::hlp ? "hlp" : "fast_detect"; }

inline Estimator parse_estimator(const std::string& s) {
  if (s == "analytic") return Estimator::analytic;
  if (s == "monte_carlo" || s == "mc") return Estimator::monte_carlo;
  throw InvalidConfig("unknown estimator '" + s + "'");
}

inline ScoreSign parse_sign(const std::string& s) {
  if (s == "hlp") return ScoreSign::hlp;
  if (s == "fast_detect") return ScoreSign::fast_detect;
  throw InvalidConfig("unknown score sign '" + s + "'");
}

// log p(x|x), and the mean / spread of log p(x~|x) for x~ drawn token-wise
// from the perturbation model conditioned on the prefixes of x.
struct CurvatureStats {
  double log_p_x = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  std::size_t n_positions = 0;
  Estimator estimator = Estimator::analytic;
  std::size_t mc_samples = 0;
};

struct CurvatureScore {
  double d = 0.0;
  bool degenerate = false;
  CurvatureStats stats;
};

struct DetectorConfig {
  double epsilon = 0.0;
  Estimator estimator = Estimator::analytic;
  std::size_t mc_samples = 1000;
  double sigma_floor = 1e-8;
  ScoreSign sign = ScoreSign::hlp;
  std::uint64_t seed = 0;  // Monte-Carlo draws only

  void validate() const {
    if (mc_samples < 1) throw InvalidConfig("mc_samples must be >= 1");
    if (!(sigma_floor >= 0.0)) throw InvalidConfig("sigma_floor must be non-negative");
  }
};

struct DetectionDecision {
  int label = 0;  // 1 = machine, 0 = human
  double score = 0.0;
  CurvatureScore curvature;
  DetectorConfig config;
};

namespace detail {

inline void check_pairable(const LanguageModel& scoring, const LanguageModel& perturb) {
  if (scoring.vocab_size() != perturb.vocab_size()) throw InvalidConfig("scoring and perturbation vocabularies differ");
  if (scoring.context_window() != perturb.context_window()) {
    throw InvalidConfig("scoring and perturbation context windows differ");
  }
}

struct PairedTables {
  LogProbTable scoring;
  LogProbTable perturb;
};

inline PairedTables paired_tables(const Sequence& x, const LanguageModel& scoring, const LanguageModel& perturb) {
  check_pairable(scoring, perturb);
  check_scorable(scoring, x);
  LogProbTable s = scoring.log_prob_table(x);
  LogProbTable p = (&scoring == &perturb) ? s : perturb.log_prob_table(x);
  return {std::move(s), std::move(p)};
}

inline double observed_logprob(const LogProbTable& scoring, const Sequence& x) {
  double total = 0.0;
  for (std::size_t j = 0; j < scoring.rows(); ++j) total += scoring.row(j)[static_cast<std::size_t>(x[j + 1])];
  return total;
}

}  // namespace detail

// Closed-form mean and variance; positions are independent given the prefixes of x.
inline CurvatureStats analytic_curvature(const Sequence& x, const LanguageModel& scoring,
                                         const LanguageModel& perturb) {
  const auto tables = detail::paired_tables(x, scoring, perturb);
  CurvatureStats out;
  out.n_positions = tables.scoring.rows();
  out.log_p_x = detail::observed_logprob(tables.scoring, x);
  double variance = 0.0;
  for (std::size_t j = 0; j < out.n_positions; ++j) {
    const auto lp = tables.scoring.row(j);
    const auto lq = tables.perturb.row(j);
    double mean = 0.0;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (std::isfinite(lq[v])) mean += std::exp(lq[v]) * lp[v];
    }
    double var = 0.0;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (std::isfinite(lq[v])) var += std::exp(lq[v]) * (lp[v] - mean) * (lp[v] - mean);
    }
    out.mu += mean;
    variance += var;
  }
  out.sigma = std::sqrt(std::max(variance, 0.0));
  return out;
}

inline CurvatureStats analytic_curvature(const Sequence& x, const ModelHandle& scoring, const ModelHandle& perturb) {
  return analytic_curvature(x, scoring.model(), perturb.model());
}

// log p(x~|x) for `samples` perturbations drawn token-wise from the perturbation model.
inline std::vector<double> mc_sample_scores(const Sequence& x, const LanguageModel& scoring,
                                            const LanguageModel& perturb, std::size_t samples, Rng& rng) {
  if (samples < 1) throw InvalidConfig("need at least one Monte-Carlo sample");
  const auto tables = detail::paired_tables(x, scoring, perturb);
  const std::size_t positions = tables.scoring.rows();
  const std::size_t vocab = tables.scoring.vocab();
  std::vector<double> cdf(positions * vocab);
  for (std::size_t j = 0; j < positions; ++j) {
    const auto lq = tables.perturb.row(j);
    double acc = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      acc += std::isfinite(lq[v]) ? std::exp(lq[v]) : 0.0;
      cdf[j * vocab + v] = acc;
    }
  }
  std::vector<double> scores(samples, 0.0);
  for (std::size_t s = 0; s < samples; ++s) {
    double total = 0.0;
    for (std::size_t j = 0; j < positions; ++j) {
      const double* begin = cdf.data() + j * vocab;
      const double target = rng.uniform() * begin[vocab - 1];
      auto v = static_cast<std::size_t>(std::upper_bound(begin, begin + vocab, target) - begin);
      v = std::min(v, vocab - 1);
      total += tables.scoring.row(j)[v];
    }
    scores[s] = total;
  }
  return scores;
}

inline CurvatureStats mc_curvature(const Sequence& x, const LanguageModel& scoring, const LanguageModel& perturb,
                                   std::size_t samples, Rng& rng) {
  const auto scores = mc_sample_scores(x, scoring, perturb, samples, rng);
  CurvatureStats out;
  out.estimator = Estimator::monte_carlo;
  out.mc_samples = samples;
  out.n_positions = x.size() - 1;
  out.log_p_x = detail::observed_logprob(scoring.log_prob_table(x), x);
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(samples);
  out.mu = mean;
  if (samples >= 2) {
    double ss = 0.0;
    for (double s : scores) ss += (s - mean) * (s - mean);
    out.sigma = std::sqrt(ss / static_cast<double>(samples - 1));
  }
  return out;
}

inline CurvatureStats mc_curvature(const Sequence& x, const ModelHandle& scoring, const ModelHandle& perturb,
                                   std::size_t samples, Rng& rng) {
  return mc_curvature(x, scoring.model(), perturb.model(), samples, rng);
}

// d = (log p(x|x) - mu) / sigma; zero and flagged degenerate when sigma < sigma_floor.
inline CurvatureScore score_from_stats(const CurvatureStats& stats, double sigma_floor) {
  CurvatureScore out;
  out.stats = stats;
  if (stats.sigma < sigma_floor || stats.sigma == 0.0) {
    out.degenerate = true;
    out.d = 0.0;
  } else {
    out.d = (stats.log_p_x - stats.mu) / stats.sigma;
  }
  return out;
}

inline CurvatureScore hlp_cpc_score(const Sequence& x, const LanguageModel& scoring, const LanguageModel& perturb,
                                    const DetectorConfig& config) {
  config.validate();
  if (config.estimator == Estimator::analytic) {
    return score_from_stats(analytic_curvature(x, scoring, perturb), config.sigma_floor);
  }
  Rng rng(config.seed);
  return score_from_stats(mc_curvature(x, scoring, perturb, config.mc_samples, rng), config.sigma_floor);
}

inline CurvatureScore hlp_cpc_score(const Sequence& x, const ModelHandle& scoring, const ModelHandle& perturb,
                                    const DetectorConfig& config) {
  return hlp_cpc_score(x, scoring.model(), perturb.model(), config);
}

// Thresholded decision on -d (hlp) or d (fast_detect). Degenerate inputs are
// always labelled human.
inline DetectionDecision decide_from_score(const CurvatureScore& curvature, const DetectorConfig& config) {
  DetectionDecision out;
  out.curvature = curvature;
  out.config = config;
  out.score = config.sign == ScoreSign::hlp ? -curvature.d : curvature.d;
  out.label = (!curvature.degenerate && out.score > config.epsilon) ? 1 : 0;
  return out;
}

inline DetectionDecision decide(const Sequence& x, const ModelHandle& scoring, const ModelHandle& perturb,
                                const DetectorConfig& config) {
  return decide_from_score(hlp_cpc_score(x, scoring, perturb, config), config);
}

struct BaselineScores {
  double likelihood = 0.0;  // mean log p(x_j | x_<j)
  double log_rank = 0.0;    // mean log rank, most probable token has rank 1
  double entropy = 0.0;     // mean Shannon entropy of p(. | x_<j)
  double lrr = 0.0;         // |likelihood| / |log_rank|, 0 when log_rank is 0
};

inline BaselineScores baseline_scores(const Sequence& x, const LanguageModel& scoring) {
  const LogProbTable table = checked_table(scoring, x);
  BaselineScores out;
  const double n = static_cast<double>(table.rows());
  for (std::size_t j = 0; j < table.rows(); ++j) {
    const auto lp = table.row(j);
    const double observed = lp[static_cast<std::size_t>(x[j + 1])];
    std::size_t rank = 1;
    double entropy = 0.0;
    for (double v : lp) {
      if (v > observed) ++rank;
      if (std::isfinite(v)) entropy -= std::exp(v) * v;
    }
    out.likelihood += observed / n;
    out.log_rank += std::log(static_cast<double>(rank)) / n;
    out.entropy += entropy / n;
  }
  out.lrr = out.log_rank == 0.0 ? 0.0 : std::abs(out.likelihood) / std::abs(out.log_rank);
  return out;
}

inline BaselineScores baseline_scores(const Sequence& x, const ModelHandle& scoring) {
  return baseline_scores(x, scoring.model());
}

inline nlohmann::json to_json(const BaselineScores& b) {
  return {{"likelihood", b.likelihood}, {"log_rank", b.log_rank}, {"entropy", b.entropy}, {"lrr", b.lrr}};
}

}  // namespace hlpd
