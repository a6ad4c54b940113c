#pragma once

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <utility>
#include <vector>

#include "hlpd/error.hpp"
#include "json.hpp"

namespace hlpd {

// Machine-class scores are the positives.
struct ScoredSet {
  std::vector<double> positives;
  std::vector<double> negatives;

  ScoredSet reversed() const { return {negatives, positives}; }
};

// AUROC as the exact ratio wins2 / (2 * n_pos * n_neg), where a win counts 2
// and a tie counts 1.
struct AurocFraction {
  std::uint64_t twice_wins = 0;
  std::uint64_t twice_pairs = 0;

  double value() const { return static_cast<double>(twice_wins) / static_cast<double>(twice_pairs); }
};

namespace detail {

inline void require_both_classes(const ScoredSet& s) {
  if (s.positives.empty()) throw EmptyClass("no positive (machine) scores");
  if (s.negatives.empty()) throw EmptyClass("no negative (human) scores");
  for (double v : s.positives) {
    if (std::isnan(v)) throw InvalidConfig("NaN score");
  }
  for (double v : s.negatives) {
    if (std::isnan(v)) throw InvalidConfig("NaN score");
  }
}

}  // namespace detail

// Mann-Whitney statistic from a single sort; ties get half credit.
inline AurocFraction auroc_fraction(const ScoredSet& s) {
  detail::require_both_classes(s);
  std::vector<std::pair<double, bool>> all;
  all.reserve(s.positives.size() + s.negatives.size());
  for (double v : s.positives) all.emplace_back(v, true);
  for (double v : s.negatives) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::uint64_t twice_wins = 0;
  std::uint64_t negatives_below = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second ? pos : neg) += 1;
      ++j;
    }
    twice_wins += pos * (2 * negatives_below + neg);
    negatives_below += neg;
    i = j;
  }
  return {twice_wins, 2 * static_cast<std::uint64_t>(s.positives.size()) * s.negatives.size()};
}

inline double auroc(const ScoredSet& s) { return auroc_fraction(s).value(); }

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // points predict machine for score >= threshold
};

// Threshold sweep from +inf down through every distinct score.
inline std::vector<RocPoint> roc_points(const ScoredSet& s) {
  detail::require_both_classes(s);
  std::vector<std::pair<double, bool>> all;
  for (double v : s.positives) all.emplace_back(v, true);
  for (double v : s.negatives) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const double np = static_cast<double>(s.positives.size());
  const double nn = static_cast<double>(s.negatives.size());
  std::vector<RocPoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second ? tp : fp) += 1;
      ++j;
    }
    out.push_back({static_cast<double>(fp) / nn, static_cast<double>(tp) / np, all[i].first});
    i = j;
  }
  return out;
}

inline double trapezoid_area(const std::vector<RocPoint>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

inline void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& points) {
  out << "fpr,tpr,threshold\n";
  for (const auto& p : points) out << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
}

struct ThresholdFit {
  double epsilon = 0.0;  // predict machine when score > epsilon
  double youden_j = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

// Maximizes TPR - FPR over epsilon in {-inf} and the observed scores. The
// smallest epsilon wins ties.
inline ThresholdFit fit_threshold(const ScoredSet& s) {
  detail::require_both_classes(s);
  std::vector<double> candidates{-std::numeric_limits<double>::infinity()};
  candidates.insert(candidates.end(), s.positives.begin(), s.positives.end());
  candidates.insert(candidates.end(), s.negatives.begin(), s.negatives.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::vector<double> pos = s.positives, neg = s.negatives;
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  const auto rate_above = [](const std::vector<double>& sorted, double eps) {
    const auto above = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), eps);
    return static_cast<double>(above) / static_cast<double>(sorted.size());
  };
  ThresholdFit best{candidates.front(), -2.0, 0.0, 0.0};
  for (double eps : candidates) {
    const double tpr = rate_above(pos, eps);
    const double fpr = rate_above(neg, eps);
    if (tpr - fpr > best.youden_j) best = {eps, tpr - fpr, tpr, fpr};
  }
  return best;
}

inline const std::vector<std::uint64_t>& default_seeds() {
  static const std::vector<std::uint64_t> seeds{42, 199, 410, 2231, 2533};
  return seeds;
}

struct CiReport {
  double mean = 0.0;
  double half_width_95 = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed;
};

// Student-t interval over per-seed values. Entries are ordered by seed so the
// report does not depend on the order the runs were listed in.
inline CiReport ci_report(std::vector<std::uint64_t> seeds, std::vector<double> values) {
  if (seeds.size() != values.size()) throw InvalidConfig("one value per seed required");
  if (seeds.size() < 2) throw InvalidConfig("a confidence interval needs at least two seeds");
  std::vector<std::size_t> order(seeds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return seeds[a] != seeds[b] ? seeds[a] < seeds[b] : values[a] < values[b];
  });
  CiReport out;
  for (std::size_t i : order) {
    out.seeds.push_back(seeds[i]);
    out.per_seed.push_back(values[i]);
  }
  const double n = static_cast<double>(out.per_seed.size());
  out.mean = std::accumulate(out.per_seed.begin(), out.per_seed.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : out.per_seed) ss += (v - out.mean) * (v - out.mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  out.half_width_95 = sd == 0.0 ? 0.0 : boost::math::quantile(dist, 0.975) * sd / std::sqrt(n);
  return out;
}

inline CiReport seed_sweep(const std::function<double(std::uint64_t)>& run,
                           const std::vector<std::uint64_t>& seeds = default_seeds()) {
  if (seeds.size() < 2) throw InvalidConfig("a seed sweep needs at least two seeds");
  std::vector<double> values;
  for (std::uint64_t seed : seeds) values.push_back(run(seed));
  return ci_report(seeds, std::move(values));
}

inline nlohmann::json to_json(const CiReport& r) {
  return {{"mean", r.mean}, {"half_width_95", r.half_width_95}, {"seeds", r.seeds}, {"per_seed", r.per_seed}};
}

inline CiReport ci_report_from_json(const nlohmann::json& j) {
  return ci_report(j.at("seeds").get<std::vector<std::uint64_t>>(), j.at("per_seed").get<std::vector<double>>());
}

}  // namespace hlpd
