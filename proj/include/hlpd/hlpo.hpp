#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include "hlpd/lm.hpp"
#include "hlpd/optim.hpp"
#include "json.hpp"

namespace hlpd {

// Human text x_h is preferred over its machine revision x_m.
struct PreferencePair {
  Sequence human;
  Sequence machine;
  std::string task;
  std::string source_model;

  PreferencePair swapped() const { return {machine, human, task, source_model}; }
};

struct MarginOptions {
  double r_max = 20.0;
  bool per_token_mean = false;
};

// r(x_h, x_m) = [L(x_h) - L(x_m)] - [L_ref(x_h) - L_ref(x_m)], clipped to [-r_max, r_max].
struct RewardMargin {
  double value = 0.0;
  double raw = 0.0;
  bool clipped = false;
};

inline double sequence_score(const LanguageModel& model, const Sequence& x, bool per_token_mean) {
  const double total = sequence_logprob(model, x);
  return per_token_mean ? total / static_cast<double>(x.size() - 1) : total;
}

inline RewardMargin margin_from_scores(double scoring_h, double scoring_m, double ref_h, double ref_m, double r_max) {
  RewardMargin out;
  out.raw = (scoring_h - scoring_m) - (ref_h - ref_m);
  out.value = std::clamp(out.raw, -r_max, r_max);
  out.clipped = out.value != out.raw;
  return out;
}

inline void require_frozen_reference(const ModelHandle& reference) {
  if (!reference.frozen()) throw InvalidConfig("reference model must be frozen");
}

inline RewardMargin reward_margin(const ModelHandle& scoring, const ModelHandle& reference, const PreferencePair& pair,
                                  const MarginOptions& options = {}) {
  require_frozen_reference(reference);
  const bool mean = options.per_token_mean;
  return margin_from_scores(sequence_score(scoring.model(), pair.human, mean),
                            sequence_score(scoring.model(), pair.machine, mean),
                            sequence_score(reference.model(), pair.human, mean),
                            sequence_score(reference.model(), pair.machine, mean), options.r_max);
}

// Bradley-Terry preference probability P(x_h > x_m).
inline double bt_preference_prob(const RewardMargin& margin) {
  const double m = margin.value;
  if (m >= 0.0) return 1.0 / (1.0 + std::exp(-m));
  const double e = std::exp(m);
  return e / (1.0 + e);
}

inline double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

enum class LossVariant { linear, sigmoid };

inline std::string loss_variant_name(LossVariant v) { return v == LossVariant::linear ? "linear" : "sigmoid"; }

inline LossVariant parse_loss_variant(const std::string& s) {
  if (s == "linear") return LossVariant::linear;
  if (s == "sigmoid") return LossVariant::sigmoid;
  throw InvalidConfig("unknown loss variant '" + s + "'");
}

struct LossResult {
  double loss = 0.0;
  std::vector<RewardMargin> margins;
  // d loss / d(summed log-prob of each sequence), ready for backward().
  std::vector<WeightedSequence> gradient_spec;
};

namespace detail {

// Per-pair dloss/dmargin -> weights on the scoring model's sequence scores.
inline void push_pair_weights(LossResult& out, const PreferencePair& pair, double dloss_dmargin,
                              const MarginOptions& options) {
  const double hw = options.per_token_mean ? 1.0 / static_cast<double>(pair.human.size() - 1) : 1.0;
  const double mw = options.per_token_mean ? 1.0 / static_cast<double>(pair.machine.size() - 1) : 1.0;
  out.gradient_spec.push_back({pair.human, dloss_dmargin * hw});
  out.gradient_spec.push_back({pair.machine, -dloss_dmargin * mw});
}

inline std::vector<RewardMargin> batch_margins(std::span<const PreferencePair> batch, const ModelHandle& scoring,
                                               const ModelHandle& reference, const MarginOptions& options) {
  if (batch.empty()) throw EmptyBatch("loss needs at least one preference pair");
  std::vector<RewardMargin> margins;
  margins.reserve(batch.size());
  for (const auto& pair : batch) margins.push_back(reward_margin(scoring, reference, pair, options));
  return margins;
}

}  // namespace detail

// Linear contrastive loss -beta_t * mean(margin). Clipped margins carry no gradient.
inline LossResult hlpo_loss_from_margins(std::span<const PreferencePair> batch, std::vector<RewardMargin> margins,
                                         double beta_t, const MarginOptions& options = {}) {
  if (batch.empty()) throw EmptyBatch("loss needs at least one preference pair");
  if (!(beta_t > 0.0)) throw InvalidConfig("beta_t must be positive");
  LossResult out;
  const double n = static_cast<double>(batch.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    sum += margins[i].value;
    detail::push_pair_weights(out, batch[i], margins[i].clipped ? 0.0 : -beta_t / n, options);
  }
  out.loss = -beta_t * (sum / n);
  out.margins = std::move(margins);
  return out;
}

inline LossResult hlpo_loss(std::span<const PreferencePair> batch, const ModelHandle& scoring,
                            const ModelHandle& reference, double beta_t, const MarginOptions& options = {}) {
  return hlpo_loss_from_margins(batch, detail::batch_margins(batch, scoring, reference, options), beta_t, options);
}

// Sigmoid (DPO-style) loss -mean(log sigma(beta * margin)); ablation variant.
inline LossResult dpo_sigmoid_loss_from_margins(std::span<const PreferencePair> batch,
                                                std::vector<RewardMargin> margins, double beta,
                                                const MarginOptions& options = {}) {
  if (batch.empty()) throw EmptyBatch("loss needs at least one preference pair");
  if (!(beta > 0.0)) throw InvalidConfig("beta must be positive");
  LossResult out;
  const double n = static_cast<double>(batch.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double z = beta * margins[i].value;
    sum += -log_sigmoid(z);
    // d/dm [-log sigma(beta m)] = -beta * sigma(-beta m)
    const double sig_neg = std::exp(log_sigmoid(-z));
    detail::push_pair_weights(out, batch[i], margins[i].clipped ? 0.0 : -beta * sig_neg / n, options);
  }
  out.loss = sum / n;
  out.margins = std::move(margins);
  return out;
}

inline LossResult dpo_sigmoid_loss(std::span<const PreferencePair> batch, const ModelHandle& scoring,
                                   const ModelHandle& reference, double beta, const MarginOptions& options = {}) {
  return dpo_sigmoid_loss_from_margins(batch, detail::batch_margins(batch, scoring, reference, options), beta,
                                       options);
}

struct DynamicBetaConfig {
  std::size_t window = 32;
  double beta_min = 0.01;
  double beta_max = 0.5;
  double curvature = 1.0;  // c in beta_min + (beta_max - beta_min) * c / (c + v)

  void validate() const {
    if (window < 1) throw InvalidConfig("beta window must hold at least one margin");
    if (!(beta_min > 0.0) || !(beta_max >= beta_min)) throw InvalidConfig("need 0 < beta_min <= beta_max");
    if (!(curvature > 0.0)) throw InvalidConfig("beta curvature constant must be positive");
  }
};

// Variance-aware coefficient: high when recent margins agree, low when noisy.
class DynamicBeta {
 public:
  explicit DynamicBeta(DynamicBetaConfig config = {}) : config_(config), beta_(config.beta_max) {
    config_.validate();
  }

  const DynamicBetaConfig& config() const noexcept { return config_; }

  static double beta_for_variance(const DynamicBetaConfig& c, double variance) {
    if (std::isinf(variance)) return c.beta_min;
    return c.beta_min + (c.beta_max - c.beta_min) * c.curvature / (c.curvature + variance);
  }

  void update(const RewardMargin& margin) {
    window_.push_back(margin.value);
    while (window_.size() > config_.window) window_.pop_front();
    variance_ = sample_variance();
    beta_ = beta_for_variance(config_, variance_);
  }

  double beta() const noexcept { return beta_; }
  double variance() const noexcept { return variance_; }
  std::size_t size() const noexcept { return window_.size(); }

 private:
  double sample_variance() const {
    if (window_.size() < 2) return 0.0;
    const double n = static_cast<double>(window_.size());
    const double mean = std::accumulate(window_.begin(), window_.end(), 0.0) / n;
    double ss = 0.0;
    for (double m : window_) ss += (m - mean) * (m - mean);
    return ss / (n - 1.0);
  }

  DynamicBetaConfig config_;
  std::deque<double> window_;
  double variance_ = 0.0;
  double beta_;
};

struct TrainerConfig {
  double learning_rate = 1e-4;
  int epochs = 2;
  std::size_t batch_size = 8;
  LossVariant loss_variant = LossVariant::linear;
  bool dynamic_beta = true;
  double fixed_beta = 0.1;  // used when dynamic_beta is off
  DynamicBetaConfig beta;
  MarginOptions margin;
  std::uint64_t seed = 42;

  void validate() const {
    if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
    if (batch_size < 1) throw InvalidConfig("batch size must be >= 1");
    if (!(margin.r_max > 0.0)) throw InvalidConfig("r_max must be positive");
    if (!(learning_rate >= 0.0)) throw InvalidConfig("learning rate must be non-negative");
    if (!dynamic_beta && !(fixed_beta > 0.0)) throw InvalidConfig("fixed beta must be positive");
    beta.validate();
  }
};

struct TraceRow {
  long step = 0;
  int epoch = 0;
  double mean_margin = 0.0;
  double window_variance = 0.0;
  double beta_t = 0.0;
  double loss = 0.0;
  LossVariant variant = LossVariant::linear;
};

inline nlohmann::json to_json(const TraceRow& row) {
  return {{"step", row.step},
          {"epoch", row.epoch},
          {"mean_margin", row.mean_margin},
          {"window_variance", row.window_variance},
          {"beta_t", row.beta_t},
          {"loss", row.loss},
          {"variant", loss_variant_name(row.variant)}};
}

struct TrainResult {
  ModelHandle scoring;
  ModelHandle reference;
  std::vector<TraceRow> trace;
};

// Preference optimization of `scoring` in place. The reference is a frozen
// snapshot taken before the first step; the variance window persists across
// epochs.
inline TrainResult train(std::span<const PreferencePair> dataset, const ModelHandle& scoring,
                         const TrainerConfig& config) {
  if (dataset.empty()) throw EmptyBatch("training set is empty");
  config.validate();
  TrainableModel& model = scoring.trainable();
  TrainResult result{scoring, scoring.snapshot(ModelRole::reference), {}};
  const LanguageModel& ref = result.reference.model();
  const bool mean = config.margin.per_token_mean;

  std::vector<double> ref_h(dataset.size()), ref_m(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    ref_h[i] = sequence_score(ref, dataset[i].human, mean);
    ref_m[i] = sequence_score(ref, dataset[i].machine, mean);
  }

  Adam adam({.learning_rate = config.learning_rate}, model.parameters().size());
  DynamicBeta scheduler(config.beta);
  std::vector<std::size_t> order(dataset.size());
  std::vector<double> grad(model.parameters().size());
  long step = 0;
  const Rng root(config.seed);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = root.fork(static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<PreferencePair> batch;
      std::vector<RewardMargin> margins;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        batch.push_back(dataset[i]);
        margins.push_back(margin_from_scores(sequence_score(model, dataset[i].human, mean),
                                             sequence_score(model, dataset[i].machine, mean), ref_h[i], ref_m[i],
                                             config.margin.r_max));
        scheduler.update(margins.back());
      }
      const double beta_t = config.dynamic_beta ? scheduler.beta() : config.fixed_beta;
      const LossResult loss = config.loss_variant == LossVariant::linear
                                  ? hlpo_loss_from_margins(batch, margins, beta_t, config.margin)
                                  : dpo_sigmoid_loss_from_margins(batch, margins, beta_t, config.margin);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (const auto& item : loss.gradient_spec) {
        if (item.weight != 0.0) model.accumulate_gradient(item.sequence, item.weight, grad);
      }
      adam.step(model.parameters(), grad);

      double mean_margin = 0.0;
      for (const auto& m : loss.margins) mean_margin += m.value;
      mean_margin /= static_cast<double>(loss.margins.size());
      result.trace.push_back({step++, epoch, mean_margin, scheduler.variance(), beta_t, loss.loss, config.loss_variant});
    }
  }
  return result;
}

}  // namespace hlpd
