#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hlpd/error.hpp"
#include "hlpd/rng.hpp"
#include "hlpd/tokenizer.hpp"

namespace hlpd {

inline double logsumexp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

// Natural-log next-token probabilities for one position.
struct NextTokenDistribution {
  std::vector<double> log_probs;

  std::size_t vocab_size() const noexcept { return log_probs.size(); }
};

// Row j holds log p(. | x_<j+1), i.e. the distribution that predicts x_{j+1}.
class LogProbTable {
 public:
  LogProbTable() = default;
  LogProbTable(std::size_t rows, std::size_t vocab) : rows_(rows), vocab_(vocab), data_(rows * vocab) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t vocab() const noexcept { return vocab_; }

  std::span<double> row(std::size_t j) { return {data_.data() + j * vocab_, vocab_}; }
  std::span<const double> row(std::size_t j) const { return {data_.data() + j * vocab_, vocab_}; }
  std::span<double> data() noexcept { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t vocab_ = 0;
  std::vector<double> data_;
};

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::string kind() const = 0;
  virtual int vocab_size() const = 0;
  virtual int context_window() const = 0;
  virtual std::unique_ptr<LanguageModel> clone() const = 0;

  // One row per predicted position 1..len(x)-1. Callers validate length.
  virtual LogProbTable log_prob_table(const Sequence& x) const = 0;

  // Distribution after `prefix` (which must be non-empty).
  virtual NextTokenDistribution next_distribution(const Sequence& prefix) const {
    Sequence padded = prefix;
    padded.push_back(kPad);
    const LogProbTable table = log_prob_table(padded);
    const auto last = table.row(table.rows() - 1);
    return {std::vector<double>(last.begin(), last.end())};
  }
};

// Sequence paired with the derivative of a scalar loss w.r.t. its summed log-prob.
struct WeightedSequence {
  Sequence sequence;
  double weight = 0.0;
};

struct TensorInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const noexcept { return rows * cols; }
};

class TrainableModel : public LanguageModel {
 public:
  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;
  virtual const std::vector<TensorInfo>& tensors() const = 0;

  // Adds weight * d(sum_j log p(x_j | x_<j)) / d(params) into `grad`; returns
  // the summed log-prob of x.
  virtual double accumulate_gradient(const Sequence& x, double weight, std::span<double> grad) const = 0;
};

enum class ModelRole { scoring, reference, perturbation };

inline std::string_view role_name(ModelRole role) {
  switch (role) {
    case ModelRole::scoring: return "scoring";
    case ModelRole::reference: return "reference";
    case ModelRole::perturbation: return "perturbation";
  }
  return "unknown";
}

// A model together with the role it plays. Reference and perturbation handles
// are always frozen.
class ModelHandle {
 public:
  ModelHandle(ModelRole role, std::shared_ptr<LanguageModel> model)
      : role_(role), model_(std::move(model)), frozen_(role != ModelRole::scoring) {
    if (!model_) throw InvalidConfig("model handle requires a model");
  }

  static ModelHandle scoring(std::shared_ptr<LanguageModel> model) {
    return ModelHandle(ModelRole::scoring, std::move(model));
  }

  // Deep copy of the current parameters under a frozen role.
  ModelHandle snapshot(ModelRole role) const {
    std::shared_ptr<LanguageModel> copy = model_->clone();
    ModelHandle out(role, std::move(copy));
    out.frozen_ = true;
    return out;
  }

  ModelRole role() const noexcept { return role_; }
  bool frozen() const noexcept { return frozen_; }
  void freeze() noexcept { frozen_ = true; }

  const LanguageModel& model() const noexcept { return *model_; }
  const std::shared_ptr<LanguageModel>& shared() const noexcept { return model_; }

  TrainableModel& trainable() const {
    if (frozen_) throw FrozenModel(std::string(role_name(role_)) + " model rejects gradient updates");
    auto* t = dynamic_cast<TrainableModel*>(model_.get());
    if (t == nullptr) throw FrozenModel(model_->kind() + " backend has no gradients");
    return *t;
  }

 private:
  ModelRole role_;
  std::shared_ptr<LanguageModel> model_;
  bool frozen_;
};

inline void check_scorable(const LanguageModel& model, const Sequence& x) {
  if (x.size() < 2) throw InvalidSequence("need BOS plus at least one token");
  if (x.size() > static_cast<std::size_t>(model.context_window())) {
    throw ContextOverflow("sequence of " + std::to_string(x.size()) + " tokens exceeds context window " +
                          std::to_string(model.context_window()));
  }
}

inline LogProbTable checked_table(const LanguageModel& model, const Sequence& x) {
  check_scorable(model, x);
  return model.log_prob_table(x);
}

// log p(x_j | x_<j) for j = 1..len(x)-1.
inline std::vector<double> forward_logprobs(const LanguageModel& model, const Sequence& x) {
  const LogProbTable table = checked_table(model, x);
  std::vector<double> out(table.rows());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = table.row(j)[static_cast<std::size_t>(x[j + 1])];
  return out;
}

inline std::vector<double> forward_logprobs(const ModelHandle& handle, const Sequence& x) {
  return forward_logprobs(handle.model(), x);
}

inline std::vector<NextTokenDistribution> position_distributions(const ModelHandle& handle, const Sequence& x) {
  const LogProbTable table = checked_table(handle.model(), x);
  std::vector<NextTokenDistribution> out(table.rows());
  for (std::size_t j = 0; j < out.size(); ++j) {
    const auto row = table.row(j);
    out[j].log_probs.assign(row.begin(), row.end());
  }
  return out;
}

inline double sequence_logprob(const LanguageModel& model, const Sequence& x) {
  const auto lp = forward_logprobs(model, x);
  return std::accumulate(lp.begin(), lp.end(), 0.0);
}

inline double sequence_logprob(const ModelHandle& handle, const Sequence& x) {
  return sequence_logprob(handle.model(), x);
}

// Gradient of sum_s weight_s * log p(s) w.r.t. the scoring parameters.
inline std::vector<double> backward(const ModelHandle& handle, std::span<const WeightedSequence> spec) {
  TrainableModel& model = handle.trainable();
  std::vector<double> grad(model.parameters().size(), 0.0);
  for (const auto& item : spec) {
    check_scorable(model, item.sequence);
    if (item.weight == 0.0) continue;
    model.accumulate_gradient(item.sequence, item.weight, grad);
  }
  return grad;
}

// Inverse-CDF draw at the given temperature. Temperature 1 samples the
// distribution as-is.
inline Token sample_token(const NextTokenDistribution& dist, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw InvalidConfig("temperature must be positive");
  const auto& lp = dist.log_probs;
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : lp) hi = std::max(hi, v);
  std::vector<double> weights(lp.size());
  double total = 0.0;
  for (std::size_t v = 0; v < lp.size(); ++v) {
    weights[v] = std::isfinite(lp[v]) ? std::exp((lp[v] - hi) / temperature) : 0.0;
    total += weights[v];
  }
  const double target = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t v = 0; v < weights.size(); ++v) {
    if (weights[v] <= 0.0) continue;
    acc += weights[v];
    last_positive = v;
    if (target < acc) return static_cast<Token>(v);
  }
  return static_cast<Token>(last_positive);
}

// Renormalized restriction to byte tokens (drops BOS/EOS/PAD).
inline NextTokenDistribution bytes_only(const NextTokenDistribution& dist) {
  NextTokenDistribution out{std::vector<double>(dist.log_probs.size(), -std::numeric_limits<double>::infinity())};
  const std::span<const double> bytes(dist.log_probs.data(), std::min<std::size_t>(256, dist.log_probs.size()));
  const double norm = logsumexp(bytes);
  for (std::size_t v = 0; v < bytes.size(); ++v) out.log_probs[v] = bytes[v] - norm;
  return out;
}

// Same distribution at every position.
class UniformLm final : public LanguageModel {
 public:
  explicit UniformLm(int vocab = kVocabSize, int context = 128) : vocab_(vocab), context_(context) {}

  std::string kind() const override { return "uniform"; }
  int vocab_size() const override { return vocab_; }
  int context_window() const override { return context_; }
  std::unique_ptr<LanguageModel> clone() const override { return std::make_unique<UniformLm>(*this); }

  LogProbTable log_prob_table(const Sequence& x) const override {
    LogProbTable table(x.size() - 1, static_cast<std::size_t>(vocab_));
    std::fill(table.data().begin(), table.data().end(), -std::log(static_cast<double>(vocab_)));
    return table;
  }

 private:
  int vocab_;
  int context_;
};

// Backend defined by a callable prefix -> log-probs. Values are used as
// returned, without renormalization.
class FunctionLm final : public LanguageModel {
 public:
  using Fn = std::function<std::vector<double>(std::span<const Token> prefix)>;

  FunctionLm(Fn fn, int vocab = kVocabSize, int context = 128)
      : fn_(std::move(fn)), vocab_(vocab), context_(context) {}

  std::string kind() const override { return "function"; }
  int vocab_size() const override { return vocab_; }
  int context_window() const override { return context_; }
  std::unique_ptr<LanguageModel> clone() const override { return std::make_unique<FunctionLm>(*this); }

  LogProbTable log_prob_table(const Sequence& x) const override {
    LogProbTable table(x.size() - 1, static_cast<std::size_t>(vocab_));
    for (std::size_t j = 0; j + 1 < x.size(); ++j) {
      const auto lp = fn_(x.tokens().first(j + 1));
      if (lp.size() != static_cast<std::size_t>(vocab_)) throw InvalidConfig("function backend returned wrong vocab size");
      std::copy(lp.begin(), lp.end(), table.row(j).begin());
    }
    return table;
  }

 private:
  Fn fn_;
  int vocab_;
  int context_;
};

}  // namespace hlpd
