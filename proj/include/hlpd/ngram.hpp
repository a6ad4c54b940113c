#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hlpd/lm.hpp"

namespace hlpd {

// Smoothed count model conditioning on the previous `order` tokens. Each level
// backs off to the next shorter context:
//   p_k(v | c) = (n(c, v) + kappa * p_{k-1}(v | c')) / (n(c) + kappa),
// bottoming out in the uniform distribution. Gradient-free; trained by counting.
class NgramLm final : public LanguageModel {
 public:
  struct Config {
    int order = 2;
    double concentration = 2.0;
    int vocab = kVocabSize;
    int context = 128;
  };

  struct ContextCounts {
    std::vector<std::uint32_t> counts;
    std::uint64_t total = 0;
  };

  NgramLm() : NgramLm(Config{}) {}
  explicit NgramLm(Config config) : config_(config) {
    if (config_.order < 0) throw InvalidConfig("n-gram order must be non-negative");
    if (!(config_.concentration > 0.0)) throw InvalidConfig("n-gram concentration must be positive");
  }

  const Config& config() const noexcept { return config_; }
  const std::map<std::vector<Token>, ContextCounts>& table() const noexcept { return counts_; }

  void observe(const Sequence& x) {
    for (std::size_t j = 1; j < x.size(); ++j) {
      for (int o = 0; o <= config_.order; ++o) {
        if (j < static_cast<std::size_t>(o)) break;
        auto& cell = cell_for(context_of(x.tokens(), j, o));
        ++cell.counts[static_cast<std::size_t>(x[j])];
        ++cell.total;
      }
    }
  }

  void set_count(const std::vector<Token>& context, Token token, std::uint32_t count) {
    auto& cell = cell_for(context);
    cell.total -= cell.counts[static_cast<std::size_t>(token)];
    cell.counts[static_cast<std::size_t>(token)] = count;
    cell.total += count;
  }

  std::string kind() const override { return "ngram"; }
  int vocab_size() const override { return config_.vocab; }
  int context_window() const override { return config_.context; }
  std::unique_ptr<LanguageModel> clone() const override { return std::make_unique<NgramLm>(*this); }

  LogProbTable log_prob_table(const Sequence& x) const override {
    LogProbTable table(x.size() - 1, static_cast<std::size_t>(config_.vocab));
    std::vector<double> probs(static_cast<std::size_t>(config_.vocab));
    for (std::size_t j = 1; j < x.size(); ++j) {
      fill_probs(x.tokens(), j, probs);
      auto row = table.row(j - 1);
      for (std::size_t v = 0; v < probs.size(); ++v) row[v] = std::log(probs[v]);
    }
    return table;
  }

  NextTokenDistribution next_distribution(const Sequence& prefix) const override {
    std::vector<double> probs(static_cast<std::size_t>(config_.vocab));
    fill_probs(prefix.tokens(), prefix.size(), probs);
    for (double& p : probs) p = std::log(p);
    return {std::move(probs)};
  }

 private:
  static std::vector<Token> context_of(std::span<const Token> tokens, std::size_t j, int order) {
    const std::size_t start = j >= static_cast<std::size_t>(order) ? j - static_cast<std::size_t>(order) : 0;
    return {tokens.begin() + static_cast<long>(start), tokens.begin() + static_cast<long>(j)};
  }

  ContextCounts& cell_for(const std::vector<Token>& context) {
    auto [it, inserted] = counts_.try_emplace(context);
    if (inserted) it->second.counts.assign(static_cast<std::size_t>(config_.vocab), 0);
    return it->second;
  }

  // Probabilities of the token at position j given tokens[0..j).
  void fill_probs(std::span<const Token> tokens, std::size_t j, std::vector<double>& probs) const {
    std::fill(probs.begin(), probs.end(), 1.0 / config_.vocab);
    const double kappa = config_.concentration;
    for (int o = 0; o <= config_.order; ++o) {
      if (j < static_cast<std::size_t>(o)) break;
      const auto it = counts_.find(context_of(tokens, j, o));
      if (it == counts_.end()) break;
      const double denom = static_cast<double>(it->second.total) + kappa;
      for (std::size_t v = 0; v < probs.size(); ++v) {
        probs[v] = (static_cast<double>(it->second.counts[v]) + kappa * probs[v]) / denom;
      }
    }
  }

  Config config_;
  std::map<std::vector<Token>, ContextCounts> counts_;
};

}  // namespace hlpd
