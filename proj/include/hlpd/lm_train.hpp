#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "hlpd/lm.hpp"
#include "hlpd/ngram.hpp"
#include "hlpd/optim.hpp"

namespace hlpd {

// Random fixed-length byte windows from a text, each prefixed with BOS.
inline std::vector<Sequence> text_windows(std::string_view text, std::size_t tokens_per_window, std::size_t count,
                                          Rng& rng) {
  if (text.size() < tokens_per_window) throw TextTooShort("corpus shorter than one window");
  std::vector<Sequence> out;
  out.reserve(count);
  const std::size_t span = text.size() - tokens_per_window + 1;
  for (std::size_t i = 0; i < count; ++i) {
    const auto start = static_cast<std::size_t>(rng.below(span));
    out.push_back(tokenize(text.substr(start, tokens_per_window)));
  }
  return out;
}

// Every non-overlapping window, in order.
inline std::vector<Sequence> tile_windows(std::string_view text, std::size_t tokens_per_window) {
  std::vector<Sequence> out;
  for (std::size_t start = 0; start + tokens_per_window <= text.size(); start += tokens_per_window) {
    const auto piece = text.substr(start, tokens_per_window);
    if (piece.find_first_not_of(" \t\r\n") == std::string_view::npos) continue;
    out.push_back(tokenize(piece));
  }
  return out;
}

inline NgramLm fit_ngram(std::span<const Sequence> data, NgramLm::Config config = {}) {
  NgramLm model(config);
  for (const auto& seq : data) model.observe(seq);
  return model;
}

// Extends `prefix` with byte tokens until it holds `total_tokens` tokens
// (BOS included).
inline Sequence sample_continuation(const LanguageModel& model, Sequence prefix, std::size_t total_tokens,
                                    double temperature, Rng& rng) {
  while (prefix.size() < total_tokens) {
    const auto dist = bytes_only(model.next_distribution(prefix));
    prefix.push_back(sample_token(dist, temperature, rng));
  }
  return prefix;
}

struct PretrainConfig {
  int steps = 200;
  int batch_size = 8;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
};

struct PretrainStep {
  int step = 0;
  double mean_nll = 0.0;  // per token
};

// Maximum-likelihood training on uniformly drawn mini-batches.
inline std::vector<PretrainStep> pretrain_mle(const ModelHandle& handle, std::span<const Sequence> data,
                                              const PretrainConfig& config) {
  if (data.empty()) throw EmptyCorpus("no pretraining sequences");
  TrainableModel& model = handle.trainable();
  Adam adam({.learning_rate = config.learning_rate}, model.parameters().size());
  Rng rng(config.seed);
  std::vector<PretrainStep> trace;
  std::vector<double> grad(model.parameters().size());
  for (int step = 0; step < config.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double nll = 0.0;
    double tokens = 0.0;
    for (int b = 0; b < config.batch_size; ++b) {
      const Sequence& seq = data[static_cast<std::size_t>(rng.below(data.size()))];
      check_scorable(model, seq);
      // loss = -mean over batch of log p(seq)
      nll -= model.accumulate_gradient(seq, 1.0 / config.batch_size, grad);
      tokens += static_cast<double>(seq.size() - 1);
    }
    for (double& g : grad) g = -g;
    adam.step(model.parameters(), grad);
    trace.push_back({step, nll / tokens});
  }
  return trace;
}

}  // namespace hlpd
