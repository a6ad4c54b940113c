#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hlpd/checkpoint.hpp"
#include "hlpd/curvature.hpp"
#include "hlpd/evalkit.hpp"
#include "hlpd/hlpo.hpp"
#include "hlpd/humanizer.hpp"
#include "hlpd/lm_train.hpp"
#include "hlpd/parallel.hpp"
#include "hlpd/transformer.hpp"

namespace hlpd {

// A text source for the desk-scale experiment: a character n-gram fitted to a
// corpus file and sampled at a temperature.
struct GeneratorSpec {
  std::string corpus;  // path, relative paths resolved against the data root
  int order = 4;
  double concentration = 0.5;
  double temperature = 1.0;

  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

struct SyntheticExperimentSpec {
  GeneratorSpec generator_a{"corpus_a.txt"};  // "human"
  GeneratorSpec generator_b{"corpus_b.txt"};  // "machine"
  std::size_t train_pairs = 500;
  std::size_t heldout_per_class = 200;
  std::size_t seq_tokens = 48;     // content tokens per text
  std::size_t prefix_tokens = 12;  // human prefix the machine text continues
  TransformerConfig scorer{kVocabSize, 2, 32, 2, 64, 4, 0.02};
  std::size_t pretrain_windows = 4000;
  PretrainConfig pretrain{400, 8, 3e-3, 0};
  TrainerConfig trainer;
  DetectorConfig detector;
  HumanizeConfig humanize;
  std::size_t humanize_texts = 100;
  int filler_order = 3;
  std::vector<std::uint64_t> seeds = default_seeds();
  std::size_t threads = 1;
  bool allow_identical_generators = false;  // null experiment

  SyntheticExperimentSpec() {
    trainer.learning_rate = 1e-3;
    humanize.candidates_per_iter = 16;
  }

  void validate() const {
    if (generator_a == generator_b && !allow_identical_generators) {
      throw InvalidConfig("generator A and generator B must differ");
    }
    if (train_pairs < 1 || heldout_per_class < 1) throw InvalidConfig("need training and held-out texts");
    if (prefix_tokens >= seq_tokens) throw InvalidConfig("prefix must be shorter than the text");
    if (seq_tokens + 1 > static_cast<std::size_t>(scorer.context)) {
      throw InvalidConfig("scorer context is shorter than the texts");
    }
    if (humanize_texts > heldout_per_class) throw InvalidConfig("humanize_texts exceeds the held-out set");
    if (seeds.size() < 2) throw InvalidConfig("need at least two seeds");
    scorer.validate();
    trainer.validate();
    detector.validate();
    humanize.validate();
  }
};

inline nlohmann::json to_json(const GeneratorSpec& g) {
  return {{"corpus", g.corpus}, {"order", g.order}, {"concentration", g.concentration}, {"temperature", g.temperature}};
}

inline GeneratorSpec generator_spec_from_json(const nlohmann::json& j, GeneratorSpec base = {}) {
  base.corpus = j.value("corpus", base.corpus);
  base.order = j.value("order", base.order);
  base.concentration = j.value("concentration", base.concentration);
  base.temperature = j.value("temperature", base.temperature);
  return base;
}

inline nlohmann::json to_json(const SyntheticExperimentSpec& s) {
  return {{"generator_a", to_json(s.generator_a)},
          {"generator_b", to_json(s.generator_b)},
          {"train_pairs", s.train_pairs},
          {"heldout_per_class", s.heldout_per_class},
          {"seq_tokens", s.seq_tokens},
          {"prefix_tokens", s.prefix_tokens},
          {"scorer", transformer_descriptor(s.scorer)},
          {"pretrain_windows", s.pretrain_windows},
          {"pretrain", {{"steps", s.pretrain.steps},
                        {"batch_size", s.pretrain.batch_size},
                        {"learning_rate", s.pretrain.learning_rate}}},
          {"trainer", {{"learning_rate", s.trainer.learning_rate},
                       {"epochs", s.trainer.epochs},
                       {"batch_size", s.trainer.batch_size},
                       {"loss_variant", loss_variant_name(s.trainer.loss_variant)},
                       {"dynamic_beta", s.trainer.dynamic_beta},
                       {"fixed_beta", s.trainer.fixed_beta}}},
          {"detector", {{"estimator", estimator_name(s.detector.estimator)},
                        {"mc_samples", s.detector.mc_samples},
                        {"sigma_floor", s.detector.sigma_floor}}},
          {"humanize", {{"candidates_per_iter", s.humanize.candidates_per_iter},
                        {"iterations", s.humanize.iterations},
                        {"rho", s.humanize.rho},
                        {"include_identity", s.humanize.include_identity}}},
          {"humanize_texts", s.humanize_texts},
          {"filler_order", s.filler_order},
          {"seeds", s.seeds},
          {"allow_identical_generators", s.allow_identical_generators}};
}

// Overlays the fields present in `j` onto `base`.
inline SyntheticExperimentSpec synthetic_spec_from_json(const nlohmann::json& j, SyntheticExperimentSpec base = {}) {
  try {
    if (j.contains("generator_a")) base.generator_a = generator_spec_from_json(j["generator_a"], base.generator_a);
    if (j.contains("generator_b")) base.generator_b = generator_spec_from_json(j["generator_b"], base.generator_b);
    base.train_pairs = j.value("train_pairs", base.train_pairs);
    base.heldout_per_class = j.value("heldout_per_class", base.heldout_per_class);
    base.seq_tokens = j.value("seq_tokens", base.seq_tokens);
    base.prefix_tokens = j.value("prefix_tokens", base.prefix_tokens);
    if (j.contains("scorer")) base.scorer = transformer_config_from(j["scorer"]);
    base.pretrain_windows = j.value("pretrain_windows", base.pretrain_windows);
    if (j.contains("pretrain")) {
      const auto& p = j["pretrain"];
      base.pretrain.steps = p.value("steps", base.pretrain.steps);
      base.pretrain.batch_size = p.value("batch_size", base.pretrain.batch_size);
      base.pretrain.learning_rate = p.value("learning_rate", base.pretrain.learning_rate);
    }
    if (j.contains("trainer")) {
      const auto& t = j["trainer"];
      base.trainer.learning_rate = t.value("learning_rate", base.trainer.learning_rate);
      base.trainer.epochs = t.value("epochs", base.trainer.epochs);
      base.trainer.batch_size = t.value("batch_size", base.trainer.batch_size);
      if (t.contains("loss_variant")) base.trainer.loss_variant = parse_loss_variant(t["loss_variant"]);
      base.trainer.dynamic_beta = t.value("dynamic_beta", base.trainer.dynamic_beta);
      base.trainer.fixed_beta = t.value("fixed_beta", base.trainer.fixed_beta);
    }
    if (j.contains("detector")) {
      const auto& d = j["detector"];
      if (d.contains("estimator")) base.detector.estimator = parse_estimator(d["estimator"]);
      base.detector.mc_samples = d.value("mc_samples", base.detector.mc_samples);
      base.detector.sigma_floor = d.value("sigma_floor", base.detector.sigma_floor);
    }
    if (j.contains("humanize")) {
      const auto& h = j["humanize"];
      base.humanize.candidates_per_iter = h.value("candidates_per_iter", base.humanize.candidates_per_iter);
      base.humanize.iterations = h.value("iterations", base.humanize.iterations);
      base.humanize.rho = h.value("rho", base.humanize.rho);
      base.humanize.include_identity = h.value("include_identity", base.humanize.include_identity);
    }
    base.humanize_texts = j.value("humanize_texts", base.humanize_texts);
    base.filler_order = j.value("filler_order", base.filler_order);
    if (j.contains("seeds")) base.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    base.allow_identical_generators = j.value("allow_identical_generators", base.allow_identical_generators);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("synthetic spec: ") + e.what());
  }
  return base;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  double pre_margin = 0.0;   // mean held-out reward margin before HLPO
  double post_margin = 0.0;  // and after
  double pre_auroc = 0.0;    // fast_detect sign, pretrained scorer
  double post_auroc = 0.0;   // hlp sign, HLPO scorer
  std::vector<double> humanize_auroc;     // per iteration, index 0 = unmodified
  std::vector<double> humanize_mean_score;  // mean -d of the humanized texts
  std::size_t humanize_texts = 0;
  std::size_t humanize_monotone_violations = 0;  // traces whose selected log-prob ever dropped
  double final_pretrain_nll = 0.0;
  double final_train_margin = 0.0;
  ScoredSet pre_scores;
  ScoredSet post_scores;
};

struct SyntheticReport {
  SyntheticExperimentSpec spec;
  std::vector<SeedOutcome> seeds;
  CiReport pre_auroc;
  CiReport post_auroc;
  CiReport post_margin;
  CiReport humanize_first;
  CiReport humanize_last;
};

namespace detail {

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path resolve(const std::filesystem::path& root, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : root / path;
}

inline NgramLm fit_generator(const std::string& text, int order, double concentration) {
  const auto windows = tile_windows(text, 255);
  return fit_ngram(windows, {order, concentration, kVocabSize, 256});
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

// Texts of both classes for one seed. machine[i] continues the first
// prefix_tokens of human[i] with generator B.
struct SyntheticPairs {
  std::vector<PreferencePair> train;
  std::vector<PreferencePair> heldout;
};

inline SyntheticPairs sample_synthetic_pairs(const SyntheticExperimentSpec& spec, const LanguageModel& gen_a,
                                             const LanguageModel& gen_b, std::uint64_t seed) {
  const Rng root(seed);
  const std::size_t total = spec.seq_tokens + 1;
  const auto make = [&](std::size_t n, std::uint64_t stream) {
    std::vector<PreferencePair> out(n);
    const Rng base = root.fork(stream);
    parallel_for(n, spec.threads, [&](std::size_t i) {
      Rng rng = base.fork(i);
      Sequence human = sample_continuation(gen_a, Sequence(), total, spec.generator_a.temperature, rng);
      Sequence machine =
          sample_continuation(gen_b, human.prefix(spec.prefix_tokens + 1), total, spec.generator_b.temperature, rng);
      out[i] = {std::move(human), std::move(machine), "synthetic", "generator_b"};
    });
    return out;
  };
  return {make(spec.train_pairs, 1), make(spec.heldout_per_class, 2)};
}

inline ScoredSet score_heldout(const std::vector<PreferencePair>& pairs, const ModelHandle& model,
                               const DetectorConfig& config, std::size_t threads) {
  ScoredSet s;
  s.positives.resize(pairs.size());
  s.negatives.resize(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    s.positives[i] = decide(pairs[i].machine, model, model, config).score;
    s.negatives[i] = decide(pairs[i].human, model, model, config).score;
  });
  return s;
}

inline double mean_margin(const std::vector<PreferencePair>& pairs, const ModelHandle& scoring,
                          const ModelHandle& reference, const MarginOptions& options) {
  double s = 0.0;
  for (const auto& p : pairs) s += reward_margin(scoring, reference, p, options).value;
  return s / static_cast<double>(pairs.size());
}

inline SeedOutcome run_synthetic_seed(const SyntheticExperimentSpec& spec, const std::string& corpus_a,
                                      const std::string& corpus_b, std::uint64_t seed) {
  SeedOutcome out;
  out.seed = seed;
  const NgramLm gen_a = detail::fit_generator(corpus_a, spec.generator_a.order, spec.generator_a.concentration);
  const NgramLm gen_b = detail::fit_generator(corpus_b, spec.generator_b.order, spec.generator_b.concentration);
  const SyntheticPairs pairs = sample_synthetic_pairs(spec, gen_a, gen_b, seed);

  // Scorer: a fresh transformer pretrained on both corpora.
  const Rng root(seed);
  const ModelHandle scorer =
      ModelHandle::scoring(std::make_shared<TransformerLm>(spec.scorer, Rng::derive_seed(seed, 4)));
  {
    Rng rng = root.fork(5);
    auto windows = text_windows(corpus_a, spec.seq_tokens, spec.pretrain_windows / 2, rng);
    auto more = text_windows(corpus_b, spec.seq_tokens, spec.pretrain_windows - windows.size(), rng);
    windows.insert(windows.end(), more.begin(), more.end());
    PretrainConfig pc = spec.pretrain;
    pc.seed = Rng::derive_seed(seed, 6);
    const auto trace = pretrain_mle(scorer, windows, pc);
    out.final_pretrain_nll = trace.empty() ? 0.0 : trace.back().mean_nll;
  }

  DetectorConfig fast = spec.detector;
  fast.sign = ScoreSign::fast_detect;
  const ModelHandle before = scorer.snapshot(ModelRole::reference);
  out.pre_scores = score_heldout(pairs.heldout, before, fast, spec.threads);
  out.pre_auroc = auroc(out.pre_scores);
  out.pre_margin = mean_margin(pairs.heldout, before, before, spec.trainer.margin);

  TrainerConfig tc = spec.trainer;
  tc.seed = Rng::derive_seed(seed, 7);
  const TrainResult trained = train(pairs.train, scorer, tc);
  out.final_train_margin = trained.trace.empty() ? 0.0 : trained.trace.back().mean_margin;
  const ModelHandle after = trained.scoring.snapshot(ModelRole::scoring);
  out.post_margin = mean_margin(pairs.heldout, after, trained.reference, spec.trainer.margin);

  DetectorConfig hlp = spec.detector;
  hlp.sign = ScoreSign::hlp;
  out.post_scores = score_heldout(pairs.heldout, after, hlp, spec.threads);
  out.post_auroc = auroc(out.post_scores);

  // Humanization of the first held-out machine texts against the HLPO detector.
  std::vector<Sequence> filler_data = tile_windows(corpus_a, 255);
  const auto more = tile_windows(corpus_b, 255);
  filler_data.insert(filler_data.end(), more.begin(), more.end());
  const ModelHandle filler(ModelRole::perturbation,
                           std::make_shared<NgramLm>(fit_ngram(filler_data, {spec.filler_order, 0.5, kVocabSize, 256})));
  const Detector detector{after, after, hlp};
  const std::size_t n = spec.humanize_texts;
  std::vector<IterationTrace> traces(n);
  parallel_for(n, spec.threads, [&](std::size_t i) {
    HumanizeConfig hc = spec.humanize;
    hc.seed = Rng::derive_seed(Rng::derive_seed(seed, 8), i);
    hc.threads = 1;
    traces[i] = humanize(pairs.heldout[i].machine, after, filler, detector, hc);
  });
  out.humanize_texts = n;
  for (const auto& t : traces) {
    for (std::size_t k = 1; k < t.steps.size(); ++k) {
      if (t.steps[k].scorer_logprob < t.steps[k - 1].scorer_logprob) {
        ++out.humanize_monotone_violations;
        break;
      }
    }
  }
  const std::vector<double> human_scores(out.post_scores.negatives.begin(), out.post_scores.negatives.end());
  for (int it = 0; it <= spec.humanize.iterations; ++it) {
    ScoredSet s;
    s.negatives = human_scores;
    for (const auto& t : traces) s.positives.push_back(t.steps[static_cast<std::size_t>(it)].detection_score);
    out.humanize_auroc.push_back(auroc(s));
    out.humanize_mean_score.push_back(detail::mean(s.positives));
  }
  return out;
}

inline SyntheticReport run_synthetic_experiment(const SyntheticExperimentSpec& spec,
                                                const std::filesystem::path& data_root) {
  spec.validate();
  const std::string corpus_a = detail::read_text_file(detail::resolve(data_root, spec.generator_a.corpus));
  const std::string corpus_b = detail::read_text_file(detail::resolve(data_root, spec.generator_b.corpus));
  SyntheticReport report;
  report.spec = spec;
  for (std::uint64_t seed : spec.seeds) report.seeds.push_back(run_synthetic_seed(spec, corpus_a, corpus_b, seed));
  const auto collect = [&](auto field) {
    std::vector<double> v;
    for (const auto& o : report.seeds) v.push_back(field(o));
    return ci_report(spec.seeds, v);
  };
  report.pre_auroc = collect([](const SeedOutcome& o) { return o.pre_auroc; });
  report.post_auroc = collect([](const SeedOutcome& o) { return o.post_auroc; });
  report.post_margin = collect([](const SeedOutcome& o) { return o.post_margin; });
  report.humanize_first = collect([](const SeedOutcome& o) { return o.humanize_auroc.front(); });
  report.humanize_last = collect([](const SeedOutcome& o) { return o.humanize_auroc.back(); });
  return report;
}

inline nlohmann::json to_json(const SeedOutcome& o) {
  return {{"seed", o.seed},
          {"pre_margin", o.pre_margin},
          {"post_margin", o.post_margin},
          {"pre_auroc", o.pre_auroc},
          {"post_auroc", o.post_auroc},
          {"humanize_auroc", o.humanize_auroc},
          {"humanize_mean_score", o.humanize_mean_score},
          {"humanize_texts", o.humanize_texts},
          {"humanize_monotone_violations", o.humanize_monotone_violations},
          {"final_pretrain_nll", o.final_pretrain_nll},
          {"final_train_margin", o.final_train_margin}};
}

inline nlohmann::json to_json(const SyntheticReport& r) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& o : r.seeds) seeds.push_back(to_json(o));
  return {{"spec", to_json(r.spec)},
          {"seeds", seeds},
          {"pre_auroc", to_json(r.pre_auroc)},
          {"post_auroc", to_json(r.post_auroc)},
          {"post_margin", to_json(r.post_margin)},
          {"humanize_auroc_first", to_json(r.humanize_first)},
          {"humanize_auroc_last", to_json(r.humanize_last)}};
}

}  // namespace hlpd
