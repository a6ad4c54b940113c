#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hlpd/checkpoint.hpp"
#include "hlpd/corpus.hpp"
#include "hlpd/curvature.hpp"
#include "hlpd/endpoint.hpp"
#include "hlpd/evalkit.hpp"
#include "hlpd/hlpo.hpp"
#include "hlpd/humanizer.hpp"
#include "hlpd/jsonl.hpp"
#include "hlpd/lm_train.hpp"
#include "hlpd/promptgen.hpp"
#include "hlpd/synthetic.hpp"
#include "hlpd/transformer.hpp"
#include "json.hpp"

namespace hlpd::cli {

using nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kEndpoint = 3 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return kUsage;
    case ErrorKind::data: return kData;
    case ErrorKind::endpoint: return kEndpoint;
  }
  return kData;
}

// Everything a command needs from the outside world.
struct Env {
  Transport transport;  // real HTTP; unused in mock mode
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
  std::filesystem::path default_data_dir = "data";
};

// ---- effective run configuration ----

// Flag defaults, overlaid by the --config file, overlaid by flags given on the
// command line.
class Bindings {
 public:
  template <class T>
  CLI::Option* option(CLI::App* app, const std::string& flags, const std::string& key, T& var,
                      const std::string& help) {
    CLI::Option* opt = app->add_option(flags, var, help);
    add(app, opt, key, [&var] { return json(var); });
    return opt;
  }

  CLI::Option* flag(CLI::App* app, const std::string& flags, const std::string& key, bool& var,
                    const std::string& help) {
    CLI::Option* opt = app->add_flag(flags, var, help);
    add(app, opt, key, [&var] { return json(var); });
    return opt;
  }

  json defaults(const CLI::App* app) const { return collect(app, false); }
  json explicit_flags(const CLI::App* app) const { return collect(app, true); }

 private:
  struct Bound {
    const CLI::App* owner;
    CLI::Option* opt;
    std::string key;
    json initial;
    std::function<json()> current;
  };

  void add(const CLI::App* owner, CLI::Option* opt, const std::string& key, std::function<json()> current) {
    bound_.push_back({owner, opt, key, current(), std::move(current)});
  }

  json collect(const CLI::App* app, bool only_given) const {
    json out = json::object();
    for (const auto& b : bound_) {
      if (b.owner != app && b.owner->get_parent() != nullptr) continue;
      if (only_given && b.opt->count() == 0) continue;
      out[json::json_pointer(b.key)] = only_given ? b.current() : b.initial;
    }
    return out;
  }

  std::vector<Bound> bound_;
};

template <class T>
T cfg_get(const json& cfg, const std::string& pointer) {
  try {
    return cfg.at(json::json_pointer(pointer)).get<T>();
  } catch (const json::exception& e) {
    throw InvalidConfig("run config " + pointer + ": " + e.what());
  }
}

inline std::string cfg_path(const json& cfg, const std::string& pointer) { return cfg_get<std::string>(cfg, pointer); }

inline std::string require_path(const json& cfg, const std::string& pointer, const std::string& flag) {
  const std::string p = cfg_path(cfg, pointer);
  if (p.empty()) throw InvalidConfig(flag + " is required");
  return p;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidConfig(path.string() + ": " + e.what());
  }
}

inline std::filesystem::path runconfig_path(const std::string& out) { return out + ".runconfig.json"; }

inline void archive(const json& cfg, const std::string& out) { write_text(runconfig_path(out), dump_json(cfg, 2) + "\n"); }

inline std::shared_ptr<LanguageModel> load_model(const std::string& path) { return load_checkpoint(path).model; }

inline Sequence clipped(const std::string& text, const LanguageModel& model) {
  return clip_to_context(tokenize(text), static_cast<std::size_t>(model.context_window()));
}

// Texts to score: plain documents, or both sides of a revision corpus with
// their class labels.
struct LabeledText {
  std::string id;
  std::string text;
  std::string cls;  // "human", "machine" or "" when unknown
};

inline std::vector<LabeledText> load_texts(const json& cfg, bool machine_only = false) {
  const std::string docs = cfg_path(cfg, "/paths/docs");
  const std::string corpus = cfg_path(cfg, "/paths/corpus");
  if (docs.empty() == corpus.empty()) throw InvalidConfig("give exactly one of --docs and --corpus");
  std::vector<LabeledText> out;
  if (!docs.empty()) {
    for (auto& d : read_documents(docs)) out.push_back({d.id, std::move(d.text), ""});
  } else {
    for (auto& r : read_corpus(corpus)) {
      if (!machine_only) out.push_back({r.id + ":human", r.human_text, "human"});
      out.push_back({r.id + ":machine", r.machine_text, "machine"});
    }
  }
  if (out.empty()) throw EmptyCorpus("no texts in " + (docs.empty() ? corpus : docs));
  return out;
}

// ---- commands; each takes the effective run config ----

inline void cmd_pretrain(const json& cfg, Env& env) {
  const auto corpora = cfg_get<std::vector<std::string>>(cfg, "/paths/corpus");
  if (corpora.empty()) throw InvalidConfig("--corpus is required");
  const std::string out = require_path(cfg, "/paths/out", "--out");
  const auto seed = cfg_get<std::uint64_t>(cfg, "/seed");
  const std::string backend = cfg_get<std::string>(cfg, "/model/backend");
  const int context = cfg_get<int>(cfg, "/model/context");

  std::vector<std::string> texts;
  for (const auto& p : corpora) texts.push_back(read_text(p));
  const json lineage{{"subcommand", "pretrain"}, {"seed", seed}, {"corpus", corpora}};

  if (backend == "ngram") {
    std::vector<Sequence> data;
    for (const auto& t : texts) {
      auto w = tile_windows(t, static_cast<std::size_t>(context - 1));
      data.insert(data.end(), w.begin(), w.end());
    }
    if (data.empty()) throw EmptyCorpus("corpora are shorter than one window");
    const NgramLm model = fit_ngram(data, {cfg_get<int>(cfg, "/model/order"),
                                           cfg_get<double>(cfg, "/model/concentration"), kVocabSize, context});
    save_checkpoint(model, out, lineage);
  } else if (backend == "transformer") {
    TransformerConfig tc;
    tc.layers = cfg_get<int>(cfg, "/model/layers");
    tc.width = cfg_get<int>(cfg, "/model/width");
    tc.heads = cfg_get<int>(cfg, "/model/heads");
    tc.context = context;
    tc.validate();
    const auto window = cfg_get<std::size_t>(cfg, "/pretrain/window_tokens");
    if (window + 1 > static_cast<std::size_t>(context)) throw InvalidConfig("--window-tokens exceeds the context");
    const auto count = cfg_get<std::size_t>(cfg, "/pretrain/windows");
    Rng rng = Rng(seed).fork(1);
    std::vector<Sequence> data;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const std::size_t share = count / texts.size() + (i < count % texts.size() ? 1 : 0);
      auto w = text_windows(texts[i], window, share, rng);
      data.insert(data.end(), w.begin(), w.end());
    }
    const ModelHandle handle = ModelHandle::scoring(std::make_shared<TransformerLm>(tc, Rng::derive_seed(seed, 2)));
    PretrainConfig pc{cfg_get<int>(cfg, "/pretrain/steps"), cfg_get<int>(cfg, "/pretrain/batch_size"),
                      cfg_get<double>(cfg, "/pretrain/learning_rate"), Rng::derive_seed(seed, 3)};
    const auto trace = pretrain_mle(handle, data, pc);
    if (!trace.empty()) *env.err << "pretrain: final nll/token " << trace.back().mean_nll << "\n";
    save_checkpoint(handle.model(), out, lineage);
  } else {
    throw InvalidConfig("unknown backend '" + backend + "'");
  }
  *env.out << "wrote " << out << "\n";
}

inline void cmd_train(const json& cfg, Env& env) {
  const std::string corpus = require_path(cfg, "/paths/corpus", "--corpus");
  const std::string init = require_path(cfg, "/paths/init", "--init");
  const std::string out = require_path(cfg, "/paths/out", "--out");
  std::string trace_path = cfg_path(cfg, "/paths/trace");
  if (trace_path.empty()) trace_path = out + ".trace.jsonl";

  TrainerConfig tc;
  tc.learning_rate = cfg_get<double>(cfg, "/trainer/learning_rate");
  tc.epochs = cfg_get<int>(cfg, "/trainer/epochs");
  tc.batch_size = cfg_get<std::size_t>(cfg, "/trainer/batch_size");
  tc.loss_variant = parse_loss_variant(cfg_get<std::string>(cfg, "/trainer/loss_variant"));
  tc.dynamic_beta = cfg_get<bool>(cfg, "/trainer/dynamic_beta");
  tc.fixed_beta = cfg_get<double>(cfg, "/trainer/fixed_beta");
  tc.margin.r_max = cfg_get<double>(cfg, "/trainer/r_max");
  tc.margin.per_token_mean = cfg_get<bool>(cfg, "/trainer/per_token_mean");
  tc.seed = cfg_get<std::uint64_t>(cfg, "/seed");

  const auto records = read_corpus(corpus);
  if (records.empty()) throw EmptyCorpus("no records in " + corpus);
  const Checkpoint ck = load_checkpoint(init);
  const ModelHandle scoring = ModelHandle::scoring(ck.model);
  const auto pairs = preference_pairs(records, static_cast<std::size_t>(ck.model->context_window()));
  const TrainResult result = train(pairs, scoring, tc);

  save_checkpoint(result.scoring.model(), out,
                  {{"subcommand", "train"}, {"seed", tc.seed}, {"init", init}, {"parent", ck.lineage},
                   {"loss_variant", loss_variant_name(tc.loss_variant)}});
  std::vector<json> rows;
  for (const auto& r : result.trace) rows.push_back(to_json(r));
  write_jsonl(trace_path, {"hlpd.trace", "1.0"}, rows);
  *env.out << "wrote " << out << " and " << trace_path << " (" << result.trace.size() << " steps, "
           << loss_variant_name(tc.loss_variant) << " loss)\n";
}

inline DetectorConfig detector_from(const json& cfg) {
  DetectorConfig d;
  d.epsilon = cfg_get<double>(cfg, "/detector/epsilon");
  d.estimator = parse_estimator(cfg_get<std::string>(cfg, "/detector/estimator"));
  d.mc_samples = cfg_get<std::size_t>(cfg, "/detector/mc_samples");
  d.sigma_floor = cfg_get<double>(cfg, "/detector/sigma_floor");
  d.sign = parse_sign(cfg_get<std::string>(cfg, "/detector/sign"));
  d.seed = cfg_get<std::uint64_t>(cfg, "/seed");
  d.validate();
  return d;
}

inline const JsonlSchema& score_schema() {
  static const JsonlSchema s{"hlpd.scores", "1.0"};
  return s;
}

inline void cmd_detect(const json& cfg, Env& env) {
  const std::string out = require_path(cfg, "/paths/out", "--out");
  const std::string scoring_path = require_path(cfg, "/paths/scoring", "--scoring");
  std::string perturb_path = cfg_path(cfg, "/paths/perturb");
  if (perturb_path.empty()) perturb_path = scoring_path;
  const DetectorConfig det = detector_from(cfg);
  const bool baselines = cfg_get<bool>(cfg, "/detector/baselines");
  const auto threads = cfg_get<std::size_t>(cfg, "/threads");

  const ModelHandle scoring(ModelRole::scoring, load_model(scoring_path));
  const ModelHandle perturb(ModelRole::perturbation, load_model(perturb_path));
  const auto texts = load_texts(cfg);
  std::vector<json> rows(texts.size());
  parallel_for(texts.size(), threads, [&](std::size_t i) {
    const Sequence x = clipped(texts[i].text, scoring.model());
    DetectorConfig c = det;
    c.seed = Rng::derive_seed(det.seed, i);
    const DetectionDecision dec = decide(x, scoring, perturb, c);
    json row{{"id", texts[i].id},
             {"d", dec.curvature.d},
             {"score", dec.score},
             {"label", dec.label},
             {"degenerate", dec.curvature.degenerate},
             {"estimator", estimator_name(c.estimator)},
             {"sign", sign_name(c.sign)},
             {"n_positions", dec.curvature.stats.n_positions}};
    if (!texts[i].cls.empty()) row["class"] = texts[i].cls;
    if (baselines) row["baselines"] = to_json(baseline_scores(x, scoring));
    rows[i] = std::move(row);
  });
  write_jsonl(out, score_schema(), rows);
  *env.out << "scored " << rows.size() << " texts into " << out << "\n";
}

inline ScoredSet scored_set_from(const std::string& path) {
  ScoredSet s;
  for (const auto& row : read_jsonl(path, score_schema())) {
    if (!row.contains("class")) {
      throw MalformedLine(row.at("__line").get<std::size_t>(), "score row has no class label; detect with --corpus");
    }
    const double score = row.at("score").get<double>();
    (row.at("class") == "machine" ? s.positives : s.negatives).push_back(score);
  }
  return s;
}

inline void print_summary(std::ostream& out, const std::vector<std::pair<std::string, CiReport>>& rows) {
  out << std::left << std::setw(24) << "metric" << std::right << std::setw(10) << "mean" << std::setw(10) << "+/-95%"
      << "  per-seed\n";
  for (const auto& [name, r] : rows) {
    out << std::left << std::setw(24) << name << std::right << std::fixed << std::setprecision(4) << std::setw(10)
        << r.mean << std::setw(10) << r.half_width_95 << " ";
    for (double v : r.per_seed) out << " " << v;
    out << "\n" << std::defaultfloat;
  }
}

inline void write_roc(const std::string& path, const ScoredSet& s) {
  std::ostringstream csv;
  csv << std::setprecision(17);
  write_roc_csv(csv, roc_points(s));
  write_text(path, csv.str());
}

inline void cmd_eval(const json& cfg, Env& env) {
  const std::string out = require_path(cfg, "/paths/out", "--out");
  json report{{"schema", "hlpd.eval"}, {"version", "1.0"}};
  if (cfg_get<bool>(cfg, "/eval/synthetic")) {
    SyntheticExperimentSpec spec;
    const std::string spec_path = cfg_path(cfg, "/paths/spec");
    if (!spec_path.empty()) spec = synthetic_spec_from_json(read_json_file(spec_path), spec);
    spec.seeds = cfg_get<std::vector<std::uint64_t>>(cfg, "/eval/seeds");
    spec.threads = cfg_get<std::size_t>(cfg, "/threads");
    std::string data = cfg_path(cfg, "/paths/data");
    if (data.empty()) data = env.default_data_dir.string();
    const SyntheticReport r = run_synthetic_experiment(spec, data);
    report["synthetic"] = to_json(r);
    for (const auto& o : r.seeds) {
      write_roc(out + ".seed" + std::to_string(o.seed) + ".pre.roc.csv", o.pre_scores);
      write_roc(out + ".seed" + std::to_string(o.seed) + ".post.roc.csv", o.post_scores);
    }
    print_summary(*env.out, {{"auroc_pre_hlpo", r.pre_auroc},
                             {"auroc_post_hlpo", r.post_auroc},
                             {"heldout_margin_post", r.post_margin},
                             {"humanize_auroc_iter0", r.humanize_first},
                             {"humanize_auroc_last", r.humanize_last}});
  } else {
    const auto files = cfg_get<std::vector<std::string>>(cfg, "/paths/scores");
    if (files.empty()) throw InvalidConfig("--scores or --synthetic is required");
    json runs = json::array();
    std::vector<double> values;
    for (std::size_t i = 0; i < files.size(); ++i) {
      const ScoredSet s = scored_set_from(files[i]);
      const auto frac = auroc_fraction(s);
      const auto fit = fit_threshold(s);
      write_roc(out + "." + std::to_string(i) + ".roc.csv", s);
      values.push_back(frac.value());
      runs.push_back({{"scores", files[i]},
                      {"auroc", frac.value()},
                      {"n_machine", s.positives.size()},
                      {"n_human", s.negatives.size()},
                      {"threshold", {{"epsilon", fit.epsilon}, {"youden_j", fit.youden_j}, {"tpr", fit.tpr}, {"fpr", fit.fpr}}}});
      *env.out << files[i] << ": auroc " << frac.value() << "\n";
    }
    report["runs"] = runs;
    const auto seeds = cfg_get<std::vector<std::uint64_t>>(cfg, "/eval/seeds");
    if (files.size() > 1) {
      if (seeds.size() != files.size()) throw InvalidConfig("--seeds must list one seed per scores file");
      const CiReport ci = ci_report(seeds, values);
      report["auroc"] = to_json(ci);
      print_summary(*env.out, {{"auroc", ci}});
    }
  }
  write_text(out, dump_json(report, 2) + "\n");
  *env.out << "wrote " << out << "\n";
}

inline std::unique_ptr<ChatEndpoint> make_endpoint(const json& cfg, Env& env) {
  if (cfg_get<bool>(cfg, "/mock")) return std::make_unique<MockEndpoint>();
  const std::string registry = require_path(cfg, "/paths/registry", "--registry");
  const std::string id = cfg_get<std::string>(cfg, "/endpoint/id");
  const auto entries = load_registry(registry);
  const auto it = entries.find(id);
  if (it == entries.end()) throw InvalidConfig("endpoint '" + id + "' is not in " + registry);
  if (!env.transport) throw EndpointError("no HTTP transport available in this build", false);
  return std::make_unique<HttpChatEndpoint>(it->second, env.transport);
}

inline void cmd_build_dataset(const json& cfg, Env& env) {
  const std::string docs_path = require_path(cfg, "/paths/docs", "--docs");
  const std::string out = require_path(cfg, "/paths/out", "--out");
  std::string manifest_path = cfg_path(cfg, "/paths/manifest");
  if (manifest_path.empty()) manifest_path = out + ".manifest.json";
  const bool mock = cfg_get<bool>(cfg, "/mock");

  BuildOptions options;
  options.seed = cfg_get<std::uint64_t>(cfg, "/seed");
  options.threads = cfg_get<std::size_t>(cfg, "/threads");
  options.model = cfg_get<std::string>(cfg, "/endpoint/model");
  options.tasks.clear();
  for (const auto& t : cfg_get<std::vector<std::string>>(cfg, "/tasks")) options.tasks.push_back(parse_task(t));
  if (options.tasks.empty()) throw InvalidConfig("--tasks needs at least one task");
  options.clock = mock ? fixed_clock() : utc_clock();
  if (mock) options.sleep = [](std::chrono::milliseconds) {};

  const auto docs = read_documents(docs_path);
  auto endpoint = make_endpoint(cfg, env);
  const BuildResult result = build_training_set(docs, *endpoint, options);
  write_corpus(out, result.records);
  write_text(manifest_path, dump_json(to_json(result.manifest), 2) + "\n");
  *env.out << "built " << result.records.size() << " records (" << result.manifest.failures.size()
           << " failed) into " << out << "\n";
  if (result.records.empty() && !result.manifest.failures.empty()) {
    const std::string& code = result.manifest.failures.front().error;
    if (code == "EndpointError" || code == "EmptyCompletion") {
      throw EndpointError("every record failed; first: " + result.manifest.failures.front().message, false);
    }
    throw DegenerateRevision("every record failed; first: " + result.manifest.failures.front().message);
  }
}

inline void cmd_gen_prompts(const json& cfg, Env& env) {
  const std::string out = require_path(cfg, "/paths/out", "--out");
  const auto pool = build_pool(cfg_get<std::size_t>(cfg, "/prompts/size"), cfg_get<std::uint64_t>(cfg, "/seed"));
  write_prompt_pool(out, pool);
  *env.out << "wrote " << pool.size() << " prompts to " << out << "\n";
}

inline std::string side_by_side(const std::string& id, const IterationTrace& trace) {
  std::ostringstream s;
  s << "== " << id << "\n";
  const std::string original = detokenize(trace.steps.front().text);
  for (const auto& step : trace.steps) {
    const std::string text = detokenize(step.text);
    std::string marks(text.size(), ' ');
    for (std::size_t j = 0; j < text.size(); ++j) {
      if (j >= original.size() || original[j] != text[j]) marks[j] = '^';
    }
    s << "[" << step.iteration << "] -d=" << step.detection_score << " logp=" << step.scorer_logprob << "\n";
    s << "    " << text << "\n    " << marks << "\n";
  }
  return s.str();
}

inline void cmd_humanize(const json& cfg, Env& env) {
  const std::string out = require_path(cfg, "/paths/out", "--out");
  const std::string scoring_path = require_path(cfg, "/paths/scoring", "--scoring");
  const std::string filler_path = require_path(cfg, "/paths/perturb", "--perturb");
  std::string detector_perturb = cfg_path(cfg, "/paths/detector_perturb");
  if (detector_perturb.empty()) detector_perturb = scoring_path;

  HumanizeConfig hc;
  hc.candidates_per_iter = cfg_get<std::size_t>(cfg, "/humanize/candidates_per_iter");
  hc.iterations = cfg_get<int>(cfg, "/humanize/iterations");
  hc.rho = cfg_get<double>(cfg, "/humanize/rho");
  hc.span_min = cfg_get<std::size_t>(cfg, "/humanize/span_min");
  hc.span_max = cfg_get<std::size_t>(cfg, "/humanize/span_max");
  hc.temperature = cfg_get<double>(cfg, "/humanize/temperature");
  hc.include_identity = cfg_get<bool>(cfg, "/humanize/include_identity");
  const double drift = cfg_get<double>(cfg, "/humanize/max_drift");
  if (drift >= 0.0) hc.max_drift = drift;
  hc.validate();
  const auto seed = cfg_get<std::uint64_t>(cfg, "/seed");
  const auto threads = cfg_get<std::size_t>(cfg, "/threads");
  const auto limit = cfg_get<std::size_t>(cfg, "/humanize/limit");

  const ModelHandle scoring(ModelRole::scoring, load_model(scoring_path));
  const ModelHandle filler(ModelRole::perturbation, load_model(filler_path));
  const Detector detector{scoring, ModelHandle(ModelRole::perturbation, load_model(detector_perturb)),
                          detector_from(cfg)};
  auto texts = load_texts(cfg, true);
  if (limit > 0 && texts.size() > limit) texts.resize(limit);

  std::vector<IterationTrace> traces(texts.size());
  parallel_for(texts.size(), threads, [&](std::size_t i) {
    HumanizeConfig c = hc;
    c.seed = Rng::derive_seed(seed, i);
    traces[i] = humanize(clipped(texts[i].text, scoring.model()), scoring, filler, detector, c);
  });
  std::vector<json> rows;
  std::string diff;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    json row = to_json(traces[i]);
    row["id"] = texts[i].id;
    row["final_text"] = detokenize(traces[i].steps.back().text);
    rows.push_back(std::move(row));
    diff += side_by_side(texts[i].id, traces[i]);
  }
  write_jsonl(out, {"hlpd.humanize", "1.0"}, rows);
  write_text(out + ".diff.txt", diff);
  *env.out << "humanized " << rows.size() << " texts into " << out << "\n";
}

using Command = std::function<void(const json&, Env&)>;

inline const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table{
      {"pretrain", cmd_pretrain},           {"train", cmd_train},         {"detect", cmd_detect},
      {"eval", cmd_eval},                   {"build-dataset", cmd_build_dataset},
      {"gen-prompts", cmd_gen_prompts},     {"humanize", cmd_humanize}};
  return table;
}

// Runs one command from its effective configuration and archives that
// configuration next to the primary output.
inline void execute(const json& cfg, Env& env) {
  const std::string name = cfg_get<std::string>(cfg, "/subcommand");
  const auto it = commands().find(name);
  if (it == commands().end()) throw InvalidConfig("unknown subcommand '" + name + "'");
  network_forbidden() = cfg_get<bool>(cfg, "/mock");
  it->second(cfg, env);
  archive(cfg, cfg_path(cfg, "/paths/out"));
}

inline json merge(json base, const json& over) {
  base.merge_patch(over);
  return base;
}

inline int run(const std::vector<std::string>& args, Env env) {
  CLI::App app{"Human-language-preference detection toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Bindings b;

  std::uint64_t seed = 42;
  std::size_t threads = 1;
  bool mock = false;
  std::string config_path;
  b.option(&app, "--seed", "/seed", seed, "run seed");
  b.option(&app, "--threads", "/threads", threads, "worker threads");
  b.flag(&app, "--mock", "/mock", mock, "offline mock endpoint; network access is refused");
  app.add_option("--config", config_path, "JSON run config; flags given on the command line win");

  // pretrain
  std::vector<std::string> p_corpus;
  std::string p_out, p_backend = "transformer";
  int p_layers = 2, p_width = 32, p_heads = 2, p_context = 128, p_order = 4, p_steps = 200, p_batch = 8;
  double p_lr = 3e-3, p_conc = 0.5;
  std::size_t p_windows = 2000, p_window_tokens = 64;
  auto* pre = app.add_subcommand("pretrain", "MLE-pretrain a scoring model or fit an n-gram on raw text");
  b.option(pre, "--corpus", "/paths/corpus", p_corpus, "plain-text corpus files");
  b.option(pre, "--out", "/paths/out", p_out, "checkpoint to write");
  b.option(pre, "--backend", "/model/backend", p_backend, "transformer or ngram");
  b.option(pre, "--layers", "/model/layers", p_layers, "transformer layers");
  b.option(pre, "--width", "/model/width", p_width, "transformer width");
  b.option(pre, "--heads", "/model/heads", p_heads, "attention heads");
  b.option(pre, "--context", "/model/context", p_context, "context window in tokens");
  b.option(pre, "--order", "/model/order", p_order, "n-gram order");
  b.option(pre, "--concentration", "/model/concentration", p_conc, "n-gram back-off concentration");
  b.option(pre, "--steps", "/pretrain/steps", p_steps, "optimizer steps");
  b.option(pre, "--batch", "/pretrain/batch_size", p_batch, "sequences per step");
  b.option(pre, "--lr", "/pretrain/learning_rate", p_lr, "Adam learning rate");
  b.option(pre, "--windows", "/pretrain/windows", p_windows, "training windows drawn from the corpora");
  b.option(pre, "--window-tokens", "/pretrain/window_tokens", p_window_tokens, "bytes per window");

  // train
  std::string t_corpus, t_init, t_out, t_trace, t_loss = "linear";
  double t_lr = 1e-4, t_beta = 0.1, t_rmax = 20.0;
  int t_epochs = 2;
  std::size_t t_batch = 8;
  bool t_dynamic = true, t_mean = false;
  auto* tr = app.add_subcommand("train", "HLPO preference training on a revision corpus");
  b.option(tr, "--corpus", "/paths/corpus", t_corpus, "revision corpus (JSONL)");
  b.option(tr, "--init", "/paths/init", t_init, "checkpoint to start from; also the frozen reference");
  b.option(tr, "--out", "/paths/out", t_out, "checkpoint to write");
  b.option(tr, "--trace", "/paths/trace", t_trace, "training trace (default <out>.trace.jsonl)");
  b.option(tr, "--loss", "/trainer/loss_variant", t_loss, "linear or sigmoid");
  b.option(tr, "--lr", "/trainer/learning_rate", t_lr, "Adam learning rate");
  b.option(tr, "--epochs", "/trainer/epochs", t_epochs, "passes over the pairs");
  b.option(tr, "--batch", "/trainer/batch_size", t_batch, "pairs per step");
  b.flag(tr, "--dynamic-beta,!--no-dynamic-beta", "/trainer/dynamic_beta", t_dynamic, "variance-scheduled beta");
  b.option(tr, "--fixed-beta", "/trainer/fixed_beta", t_beta, "beta when the scheduler is off");
  b.option(tr, "--r-max", "/trainer/r_max", t_rmax, "reward margin clip");
  b.flag(tr, "--per-token-mean", "/trainer/per_token_mean", t_mean, "length-normalized sequence scores");

  // detector options shared by detect and humanize
  struct DetectorFlags {
    double epsilon = 0.0, sigma_floor = 1e-8;
    std::string estimator = "analytic", sign = "hlp";
    std::size_t mc_samples = 1000;
  };
  DetectorFlags d_det, h_det;
  const auto add_detector = [&](CLI::App* sub, DetectorFlags& f) {
    b.option(sub, "--epsilon", "/detector/epsilon", f.epsilon, "decision threshold");
    b.option(sub, "--estimator", "/detector/estimator", f.estimator, "analytic or monte_carlo");
    b.option(sub, "--mc-samples", "/detector/mc_samples", f.mc_samples, "Monte-Carlo samples");
    b.option(sub, "--sigma-floor", "/detector/sigma_floor", f.sigma_floor, "degenerate below this sigma");
    b.option(sub, "--sign", "/detector/sign", f.sign, "hlp (-d) or fast_detect (d)");
  };

  // detect
  std::string d_docs, d_corpus, d_scoring, d_perturb, d_out;
  bool d_baselines = true;
  auto* det = app.add_subcommand("detect", "curvature scores and labels per text");
  b.option(det, "--docs", "/paths/docs", d_docs, "documents (JSONL)");
  b.option(det, "--corpus", "/paths/corpus", d_corpus, "revision corpus; scores both sides with class labels");
  b.option(det, "--scoring", "/paths/scoring", d_scoring, "scoring checkpoint");
  b.option(det, "--perturb", "/paths/perturb", d_perturb, "perturbation checkpoint (default: the scoring model)");
  b.option(det, "--out", "/paths/out", d_out, "scores (JSONL)");
  b.flag(det, "--baselines,!--no-baselines", "/detector/baselines", d_baselines, "add zero-shot baseline scores");
  add_detector(det, d_det);

  // eval
  std::vector<std::string> e_scores;
  std::vector<std::uint64_t> e_seeds = default_seeds();
  std::string e_out, e_spec, e_data;
  bool e_synthetic = false;
  auto* ev = app.add_subcommand("eval", "AUROC, ROC curves and seed confidence intervals");
  b.option(ev, "--scores", "/paths/scores", e_scores, "score files from detect --corpus");
  b.option(ev, "--seeds", "/eval/seeds", e_seeds, "one seed per scores file, or the synthetic seeds");
  b.flag(ev, "--synthetic", "/eval/synthetic", e_synthetic, "run the synthetic two-generator experiment");
  b.option(ev, "--spec", "/paths/spec", e_spec, "synthetic experiment spec (JSON)");
  b.option(ev, "--data-dir", "/paths/data", e_data, "where the synthetic corpora live");
  b.option(ev, "--out", "/paths/out", e_out, "report (JSON)");

  // build-dataset
  std::string b_docs, b_out, b_manifest, b_registry, b_endpoint, b_model;
  std::vector<std::string> b_tasks;
  for (auto t : default_tasks()) b_tasks.push_back(task_name(t));
  auto* bd = app.add_subcommand("build-dataset", "revise documents through an endpoint into a pair corpus");
  b.option(bd, "--docs", "/paths/docs", b_docs, "documents (JSONL)");
  b.option(bd, "--out", "/paths/out", b_out, "revision corpus (JSONL)");
  b.option(bd, "--manifest", "/paths/manifest", b_manifest, "manifest (default <out>.manifest.json)");
  b.option(bd, "--tasks", "/tasks", b_tasks, "revision tasks to assign");
  b.option(bd, "--registry", "/paths/registry", b_registry, "endpoint registry (JSON)");
  b.option(bd, "--endpoint", "/endpoint/id", b_endpoint, "registry entry to call");
  b.option(bd, "--model", "/endpoint/model", b_model, "model id sent on the wire");

  // gen-prompts
  std::string g_out;
  std::size_t g_size = kDefaultPoolSize;
  auto* gp = app.add_subcommand("gen-prompts", "sample unique adversarial revision prompts");
  b.option(gp, "--size", "/prompts/size", g_size, "pool size");
  b.option(gp, "--out", "/paths/out", g_out, "prompt pool (JSONL)");

  // humanize
  std::string h_docs, h_corpus, h_scoring, h_perturb, h_det_perturb, h_out;
  std::size_t h_cands = 100, h_span_min = 1, h_span_max = 3, h_limit = 0;
  int h_iters = 4;
  double h_rho = 0.15, h_temp = 1.0, h_drift = -1.0;
  bool h_identity = true;
  auto* hu = app.add_subcommand("humanize", "perturb-select-replace attack on machine texts");
  b.option(hu, "--docs", "/paths/docs", h_docs, "documents to humanize (JSONL)");
  b.option(hu, "--corpus", "/paths/corpus", h_corpus, "revision corpus; humanizes the machine side");
  b.option(hu, "--scoring", "/paths/scoring", h_scoring, "scoring checkpoint that ranks candidates");
  b.option(hu, "--perturb", "/paths/perturb", h_perturb, "mask-filler checkpoint");
  b.option(hu, "--detector-perturb", "/paths/detector_perturb", h_det_perturb,
           "detector perturbation checkpoint (default: the scoring model)");
  b.option(hu, "--out", "/paths/out", h_out, "traces (JSONL); a diff goes to <out>.diff.txt");
  b.option(hu, "--candidates", "/humanize/candidates_per_iter", h_cands, "candidates per iteration");
  b.option(hu, "--iterations", "/humanize/iterations", h_iters, "iterations");
  b.option(hu, "--rho", "/humanize/rho", h_rho, "masked fraction");
  b.option(hu, "--span-min", "/humanize/span_min", h_span_min, "shortest masked span");
  b.option(hu, "--span-max", "/humanize/span_max", h_span_max, "longest masked span");
  b.option(hu, "--temperature", "/humanize/temperature", h_temp, "refill temperature");
  b.flag(hu, "--identity,!--no-identity", "/humanize/include_identity", h_identity, "keep the unmodified text");
  b.option(hu, "--max-drift", "/humanize/max_drift", h_drift, "cap on changed fraction; negative disables");
  b.option(hu, "--limit", "/humanize/limit", h_limit, "humanize at most this many texts (0 = all)");
  add_detector(hu, h_det);

  // replay
  std::string r_path;
  auto* rp = app.add_subcommand("replay", "rerun a command from an archived run config");
  rp->add_option("runconfig", r_path, "<out>.runconfig.json")->required();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    *env.out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    *env.err << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    json cfg;
    if (sub == rp) {
      cfg = read_json_file(r_path);
    } else {
      cfg = b.defaults(sub);
      cfg["subcommand"] = sub->get_name();
      if (!config_path.empty()) {
        const json file = read_json_file(config_path);
        if (file.contains("subcommand") && file["subcommand"] != sub->get_name()) {
          throw InvalidConfig(config_path + " is a run config for '" + file["subcommand"].get<std::string>() + "'");
        }
        cfg = merge(cfg, file);
      }
      cfg = merge(cfg, b.explicit_flags(sub));
    }
    execute(cfg, env);
    return kOk;
  } catch (const Error& e) {
    *env.err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    *env.err << "error: " << e.what() << "\n";
    return kData;
  } catch (const json::exception& e) {
    *env.err << "error: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace hlpd::cli
