#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "hlpd/endpoint.hpp"
#include "hlpd/hlpo.hpp"
#include "hlpd/jsonl.hpp"
#include "hlpd/parallel.hpp"
#include "hlpd/promptgen.hpp"
#include "hlpd/rng.hpp"
#include "hlpd/tokenizer.hpp"

namespace hlpd {

struct Document {
  std::string id;
  std::string text;
  std::string source_dataset;
  std::string language = "en";

  friend bool operator==(const Document&, const Document&) = default;
};

inline nlohmann::json to_json(const Document& d) {
  return {{"id", d.id}, {"text", d.text}, {"source_dataset", d.source_dataset}, {"language", d.language}};
}

inline Document document_from_json(const nlohmann::json& j) {
  Document d{j.at("id").get<std::string>(), j.at("text").get<std::string>(), j.value("source_dataset", ""),
             j.value("language", "en")};
  if (d.text.find_first_not_of(" \t\r\n") == std::string::npos) throw EmptyText("document " + d.id + " has no text");
  return d;
}

inline const JsonlSchema& document_schema() {
  static const JsonlSchema s{"hlpd.documents", "1.0"};
  return s;
}

inline void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs) {
  std::vector<nlohmann::json> rows;
  for (const auto& d : docs) rows.push_back(to_json(d));
  write_jsonl(path, document_schema(), rows);
}

inline std::vector<Document> read_documents(const std::filesystem::path& path) {
  return decode_jsonl<Document>(read_jsonl(path, document_schema()), document_from_json);
}

enum class RevisionTask { expand, polish, rewrite, generate, adversarial };

inline std::string task_name(RevisionTask t) {
  switch (t) {
    case RevisionTask::expand: return "expand";
    case RevisionTask::polish: return "polish";
    case RevisionTask::rewrite: return "rewrite";
    case RevisionTask::generate: return "generate";
    case RevisionTask::adversarial: return "adversarial";
  }
  return "";
}

inline RevisionTask parse_task(const std::string& s) {
  for (auto t : {RevisionTask::expand, RevisionTask::polish, RevisionTask::rewrite, RevisionTask::generate,
                 RevisionTask::adversarial}) {
    if (task_name(t) == s) return t;
  }
  throw InvalidConfig("unknown revision task '" + s + "'");
}

inline std::vector<RevisionTask> default_tasks() {
  return {RevisionTask::expand, RevisionTask::polish, RevisionTask::rewrite, RevisionTask::generate};
}

// Exchange with the endpoint: the exact wire body and the raw completion.
struct Exchange {
  std::string stage;  // "instruction" or "revision"
  nlohmann::json request;
  std::string response;
  int attempts = 1;

  friend bool operator==(const Exchange&, const Exchange&) = default;
};

struct PairRecord {
  std::string id;
  std::string doc_id;
  std::string source_dataset;
  std::string human_text;
  std::string machine_text;
  std::string task;
  PromptRecord prompt;
  std::string instruction;  // stage-1 output, empty for single-stage tasks
  std::string source_model;
  std::string endpoint_id;
  std::vector<Exchange> exchanges;
  std::string created_at;
  std::string completed_at;
  std::uint64_t run_seed = 0;
  std::uint64_t record_index = 0;
  std::uint64_t record_seed = 0;

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

inline nlohmann::json to_json(const Exchange& e) {
  return {{"stage", e.stage}, {"request", e.request}, {"response", e.response}, {"attempts", e.attempts}};
}

inline nlohmann::json to_json(const PairRecord& r) {
  nlohmann::json exchanges = nlohmann::json::array();
  for (const auto& e : r.exchanges) exchanges.push_back(to_json(e));
  return {{"id", r.id},
          {"doc_id", r.doc_id},
          {"source_dataset", r.source_dataset},
          {"human_text", r.human_text},
          {"machine_text", r.machine_text},
          {"task", r.task},
          {"prompt", to_json(r.prompt)},
          {"instruction", r.instruction},
          {"source_model", r.source_model},
          {"endpoint_id", r.endpoint_id},
          {"exchanges", exchanges},
          {"created_at", r.created_at},
          {"completed_at", r.completed_at},
          {"seed", {{"run", r.run_seed}, {"index", r.record_index}, {"record", r.record_seed}}}};
}

inline PairRecord pair_record_from_json(const nlohmann::json& j) {
  PairRecord r;
  r.id = j.at("id").get<std::string>();
  r.doc_id = j.at("doc_id").get<std::string>();
  r.source_dataset = j.at("source_dataset").get<std::string>();
  r.human_text = j.at("human_text").get<std::string>();
  r.machine_text = j.at("machine_text").get<std::string>();
  r.task = j.at("task").get<std::string>();
  r.prompt = prompt_record_from_json(j.at("prompt"));
  r.instruction = j.at("instruction").get<std::string>();
  r.source_model = j.at("source_model").get<std::string>();
  r.endpoint_id = j.at("endpoint_id").get<std::string>();
  for (const auto& e : j.at("exchanges")) {
    r.exchanges.push_back({e.at("stage").get<std::string>(), e.at("request"), e.at("response").get<std::string>(),
                           e.at("attempts").get<int>()});
  }
  r.created_at = j.at("created_at").get<std::string>();
  r.completed_at = j.at("completed_at").get<std::string>();
  const auto& seed = j.at("seed");
  r.run_seed = seed.at("run").get<std::uint64_t>();
  r.record_index = seed.at("index").get<std::uint64_t>();
  r.record_seed = seed.at("record").get<std::uint64_t>();
  if (r.human_text == r.machine_text) throw DegenerateRevision("record " + r.id + " has identical texts");
  return r;
}

inline const JsonlSchema& corpus_schema() {
  static const JsonlSchema s{"hlpd.corpus", "1.0"};
  return s;
}

inline void write_corpus(const std::filesystem::path& path, const std::vector<PairRecord>& records) {
  std::vector<nlohmann::json> rows;
  for (const auto& r : records) rows.push_back(to_json(r));
  write_jsonl(path, corpus_schema(), rows);
}

inline std::vector<PairRecord> read_corpus(const std::filesystem::path& path) {
  return decode_jsonl<PairRecord>(read_jsonl(path, corpus_schema()), pair_record_from_json);
}

// Human text preferred over its revision, both clipped to the scoring context.
inline std::vector<PreferencePair> preference_pairs(const std::vector<PairRecord>& records, std::size_t context) {
  std::vector<PreferencePair> out;
  for (const auto& r : records) {
    out.push_back({clip_to_context(tokenize(r.human_text), context), clip_to_context(tokenize(r.machine_text), context),
                   r.task, r.source_model});
  }
  return out;
}

// ---- offline mock ----

inline std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    current.push_back(text[i]);
    const bool terminal = text[i] == '.' || text[i] == '!' || text[i] == '?';
    const bool boundary = i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
    if (terminal && boundary) {
      const auto first = current.find_first_not_of(" \t\r\n");
      if (first != std::string::npos) out.push_back(current.substr(first));
      current.clear();
    }
  }
  const auto first = current.find_first_not_of(" \t\r\n");
  if (first != std::string::npos) {
    const auto last = current.find_last_not_of(" \t\r\n");
    out.push_back(current.substr(first, last - first + 1));
  }
  return out;
}

// the <-> a, The <-> A on whole words.
inline std::string swap_determiners(const std::string& text) {
  std::string out;
  out.reserve(text.size() + 16);
  std::size_t i = 0;
  while (i < text.size()) {
    if (!std::isalpha(static_cast<unsigned char>(text[i]))) {
      out.push_back(text[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
    const std::string word = text.substr(i, j - i);
    if (word == "the") out += "a";
    else if (word == "a") out += "the";
    else if (word == "The") out += "A";
    else if (word == "A") out += "The";
    else out += word;
    i = j;
  }
  return out;
}

// Seeded sentence-order shuffle plus determiner swap. Never the identity
// permutation when there are two or more sentences.
inline std::string mock_revise(const std::string& text, std::uint64_t seed) {
  auto sentences = split_sentences(text);
  if (sentences.size() >= 2) {
    std::vector<std::size_t> order(sentences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    bool identity = true;
    for (std::size_t i = 0; i < order.size(); ++i) identity = identity && order[i] == i;
    if (identity) std::rotate(order.begin(), order.begin() + 1, order.end());
    std::vector<std::string> shuffled;
    for (std::size_t i : order) shuffled.push_back(sentences[i]);
    sentences = std::move(shuffled);
  }
  std::string joined;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i) joined += ' ';
    joined += sentences[i];
  }
  return swap_determiners(joined);
}

// Deterministic endpoint driven by request hints; never touches the network.
class MockEndpoint final : public ChatEndpoint {
 public:
  enum class Mode { revise, identity, empty };

  explicit MockEndpoint(Mode mode = Mode::revise, int transient_failures = 0)
      : mode_(mode), transient_failures_(transient_failures) {}

  std::string id() const override { return "mock"; }
  bool is_mock() const override { return true; }

  std::string complete(const ChatRequest& request) override {
    if (calls_++ < transient_failures_) throw EndpointError("mock transient failure", true);
    const auto& h = request.hints;
    if (h.at("stage") == "instruction") return mock_instruction(h.at("kind").get<std::string>(), h.at("params"));
    const std::string source = h.at("source_text").get<std::string>();
    if (mode_ == Mode::identity) return source;
    if (mode_ == Mode::empty) return "";
    const auto seed = h.at("mock_seed").get<std::uint64_t>();
    if (h.at("kind") == "generate") {
      const auto words = split_words(source);
      std::string rest;
      for (std::size_t i = prompts::kGeneratePrefixWords; i < words.size(); ++i) rest += (rest.empty() ? "" : " ") + words[i];
      const std::string prefix = generate_prefix(source);
      return rest.empty() ? prefix + " " + mock_revise(source, seed) : prefix + " " + mock_revise(rest, seed);
    }
    return mock_revise(source, seed);
  }

  int calls() const noexcept { return calls_; }

  static std::string mock_instruction(const std::string& kind, const nlohmann::json& params) {
    if (kind == "adversarial_stage1") {
      return fill_template("{revision_goal} this paragraph in a {style} style, {adversarial}, {additional}, and "
                           "{constraint}.",
                           {{"revision_goal", params.at("revision_goal").get<std::string>()},
                            {"style", params.at("style").get<std::string>()},
                            {"adversarial", params.at("adversarial").get<std::string>()},
                            {"additional", params.at("additional").get<std::string>()},
                            {"constraint", params.at("constraint").get<std::string>()}});
    }
    return fill_template("Polish this paragraph in a {style} style.", {{"style", params.at("style").get<std::string>()}});
  }

 private:
  Mode mode_;
  int transient_failures_;
  std::atomic<int> calls_{0};
};

// ---- pipeline ----

using Clock = std::function<std::string()>;

inline Clock fixed_clock(std::string stamp = "1970-01-01T00:00:00Z") {
  return [stamp] { return stamp; };
}

inline Clock utc_clock() {
  return [] {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return std::string(buf);
  };
}

struct BuildOptions {
  std::vector<RevisionTask> tasks = default_tasks();
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  std::string model;  // model id sent on the wire; endpoint default when empty
  RetryPolicy retry;
  Sleeper sleep = real_sleeper();
  Clock clock = fixed_clock();
};

struct FailedRecord {
  std::uint64_t index = 0;
  std::string doc_id;
  std::string task;
  std::string error;
  std::string message;

  friend bool operator==(const FailedRecord&, const FailedRecord&) = default;
};

struct DatasetManifest {
  std::string schema = "hlpd.manifest";
  std::string version = "1.0";
  std::uint64_t run_seed = 0;
  bool mock = false;
  std::string endpoint_id;
  std::string source_model;
  std::vector<std::string> tasks;
  std::vector<std::string> doc_ids;
  std::vector<std::string> assignments;
  std::map<std::string, std::size_t> task_counts;
  std::size_t n_records = 0;
  std::vector<FailedRecord> failures;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : m.failures) {
    failures.push_back(
        {{"index", f.index}, {"doc_id", f.doc_id}, {"task", f.task}, {"error", f.error}, {"message", f.message}});
  }
  return {{"schema", m.schema},         {"version", m.version},         {"run_seed", m.run_seed},
          {"mock", m.mock},             {"endpoint_id", m.endpoint_id}, {"source_model", m.source_model},
          {"tasks", m.tasks},           {"doc_ids", m.doc_ids},         {"assignments", m.assignments},
          {"task_counts", m.task_counts}, {"n_records", m.n_records},   {"failures", failures}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.schema = j.at("schema").get<std::string>();
  m.version = j.at("version").get<std::string>();
  if (m.schema != "hlpd.manifest" || detail::major_of(m.version) != "1") {
    throw SchemaMismatch("unsupported manifest " + m.schema + " " + m.version);
  }
  m.run_seed = j.at("run_seed").get<std::uint64_t>();
  m.mock = j.at("mock").get<bool>();
  m.endpoint_id = j.at("endpoint_id").get<std::string>();
  m.source_model = j.at("source_model").get<std::string>();
  m.tasks = j.at("tasks").get<std::vector<std::string>>();
  m.doc_ids = j.at("doc_ids").get<std::vector<std::string>>();
  m.assignments = j.at("assignments").get<std::vector<std::string>>();
  m.task_counts = j.at("task_counts").get<std::map<std::string, std::size_t>>();
  m.n_records = j.at("n_records").get<std::size_t>();
  for (const auto& f : j.at("failures")) {
    m.failures.push_back({f.at("index").get<std::uint64_t>(), f.at("doc_id").get<std::string>(),
                          f.at("task").get<std::string>(), f.at("error").get<std::string>(),
                          f.at("message").get<std::string>()});
  }
  return m;
}

// One task per document, uniform over `tasks`.
inline std::vector<RevisionTask> assign_tasks(std::size_t n, const std::vector<RevisionTask>& tasks,
                                              std::uint64_t seed) {
  if (tasks.empty()) throw InvalidConfig("at least one revision task is required");
  Rng rng(Rng::derive_seed(seed, 0));
  std::vector<RevisionTask> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(tasks[static_cast<std::size_t>(rng.below(tasks.size()))]);
  return out;
}

inline std::uint64_t record_seed(std::uint64_t run_seed, std::uint64_t index) {
  return Rng::derive_seed(run_seed, index + 1);
}

// Prompt for a (document, task) pair, with parameters drawn from the record seed.
inline PromptRecord prompt_for(const Document& doc, RevisionTask task, std::uint64_t seed) {
  Rng rng(seed);
  PromptRecord p;
  p.id = doc.id + ":" + task_name(task);
  p.seed = seed;
  switch (task) {
    case RevisionTask::adversarial: {
      const auto dims = sample_dimensions(rng);
      p.kind = PromptKind::adversarial_stage1;
      p.params = to_json(dims);
      break;
    }
    case RevisionTask::polish: {
      const auto sp = sample_single_task_params(PromptKind::polish, rng);
      p.kind = PromptKind::polish;
      p.params = {{"style", sp.style}, {"word_len", sp.word_len}};
      break;
    }
    case RevisionTask::expand: {
      const auto sp = sample_single_task_params(PromptKind::expand, rng);
      p.kind = PromptKind::expand;
      p.params = {{"style", sp.style}};
      break;
    }
    case RevisionTask::rewrite:
      p.kind = PromptKind::rewrite;
      p.params = nlohmann::json::object();
      break;
    case RevisionTask::generate:
      p.kind = PromptKind::generate;
      p.params = nlohmann::json::object();
      break;
  }
  p.text = render_record(p.kind, p.params, doc.text);
  return p;
}

inline bool two_stage(PromptKind kind) { return kind == PromptKind::adversarial_stage1 || kind == PromptKind::polish; }

inline ChatRequest instruction_request(const PromptRecord& prompt, const std::string& model) {
  return {model,
          {{"user", prompt.text}},
          {{"stage", "instruction"}, {"kind", prompt_kind_name(prompt.kind)}, {"params", prompt.params}}};
}

inline ChatRequest revision_request(const PromptRecord& prompt, const std::string& instruction, const Document& doc,
                                    const std::string& model, std::uint64_t seed) {
  const std::string content = two_stage(prompt.kind) ? instruction + "\n\n" + doc.text : prompt.text;
  return {model,
          {{"user", content}},
          {{"stage", "revision"},
           {"kind", prompt_kind_name(prompt.kind)},
           {"source_text", doc.text},
           {"mock_seed", Rng::derive_seed(seed, 7)}}};
}

struct BuildResult {
  std::vector<PairRecord> records;
  DatasetManifest manifest;
};

// Stage 1 (instruction) where the task has one, then stage 2 (revision).
// Endpoint and content failures fail the record, not the run.
inline BuildResult build_training_set(const std::vector<Document>& docs, ChatEndpoint& endpoint,
                                      const BuildOptions& options) {
  if (docs.empty()) throw EmptyCorpus("no documents to revise");
  const auto tasks = assign_tasks(docs.size(), options.tasks, options.seed);
  const std::string model = options.model.empty() ? endpoint.id() : options.model;

  std::vector<std::optional<PairRecord>> built(docs.size());
  std::vector<std::optional<FailedRecord>> failed(docs.size());
  std::mutex clock_mutex;
  const auto now = [&] {
    std::lock_guard lock(clock_mutex);
    return options.clock();
  };

  parallel_for(docs.size(), options.threads, [&](std::size_t i) {
    const Document& doc = docs[i];
    const RevisionTask task = tasks[i];
    const std::uint64_t seed = record_seed(options.seed, i);
    try {
      PairRecord r;
      r.created_at = now();
      r.prompt = prompt_for(doc, task, seed);
      if (two_stage(r.prompt.kind)) {
        const ChatRequest req = instruction_request(r.prompt, model);
        int attempts = 0;
        r.instruction = complete_with_retry(endpoint, req, options.retry, options.sleep, &attempts);
        if (r.instruction.empty()) throw EmptyCompletion("empty stage-1 instruction");
        r.exchanges.push_back({"instruction", wire_body(req), r.instruction, attempts});
      }
      const ChatRequest req = revision_request(r.prompt, r.instruction, doc, model, seed);
      int attempts = 0;
      r.machine_text = complete_with_retry(endpoint, req, options.retry, options.sleep, &attempts);
      r.exchanges.push_back({"revision", wire_body(req), r.machine_text, attempts});
      if (r.machine_text.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw DegenerateRevision("empty revision for " + doc.id);
      }
      if (r.machine_text == doc.text) throw DegenerateRevision("revision identical to input for " + doc.id);
      char id[32];
      std::snprintf(id, sizeof id, "r%06zu", i);
      r.id = id;
      r.doc_id = doc.id;
      r.source_dataset = doc.source_dataset;
      r.human_text = doc.text;
      r.task = task_name(task);
      r.source_model = model;
      r.endpoint_id = endpoint.id();
      r.completed_at = now();
      r.run_seed = options.seed;
      r.record_index = i;
      r.record_seed = seed;
      built[i] = std::move(r);
    } catch (const Error& e) {
      failed[i] = FailedRecord{i, doc.id, task_name(task), e.code(), e.what()};
    }
  });

  BuildResult out;
  auto& m = out.manifest;
  m.run_seed = options.seed;
  m.mock = endpoint.is_mock();
  m.endpoint_id = endpoint.id();
  m.source_model = model;
  for (auto t : options.tasks) m.tasks.push_back(task_name(t));
  for (std::size_t i = 0; i < docs.size(); ++i) {
    m.doc_ids.push_back(docs[i].id);
    m.assignments.push_back(task_name(tasks[i]));
    m.task_counts[task_name(tasks[i])] += 1;
    if (built[i]) out.records.push_back(std::move(*built[i]));
    if (failed[i]) m.failures.push_back(*failed[i]);
  }
  m.n_records = out.records.size();
  return out;
}

}  // namespace hlpd
