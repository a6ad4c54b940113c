#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "hlpd/cli.hpp"

namespace hlpd {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("hlpd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    network_forbidden() = false;
    fs::remove_all(dir_);
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int run(std::vector<std::string> args) {
    out_.str({});
    err_.str({});
    cli::Env env;
    env.transport = transport_;
    env.out = &out_;
    env.err = &err_;
    env.default_data_dir = HLPD_DATA_DIR;
    return cli::run(args, env);
  }

  void write_docs(const std::string& name, std::size_t n) {
    std::vector<Document> docs;
    const std::string base =
        "The river was high after the rain and the dog would not come back when we called. "
        "We stood on the bridge for a while and watched the water carry sticks and leaves past the old mill. "
        "Later the sun came out and the whole valley smelled of wet grass and smoke.";
    for (std::size_t i = 0; i < n; ++i) docs.push_back({"d" + std::to_string(i), base + " Day " + std::to_string(i) + ".", "fixture"});
    write_documents(path(name), docs);
  }

  void small_models() {
    const std::string a = std::string(HLPD_DATA_DIR) + "/corpus_a.txt";
    const std::string b = std::string(HLPD_DATA_DIR) + "/corpus_b.txt";
    ASSERT_EQ(run({"pretrain", "--corpus", a, b, "--width", "16", "--steps", "4", "--windows", "64", "--out",
                   path("s.ckpt")}),
              0)
        << err_.str();
    ASSERT_EQ(run({"pretrain", "--backend", "ngram", "--order", "2", "--corpus", a, "--out", path("f.ckpt")}), 0);
  }

  void mock_corpus(std::size_t n = 6) {
    write_docs("docs.jsonl", n);
    ASSERT_EQ(run({"--mock", "build-dataset", "--docs", path("docs.jsonl"), "--out", path("c.jsonl")}), 0) << err_.str();
  }

  fs::path dir_;
  std::ostringstream out_, err_;
  Transport transport_;
};

TEST_F(CliTest, GenPromptsDefaultPool) {
  ASSERT_EQ(run({"gen-prompts", "--size", "750", "--out", path("p.jsonl")}), 0);
  const auto pool = read_prompt_pool(path("p.jsonl"));
  ASSERT_EQ(pool.size(), 750u);
  std::set<std::string> texts;
  for (const auto& p : pool) texts.insert(p.text);
  EXPECT_EQ(texts.size(), 750u);
  EXPECT_TRUE(fs::exists(path("p.jsonl.runconfig.json")));
  EXPECT_EQ(run({"gen-prompts", "--size", "7426", "--out", path("q.jsonl")}), 1);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"no-such-command"}), 1);
  EXPECT_EQ(run({"gen-prompts", "--size", "many", "--out", path("p.jsonl")}), 1);
  EXPECT_EQ(run({"gen-prompts"}), 1);
  EXPECT_NE(err_.str().find("--out"), std::string::npos);
}

TEST_F(CliTest, MissingCorpusNamesThePath) {
  const std::string missing = path("absent.jsonl");
  EXPECT_EQ(run({"train", "--corpus", missing, "--init", path("s.ckpt"), "--out", path("t.ckpt")}), 2);
  EXPECT_NE(err_.str().find(missing), std::string::npos);
}

TEST_F(CliTest, MockModeNeverTouchesTheNetwork) {
  int calls = 0;
  transport_ = [&](const HttpPost&) {
    ++calls;
    return HttpReply{200, R"({"choices":[{"message":{"content":"x"}}]})", {}};
  };
  write_docs("docs.jsonl", 4);
  {
    std::ofstream reg(path("reg.json"));
    reg << R"({"endpoints":[{"id":"remote","base_url":"http://127.0.0.1:9","token_env":""}]})";
  }
  ASSERT_EQ(run({"--mock", "build-dataset", "--docs", path("docs.jsonl"), "--registry", path("reg.json"), "--endpoint",
                 "remote", "--out", path("c.jsonl")}),
            0)
      << err_.str();
  EXPECT_EQ(calls, 0);
  EXPECT_TRUE(network_forbidden());
  const auto manifest = cli::read_json_file(path("c.jsonl.manifest.json"));
  EXPECT_TRUE(manifest.at("mock").get<bool>());
  EXPECT_EQ(read_corpus(path("c.jsonl")).size(), 4u);
}

TEST_F(CliTest, EndpointRejectionExitsWithEndpointCode) {
  transport_ = [](const HttpPost&) { return HttpReply{401, "unauthorized", {}}; };
  write_docs("docs.jsonl", 2);
  {
    std::ofstream reg(path("reg.json"));
    reg << R"({"endpoints":[{"id":"remote","base_url":"http://127.0.0.1:9","token_env":""}]})";
  }
  EXPECT_EQ(run({"build-dataset", "--docs", path("docs.jsonl"), "--registry", path("reg.json"), "--endpoint", "remote",
                 "--out", path("c.jsonl")}),
            3);
}

TEST_F(CliTest, TrainIsReproducibleAndRecordsVariant) {
  small_models();
  mock_corpus();
  ASSERT_EQ(run({"train", "--corpus", path("c.jsonl"), "--init", path("s.ckpt"), "--out", path("t1.ckpt"), "--loss",
                 "sigmoid", "--epochs", "1"}),
            0)
      << err_.str();
  ASSERT_EQ(run({"train", "--corpus", path("c.jsonl"), "--init", path("s.ckpt"), "--out", path("t2.ckpt"), "--loss",
                 "sigmoid", "--epochs", "1"}),
            0);
  EXPECT_EQ(cli::read_text(path("t1.ckpt")), cli::read_text(path("t2.ckpt")));
  const auto rows = read_jsonl(path("t1.ckpt.trace.jsonl"), {"hlpd.trace", "1.0"});
  ASSERT_FALSE(rows.empty());
  for (const auto& r : rows) EXPECT_EQ(r.at("variant"), "sigmoid");
}

TEST_F(CliTest, DetectRowsAndSignContract) {
  small_models();
  mock_corpus();
  ASSERT_EQ(run({"detect", "--corpus", path("c.jsonl"), "--scoring", path("s.ckpt"), "--out", path("hlp.jsonl")}), 0)
      << err_.str();
  ASSERT_EQ(run({"detect", "--corpus", path("c.jsonl"), "--scoring", path("s.ckpt"), "--sign", "fast_detect", "--out",
                 path("fast.jsonl")}),
            0);
  const auto hlp = read_jsonl(path("hlp.jsonl"), cli::score_schema());
  const auto fast = read_jsonl(path("fast.jsonl"), cli::score_schema());
  ASSERT_EQ(hlp.size(), 12u);
  ASSERT_EQ(fast.size(), hlp.size());
  for (std::size_t i = 0; i < hlp.size(); ++i) {
    EXPECT_EQ(hlp[i].at("id"), fast[i].at("id"));
    EXPECT_DOUBLE_EQ(hlp[i].at("score").get<double>(), -fast[i].at("score").get<double>());
    if (hlp[i].at("d").get<double>() != 0.0) EXPECT_NE(hlp[i].at("label"), fast[i].at("label"));
    EXPECT_TRUE(hlp[i].contains("baselines"));
  }
}

TEST_F(CliTest, DetectEmptyInputIsDataError) {
  small_models();
  write_documents(path("empty.jsonl"), {});
  EXPECT_EQ(run({"detect", "--docs", path("empty.jsonl"), "--scoring", path("s.ckpt"), "--out", path("x.jsonl")}), 2);
  EXPECT_NE(err_.str().find("EmptyCorpus"), std::string::npos);
}

TEST_F(CliTest, EvalReportAndSeedRules) {
  small_models();
  mock_corpus();
  ASSERT_EQ(run({"detect", "--corpus", path("c.jsonl"), "--scoring", path("s.ckpt"), "--out", path("a.jsonl")}), 0);
  ASSERT_EQ(run({"--seed", "7", "detect", "--corpus", path("c.jsonl"), "--scoring", path("s.ckpt"), "--estimator",
                 "monte_carlo", "--mc-samples", "50", "--out", path("b.jsonl")}),
            0);
  ASSERT_EQ(run({"eval", "--scores", path("a.jsonl"), "--out", path("one.json")}), 0) << err_.str();
  const auto one = cli::read_json_file(path("one.json"));
  EXPECT_EQ(one.at("schema"), "hlpd.eval");
  EXPECT_EQ(one.at("version"), "1.0");
  EXPECT_TRUE(fs::exists(path("one.json.0.roc.csv")));

  EXPECT_EQ(run({"eval", "--scores", path("a.jsonl"), path("b.jsonl"), "--seeds", "42", "--out", path("bad.json")}), 1);
  ASSERT_EQ(run({"eval", "--scores", path("a.jsonl"), path("b.jsonl"), "--seeds", "42", "199", "--out", path("two.json")}),
            0)
      << err_.str();
  const auto two = cli::read_json_file(path("two.json"));
  EXPECT_EQ(two.at("auroc").at("seeds"), json({42, 199}));

  const auto cfg = cli::read_json_file(path("one.json.runconfig.json"));
  EXPECT_EQ(cfg.at("eval").at("seeds"), json({42, 199, 410, 2231, 2533}));
}

TEST_F(CliTest, HumanizeZeroIterationsEchoesInput) {
  small_models();
  mock_corpus(3);
  ASSERT_EQ(run({"humanize", "--corpus", path("c.jsonl"), "--scoring", path("s.ckpt"), "--perturb", path("f.ckpt"),
                 "--iterations", "0", "--out", path("h.jsonl")}),
            0)
      << err_.str();
  const auto rows = read_jsonl(path("h.jsonl"), {"hlpd.humanize", "1.0"});
  const auto records = read_corpus(path("c.jsonl"));
  ASSERT_EQ(rows.size(), records.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].at("steps").size(), 1u);
    EXPECT_EQ(rows[i].at("final_text").get<std::string>(), records[i].machine_text.substr(0, 127));
  }
  EXPECT_TRUE(fs::exists(path("h.jsonl.diff.txt")));
}

TEST_F(CliTest, ConfigFileWithFlagOverride) {
  {
    std::ofstream cfg(path("cfg.json"));
    cfg << R"({"seed": 5, "prompts": {"size": 20}, "paths": {"out": ")" << path("p.jsonl") << R"("}})";
  }
  ASSERT_EQ(run({"--config", path("cfg.json"), "gen-prompts", "--size", "30"}), 0) << err_.str();
  EXPECT_EQ(read_prompt_pool(path("p.jsonl")).size(), 30u);
  const auto archived = cli::read_json_file(path("p.jsonl.runconfig.json"));
  EXPECT_EQ(archived.at("seed"), 5);
  EXPECT_EQ(archived.at("prompts").at("size"), 30);
  EXPECT_EQ(archived.at("subcommand"), "gen-prompts");

  std::ofstream(path("wrong.json")) << R"({"subcommand": "train"})";
  EXPECT_EQ(run({"--config", path("wrong.json"), "gen-prompts", "--out", path("q.jsonl")}), 1);
}

TEST_F(CliTest, ReplayReproducesOutput) {
  ASSERT_EQ(run({"--seed", "9", "gen-prompts", "--size", "40", "--out", path("p.jsonl")}), 0);
  const std::string before = cli::read_text(path("p.jsonl"));
  fs::remove(path("p.jsonl"));
  ASSERT_EQ(run({"replay", path("p.jsonl.runconfig.json")}), 0) << err_.str();
  EXPECT_EQ(cli::read_text(path("p.jsonl")), before);
}

}  // namespace
}  // namespace hlpd
