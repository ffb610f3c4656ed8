#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"([run]
seed = 13
[task]
domains = 3
[synth]
images_per_prompt = 4
[filter]
prototype_count = 8
[grid]
size = 68
bias_levels = 17
[bound]
trials = 4
sigma_draws = 32
n = 4
m = 10
[scale]
ladder = 2,4
seeds = 1
images_per_domain = 8
[variance]
repeats = 2
[datafree]
offsets = 0,0.5
seeds = 1
domains = 2
images_per_domain = 8
)";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("domex-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    std::ofstream(root_ / "run.ini") << kSmallConfig;
  }
  void TearDown() override { fs::remove_all(root_); }

  // Runs the CLI and returns its exit status.
  int run(const std::string& args, const std::string& out = "out") {
    const std::string cmd = std::string(DOMEX_BIN) + " " + args + " --config " +
                            (root_ / "run.ini").string() + " --out " + (root_ / out).string() +
                            " > " + (root_ / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const fs::path& p) {
    std::ifstream in(root_ / p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void full_chain(const std::string& out) {
    for (const char* cmd : {"extrapolate", "prompt", "synthesize", "filter", "train"}) {
      ASSERT_EQ(run(cmd, out), 0) << cmd << "\n" << read("log.txt");
    }
  }

  fs::path root_;
};

TEST_F(CliTest, FullChainProducesArtifacts) {
  full_chain("out");
  for (const char* f : {"domain_knowledge.json", "exchanges.jsonl", "prompt_set.json",
                        "manifest.jsonl", "manifest.filtered.jsonl", "retention.csv",
                        "hypothesis.json", "curves.csv", "train_report.json"}) {
    EXPECT_TRUE(fs::exists(root_ / "out" / f)) << f;
  }
  const auto manifest = read("out/manifest.jsonl");
  const auto header = nlohmann::json::parse(manifest.substr(0, manifest.find('\n')));
  EXPECT_EQ(header.at("created_at"), "1970-01-01T00:00:00Z");
  EXPECT_EQ(header.at("config_digest").get<std::string>().size(), 64u);
  const auto prompts = nlohmann::json::parse(read("out/prompt_set.json"));
  EXPECT_EQ(prompts.at("items").size(), 2u * 3u);
}

TEST_F(CliTest, RerunIsByteIdentical) {
  full_chain("a");
  full_chain("b");
  for (const char* f : {"domain_knowledge.json", "prompt_set.json", "manifest.jsonl",
                        "manifest.filtered.jsonl", "retention.csv", "hypothesis.json",
                        "curves.csv", "train_report.json"}) {
    EXPECT_EQ(read(fs::path("a") / f), read(fs::path("b") / f)) << f;
  }
}

TEST_F(CliTest, FilterBeforeSynthesizeIsMissingPrerequisite) {
  EXPECT_EQ(run("filter"), 3);
  EXPECT_NE(read("log.txt").find("manifest.jsonl"), std::string::npos);
}

TEST_F(CliTest, OverwriteNeedsForce) {
  ASSERT_EQ(run("extrapolate"), 0);
  const auto first = read("out/domain_knowledge.json");
  EXPECT_EQ(run("extrapolate"), 1);
  EXPECT_EQ(run("extrapolate --force"), 0);
  EXPECT_EQ(read("out/domain_knowledge.json"), first);
}

TEST_F(CliTest, BadConfigIsExitTwo) {
  std::ofstream(root_ / "run.ini") << "[meta]\nflavour = 1\n";
  EXPECT_EQ(run("extrapolate"), 2);
}

TEST_F(CliTest, UnknownSubcommandIsUsageError) { EXPECT_EQ(run("fly"), 1); }

TEST_F(CliTest, SynthesizeResumeCompletesManifest) {
  ASSERT_EQ(run("extrapolate"), 0);
  ASSERT_EQ(run("prompt"), 0);
  ASSERT_EQ(run("synthesize"), 0);
  const auto full = read("out/manifest.jsonl");
  // Drop the last two entries, as if the run had been interrupted.
  std::string cut = full.substr(0, full.size() - 1);
  for (int i = 0; i < 2; ++i) cut = cut.substr(0, cut.rfind('\n'));
  std::ofstream(root_ / "out/manifest.jsonl", std::ios::trunc) << cut << "\n";
  ASSERT_EQ(run("synthesize --resume"), 0) << read("log.txt");
  EXPECT_EQ(read("out/manifest.jsonl"), full);
}

TEST_F(CliTest, SeedFlagChangesOutputs) {
  ASSERT_EQ(run("extrapolate --seed 1", "s1"), 0);
  ASSERT_EQ(run("extrapolate --seed 2", "s2"), 0);
  EXPECT_NE(read("s1/domain_knowledge.json"), read("s2/domain_knowledge.json"));
}

TEST_F(CliTest, StageSeedOnlyAffectsItsStage) {
  for (const char* cmd : {"extrapolate", "prompt", "synthesize"}) ASSERT_EQ(run(cmd, "a"), 0);
  std::string ini = kSmallConfig;
  ini.replace(ini.find("[synth]\n"), 8, "[synth]\nseed = 77\n");
  std::ofstream(root_ / "run.ini", std::ios::trunc) << ini;
  for (const char* cmd : {"extrapolate", "prompt", "synthesize"}) ASSERT_EQ(run(cmd, "b"), 0);
  EXPECT_EQ(read("a/domain_knowledge.json"), read("b/domain_knowledge.json"));
  EXPECT_EQ(read("a/prompt_set.json"), read("b/prompt_set.json"));
  EXPECT_NE(read("a/manifest.jsonl"), read("b/manifest.jsonl"));
}

TEST_F(CliTest, BoundWritesTrialsAndSummary) {
  ASSERT_EQ(run("bound"), 0) << read("log.txt");
  const auto summary = nlohmann::json::parse(read("out/bound_summary.json"));
  EXPECT_TRUE(summary.contains("violation_rate"));
  const auto csv = read("out/bound_trials.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST_F(CliTest, ScalePlotHasTwoSeries) {
  ASSERT_EQ(run("scale"), 0) << read("log.txt");
  const auto svg = read("out/scale.svg");
  std::size_t series = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) {
    ++series;
  }
  EXPECT_EQ(series, 2u);
  const auto csv = read("out/scale.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "experiment,protocol,arm,seed_index,n_domains,m_per_domain,population_risk,"
            "retention_rate,config_digest");
}

TEST_F(CliTest, VarianceAndDatafreeRun) {
  ASSERT_EQ(run("variance --stage training,synthesis"), 0) << read("log.txt");
  const auto v = nlohmann::json::parse(read("out/variance.json"));
  EXPECT_FALSE(v.dump().empty());
  ASSERT_EQ(run("datafree-eval"), 0) << read("log.txt");
  EXPECT_TRUE(fs::exists(root_ / "out/datafree.csv"));
}

TEST_F(CliTest, HttpBackendRefusedForSimulationCommands) {
  EXPECT_NE(run("scale --backend http"), 0);
}

}  // namespace
