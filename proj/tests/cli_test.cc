/* Copyright 2026 The PipeSim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "pipesim/cli.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace pipesim::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result Invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = RunMain(args, out, err);
  return {code, out.str(), err.str()};
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string FirstLine(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

class CliTest : public testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("pipesim_cli_" + std::string(testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(CliTest, ScheduleWritesCsvAndGantt) {
  Result r = Invoke({"schedule", "--stages", "4", "--mini-batches", "4", "--micro-batches", "2",
                  "--policy", "TiMePReSt", "--out", dir_.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("S0 | 1a 1b 2a 2b 3a 3b 4a 4b", 0), 0u) << r.out;
  EXPECT_EQ(FirstLine(dir_ / "timeline.csv"),
            "stage,start_tick,end_tick,pass,mini_batch,micro_batch");
}

TEST_F(CliTest, ScheduleSingleBatchIsAStaircase) {
  Result r = Invoke({"schedule", "--stages", "2", "--mini-batches", "1", "--micro-batches", "1",
                  "--out", dir_.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string s0, s1;
  std::getline(in, s0);
  std::getline(in, s1);
  // fwd=1, bwd=2, two stages: span 6.
  EXPECT_EQ(s0.substr(0, s0.find_last_not_of(' ') + 1), "S0 | 1a .  .  .  B1 B1");
  EXPECT_EQ(s1.substr(0, s1.find_last_not_of(' ') + 1), "S1 | .  1a B1 B1 .  .");
}

TEST_F(CliTest, RunWritesOneCsvPerCellAndSummary) {
  Result r = Invoke({"run", "--epochs", "2", "--seeds", "1,2,3,4,5", "--mini-batches", "4",
                  "--out", dir_.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  int csv = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "trainruns")) {
    csv += e.path().extension() == ".csv";
    EXPECT_EQ(FirstLine(e.path()),
              "epoch,loss,top1_acc,ticks_elapsed,peak_versions,mean_delta,max_delta");
  }
  EXPECT_EQ(csv, 20);
  EXPECT_EQ(FirstLine(dir_ / "memory.csv"), "policy,stage,peak_live_versions,peak_bytes");

  auto j = nlohmann::json::parse(Slurp(dir_ / "summary.json"));
  EXPECT_EQ(j["config"]["lambda"], 0.5);
  ASSERT_EQ(j["policies"].size(), 4u);
  for (const char* p : {"PipeDream", "TiMePReSt", "V-TiMePReSt", "I-TiMePReSt"}) {
    const auto& e = j["policies"][p];
    EXPECT_TRUE(e.contains("epochs_to_threshold"));
    EXPECT_TRUE(e.contains("ticks_to_threshold"));
    EXPECT_TRUE(e.contains("peak_live_versions"));
    EXPECT_TRUE(e.contains("peak_bytes"));
    EXPECT_EQ(e["per_seed"].size(), 5u);
  }
  const auto cfg = nlohmann::json::parse(Slurp(dir_ / "config.json"));
  EXPECT_EQ(cfg["mini_batches"], 4);
}

TEST_F(CliTest, RerunGivesIdenticalSummary) {
  const std::vector<std::string> a = {"run", "--epochs", "2", "--seeds", "3,4",
                                      "--out", (dir_ / "a").string()};
  const std::vector<std::string> b = {"run", "--epochs", "2", "--seeds", "3,4",
                                      "--out", (dir_ / "b").string()};
  ASSERT_EQ(Invoke(a).code, 0);
  ASSERT_EQ(Invoke(b).code, 0);
  EXPECT_EQ(Slurp(dir_ / "a" / "summary.json"), Slurp(dir_ / "b" / "summary.json"));
}

TEST_F(CliTest, UnknownPolicyIsUsageErrorListingNames) {
  Result r = Invoke({"run", "--policy", "GPipe", "--out", dir_.string()});
  EXPECT_EQ(r.code, 2);
  for (const char* p : {"PipeDream", "TiMePReSt", "V-TiMePReSt", "I-TiMePReSt"}) {
    EXPECT_NE(r.err.find(p), std::string::npos) << r.err;
  }
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(Invoke({}).code, 2);
  EXPECT_EQ(Invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(Invoke({"schedule", "--stages", "x"}).code, 2);
  EXPECT_EQ(Invoke({"schedule", "--stages", "1", "--out", dir_.string()}).code, 2);
  EXPECT_EQ(Invoke({"verify", "--policy", "I-TiMePReSt", "--lambda", "0"}).code, 2);
  EXPECT_EQ(Invoke({"verify", "--config", (dir_ / "missing.json").string()}).code, 2);
  EXPECT_EQ(Invoke({"verify", "--inject-fault", "nonsense"}).code, 2);
  EXPECT_EQ(Invoke({"--help"}).code, 0);
}

TEST_F(CliTest, ConfigFileThenFlags) {
  const fs::path cfg = dir_ / "cfg.json";
  std::ofstream(cfg) << R"({"stages": 3, "mini_batches": 2, "micro_batches": 1,
                           "epochs": 1, "policy": "PipeDream"})";
  Result r = Invoke({"schedule", "--config", cfg.string(), "--mini-batches", "3",
                  "--out", dir_.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  // Three stages from the file, three 1F1B mini-batches from the flag.
  std::istringstream in(Slurp(dir_ / "timeline.csv"));
  std::string line;
  std::getline(in, line);
  int rows = 0, max_stage = 0, max_mini = 0;
  while (std::getline(in, line)) {
    ++rows;
    max_stage = std::max(max_stage, line[0] - '0');
    std::stringstream ss(line);
    std::string f;
    for (int i = 0; i < 5; ++i) std::getline(ss, f, ',');
    max_mini = std::max(max_mini, std::stoi(f));
    EXPECT_EQ(line.back(), ',');  // 1F1B has no micro-batch id
  }
  EXPECT_EQ(rows, 3 * 3 * 2);
  EXPECT_EQ(max_stage, 2);
  EXPECT_EQ(max_mini, 3);

  std::ofstream(cfg) << R"({"stages": 3, "bogus": 1})";
  EXPECT_EQ(Invoke({"schedule", "--config", cfg.string()}).code, 2);
}

TEST_F(CliTest, VerifyPassesAndCatchesInjectedFaults) {
  Result ok = Invoke({"verify"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("PASS memory"), std::string::npos);

  Result overlap = Invoke({"verify", "--inject-fault", "overlap"});
  EXPECT_EQ(overlap.code, 1);
  EXPECT_NE(overlap.out.find("FAIL schedule"), std::string::npos) << overlap.out;

  Result dep = Invoke({"verify", "--inject-fault", "dependency"});
  EXPECT_EQ(dep.code, 1);
  EXPECT_NE(dep.out.find("DependencyViolation"), std::string::npos) << dep.out;
}

TEST_F(CliTest, VerifySweep) {
  Result r = Invoke({"verify", "--sweep"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("S=2 M=4 m=1 schedule"), std::string::npos);
  EXPECT_NE(r.out.find("S=4 M=8 m=2 memory"), std::string::npos);
}

TEST_F(CliTest, ThreadCapFromEnvironment) {
  const char* old = std::getenv("PIPESIM_THREADS");
  const std::string saved = old ? old : "";
  setenv("PIPESIM_THREADS", "1", 1);
  EXPECT_EQ(WorkerCount(), 1);
  setenv("PIPESIM_THREADS", "0", 1);
  EXPECT_THROW(WorkerCount(), SimError);
  EXPECT_EQ(Invoke({"run", "--epochs", "1", "--out", dir_.string()}).code, 2);
  setenv("PIPESIM_THREADS", "4x", 1);
  EXPECT_THROW(WorkerCount(), SimError);
  if (old) {
    setenv("PIPESIM_THREADS", saved.c_str(), 1);
  } else {
    unsetenv("PIPESIM_THREADS");
  }
}

TEST(ExperimentDriverTest, ResultIndependentOfWorkerCount) {
  ExperimentSpec spec;
  spec.base.epochs = 2;
  spec.seeds = {1, 2, 3};
  const auto serial = RunCells(spec, 1);
  const auto parallel = RunCells(spec, 6);
  EXPECT_EQ(SummaryJson(spec, serial), SummaryJson(spec, parallel));
  ASSERT_EQ(serial.size(), 12u);
  EXPECT_EQ(serial[5].seed, 2u);
  EXPECT_EQ(serial[5].policy, spec.policies[1]);
}

TEST(ExperimentDriverTest, MedianTreatsMissingAsPastTheEnd) {
  ExperimentSpec spec;
  spec.base.epochs = 3;
  spec.policies = {PolicyKind::kVTiMePReSt};
  spec.seeds = {1, 2, 3};
  std::vector<CellResult> cells(3);
  for (int i = 0; i < 3; ++i) {
    cells[i].policy = PolicyKind::kVTiMePReSt;
    cells[i].seed = i + 1;
    cells[i].run.epoch_span = 10;
    cells[i].run.epochs.resize(3);
  }
  cells[0].epochs_to_loss = 2;
  // Two of three never reach it: the median is "not reached".
  auto j = nlohmann::json::parse(SummaryJson(spec, cells));
  EXPECT_TRUE(j["policies"]["V-TiMePReSt"]["epochs_to_threshold"].is_null());
  cells[1].epochs_to_loss = 3;
  j = nlohmann::json::parse(SummaryJson(spec, cells));
  EXPECT_EQ(j["policies"]["V-TiMePReSt"]["epochs_to_threshold"], 3);
  EXPECT_EQ(j["policies"]["V-TiMePReSt"]["ticks_to_threshold"], 30);
}

TEST(ExperimentDriverTest, RejectsEmptySpec) {
  ExperimentSpec spec;
  spec.seeds.clear();
  EXPECT_THROW(ValidateSpec(spec), SimError);
  spec.seeds = {1};
  spec.policies.clear();
  EXPECT_THROW(ValidateSpec(spec), SimError);
}

TEST(OptionsForTest, GrowsDatasetToDivisibleSize) {
  SimConfig c;
  c.mini_batches = 7;
  c.micro_batches = 3;
  EXPECT_EQ(OptionsFor(c).data.samples % 21, 0);
  EXPECT_GE(OptionsFor(c).data.samples, 960);
  EXPECT_EQ(OptionsFor(SimConfig{}).data.samples, 960);
}

}  // namespace
}  // namespace pipesim::cli
