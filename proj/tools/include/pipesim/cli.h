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

#ifndef PIPESIM_CLI_H_
#define PIPESIM_CLI_H_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pipesim/engine.h"
#include "pipesim/scheduler.h"
#include "pipesim/types.h"

namespace pipesim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvariant = 1;
inline constexpr int kExitUsage = 2;

struct ExperimentSpec {
  SimConfig base;
  std::vector<PolicyKind> policies = AllPolicies();
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "runs";
  double loss_threshold = 0.6;
  double accuracy_threshold = 0.9;
};

// Throws SimError(kInvalidArgument) on an empty policy or seed list.
void ValidateSpec(const ExperimentSpec& spec);

// Training options for cfg. The dataset is grown to the next multiple of
// M*m when the default sample count does not divide evenly.
TrainerOptions OptionsFor(const SimConfig& cfg);

struct CellResult {
  PolicyKind policy = PolicyKind::kVTiMePReSt;
  std::uint64_t seed = 0;
  TrainRun run;
  std::optional<int> epochs_to_loss;
  std::optional<int> epochs_to_accuracy;
};

// Worker count: hardware concurrency, capped by PIPESIM_THREADS when set.
// Throws SimError(kInvalidArgument) if PIPESIM_THREADS is not a positive
// integer.
int WorkerCount();

// One cell per (seed, policy), ordered seed-major. Cells run concurrently on
// `workers` threads; the result is independent of the worker count.
std::vector<CellResult> RunCells(const ExperimentSpec& spec, int workers);

// Per-policy medians across seeds. A threshold that was never reached
// counts as epochs + 1 in the median and is reported as null.
std::string SummaryJson(const ExperimentSpec& spec,
                        const std::vector<CellResult>& cells);

// Writes trainruns/<policy>_seed<k>.csv, memory.csv, config.json and
// summary.json below spec.output_dir.
void WriteArtifacts(const ExperimentSpec& spec,
                    const std::vector<CellResult>& cells);

struct Check {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct VerifyOptions {
  // Applied to the nF1B timeline before it is checked. Test hook.
  std::function<void(Timeline&)> mutate_timeline;
  int epochs = 1;
};

// Invariant families for one configuration: schedule, throughput,
// staleness, memory, commits.
std::vector<Check> VerifyConfig(const SimConfig& cfg,
                                const VerifyOptions& options = {});

// The same checks over S in {2,4}, M in {4,8}, m in {1,2}.
std::vector<Check> VerifySweep(const SimConfig& base,
                               const VerifyOptions& options = {});

// Entry point shared by the executable and the tests. `args` excludes the
// program name.
int RunMain(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace pipesim::cli

#endif  // PIPESIM_CLI_H_
