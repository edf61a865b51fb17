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

#ifndef PIPESIM_ENGINE_H_
#define PIPESIM_ENGINE_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include "pipesim/scheduler.h"
#include "pipesim/staleness.h"
#include "pipesim/types.h"
#include "pipesim/versioning.h"

namespace pipesim {

// Dense row-major matrix; rows are samples.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  bool empty() const { return data.empty(); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

enum class Activation { kTanh, kIdentity };

// One pipeline stage: out = act(in * W + b). Parameters are stored flat as
// W (in_dim x out_dim, row-major) followed by b (out_dim).
struct StageModel {
  int in_dim = 0;
  int out_dim = 0;
  Activation activation = Activation::kTanh;

  std::size_t param_count() const {
    return static_cast<std::size_t>(in_dim) * out_dim + out_dim;
  }
};

// tanh hidden stages of width `hidden`, identity logits on the last stage.
std::vector<StageModel> BuildStageModels(int stages, int input_dim, int hidden,
                                         int classes);
std::vector<double> InitStageWeights(const StageModel& model, std::mt19937_64& rng);

// What a backward needs from the forward that produced it.
struct StageCache {
  Matrix input;
  Matrix output;
};

Matrix ForwardStage(const StageModel& model, std::span<const double> weights,
                    const Matrix& inputs);

struct StageGradients {
  std::vector<double> params;
  Matrix downstream;  // d loss / d input
};

// `upstream` is d loss / d output of this stage. Throws kMissingForwardCache
// if `cache` is null or empty, kDimensionMismatch on any shape disagreement.
StageGradients BackwardStage(const StageModel& model,
                             std::span<const double> weights,
                             const StageCache* cache, const Matrix& upstream);

struct LossResult {
  double loss = 0.0;     // mean cross-entropy
  int correct = 0;       // top-1 hits
  Matrix grad_logits;    // d mean-loss / d logits
};

LossResult SoftmaxCrossEntropy(const Matrix& logits, std::span<const int> labels);

enum class DatasetKind { kBlobs, kSpirals };

struct Dataset {
  Matrix inputs;
  std::vector<int> labels;
  int classes = 0;
};

struct DatasetOptions {
  DatasetKind kind = DatasetKind::kBlobs;
  int samples = 960;
  int input_dim = 8;
  int classes = 3;
  // Blob centre spread relative to unit within-class noise.
  double separation = 1.0;
};

Dataset MakeDataset(const DatasetOptions& options, std::uint64_t seed);

// Which weights an SGD step is applied to before it is committed.
//   kLatest   - the stage's newest version (asynchronous-SGD convention);
//   kResolved - the weights the backward actually used.
enum class UpdateBase { kLatest, kResolved };

struct TrainerOptions {
  double learning_rate = 0.05;
  int hidden = 16;
  DatasetOptions data;
  UpdateBase update_base = UpdateBase::kLatest;
  std::optional<double> clamp_factor_min;
};

// Every weight resolution the replay performed.
struct ResolutionRecord {
  int epoch = 0;
  Tick tick = 0;
  StalenessRecord staleness;
  std::optional<int> micro_batch;
  VersionId version_id = 0;
  WeightSource source = WeightSource::kLatest;
};

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double top1_acc = 0.0;
  Tick ticks_elapsed = 0;
  int peak_versions = 0;  // max over stages, cumulative
  double mean_delta = 0.0;
  int max_delta = 0;
};

struct TrainRun {
  PolicyKind policy = PolicyKind::kVTiMePReSt;
  std::uint64_t seed = 0;
  Tick epoch_span = 0;
  std::vector<EpochMetrics> epochs;
  std::vector<ResolutionRecord> resolutions;
  std::vector<StageMemory> memory;
  // Commits per stage accumulated over all epochs.
  std::vector<int> commits_per_stage;
};

// Replays a verified timeline against per-stage models, one epoch at a
// time. Single-threaded and fully determined by (cfg, options).
class Trainer {
 public:
  Trainer(const SimConfig& cfg, const TrainerOptions& options);
  // Shares an already generated dataset (must match options.data shape).
  Trainer(const SimConfig& cfg, const TrainerOptions& options, Dataset dataset);

  // Runs one more epoch and appends its metrics to run().
  const EpochMetrics& RunEpoch();
  // Runs the remaining configured epochs.
  const TrainRun& RunAll();

  const TrainRun& run() const { return run_; }
  const Timeline& timeline() const { return timeline_; }
  const VersionStore& store() const { return store_; }
  const std::vector<StageModel>& models() const { return models_; }
  const Dataset& dataset() const { return dataset_; }

  // Loss/accuracy of the latest weights over the whole dataset.
  LossResult Evaluate() const;

 private:
  struct PendingUpdate {
    std::vector<double> gradient;
    std::vector<double> resolved;
    int mini_batch = 0;
  };

  void StartForward(const ScheduleEvent& e, Tick tick, std::span<const int> rows);
  void StartBackward(const ScheduleEvent& e, Tick tick);
  void FinishForward(const ScheduleEvent& e);
  void FinishBackward(const ScheduleEvent& e, Tick tick);
  void Record(const ResolvedWeights& w, Pass pass, const BatchRef& batch, Tick tick);

  SimConfig cfg_;
  TrainerOptions options_;
  DecayParams decay_;
  Dataset dataset_;
  std::vector<StageModel> models_;
  Timeline timeline_;
  VersionStore store_;
  UpdateLog log_;
  ForwardResolutions forward_ticks_;
  std::mt19937_64 shuffle_rng_;
  int epoch_ = 0;
  TrainRun run_;

  // Per-epoch scratch, keyed by (mini, micro, stage). Micro is 0 for
  // whole-mini-batch forwards.
  std::map<std::tuple<int, int, int>, StageCache> caches_;
  std::map<std::pair<int, int>, Matrix> upstream_;  // (mini, stage)
  std::map<std::pair<int, int>, PendingUpdate> pending_;
  std::vector<int> order_;
  std::vector<double> epoch_deltas_;
};

TrainRun TrainPolicy(const SimConfig& cfg, const TrainerOptions& options);

// First 1-based epoch whose loss is <= threshold.
std::optional<int> EpochsToLoss(const TrainRun& run, double threshold);
std::optional<int> EpochsToAccuracy(const TrainRun& run, double threshold);

struct PolicyOutcome {
  TrainRun run;
  std::optional<int> epochs_to_threshold;
  std::optional<Tick> ticks_to_threshold;
};

// One run per policy on the same dataset and seed.
std::vector<PolicyOutcome> RunExperiment(const SimConfig& cfg,
                                         const std::vector<PolicyKind>& policies,
                                         const TrainerOptions& options,
                                         double loss_threshold);

// CSV: epoch,loss,top1_acc,ticks_elapsed,peak_versions,mean_delta,max_delta
void WriteTrainRunCsv(const TrainRun& run, std::ostream& out);

}  // namespace pipesim

#endif  // PIPESIM_ENGINE_H_
