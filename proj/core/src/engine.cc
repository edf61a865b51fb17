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

#include "pipesim/engine.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>

#include <Eigen/Dense>

namespace pipesim {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

void CheckWeights(const StageModel& model, std::span<const double> weights) {
  if (weights.size() != model.param_count()) {
    throw SimError(ErrorCode::kDimensionMismatch,
                   "stage expects " + std::to_string(model.param_count()) +
                       " parameters, got " + std::to_string(weights.size()));
  }
}

Eigen::Map<const RowMat> View(const Matrix& m) {
  return Eigen::Map<const RowMat>(m.data.data(), m.rows, m.cols);
}

Eigen::Map<RowMat> View(Matrix& m) {
  return Eigen::Map<RowMat>(m.data.data(), m.rows, m.cols);
}

// Stream seeds derived from the experiment seed.
std::uint64_t Derive(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint64_t out = 0;
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out;
}

constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kInitStream = 2;
constexpr std::uint64_t kShuffleStream = 3;

}  // namespace

std::vector<StageModel> BuildStageModels(int stages, int input_dim, int hidden,
                                         int classes) {
  if (stages < 1 || input_dim < 1 || hidden < 1 || classes < 2) {
    throw SimError(ErrorCode::kInvalidArgument, "bad model dimensions");
  }
  std::vector<StageModel> models;
  for (int s = 0; s < stages; ++s) {
    const bool last = s == stages - 1;
    models.push_back(StageModel{s == 0 ? input_dim : hidden,
                                last ? classes : hidden,
                                last ? Activation::kIdentity : Activation::kTanh});
  }
  return models;
}

std::vector<double> InitStageWeights(const StageModel& model, std::mt19937_64& rng) {
  // Glorot-uniform weights, zero bias.
  const double limit = std::sqrt(6.0 / (model.in_dim + model.out_dim));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> w(model.param_count(), 0.0);
  const size_t n = static_cast<size_t>(model.in_dim) * model.out_dim;
  for (size_t i = 0; i < n; ++i) w[i] = dist(rng);
  return w;
}

Matrix ForwardStage(const StageModel& model, std::span<const double> weights,
                    const Matrix& inputs) {
  CheckWeights(model, weights);
  if (inputs.cols != model.in_dim) {
    throw SimError(ErrorCode::kDimensionMismatch,
                   "stage input has " + std::to_string(inputs.cols) +
                       " columns, expected " + std::to_string(model.in_dim));
  }
  Eigen::Map<const RowMat> w(weights.data(), model.in_dim, model.out_dim);
  Eigen::Map<const RowVec> b(weights.data() + w.size(), model.out_dim);
  Matrix out(inputs.rows, model.out_dim);
  auto z = View(out);
  z.noalias() = View(inputs) * w;
  z.rowwise() += b;
  if (model.activation == Activation::kTanh) z = z.array().tanh().matrix();
  return out;
}

StageGradients BackwardStage(const StageModel& model,
                             std::span<const double> weights,
                             const StageCache* cache, const Matrix& upstream) {
  if (cache == nullptr || cache->input.empty() || cache->output.empty()) {
    throw SimError(ErrorCode::kMissingForwardCache,
                   "backward has no cached forward activations");
  }
  CheckWeights(model, weights);
  const Matrix& x = cache->input;
  const Matrix& a = cache->output;
  if (x.cols != model.in_dim || a.cols != model.out_dim || x.rows != a.rows ||
      upstream.rows != a.rows || upstream.cols != a.cols) {
    throw SimError(ErrorCode::kDimensionMismatch,
                   "backward shapes disagree with the cached forward");
  }
  RowMat dz = View(upstream);
  if (model.activation == Activation::kTanh) {
    dz.array() *= 1.0 - View(a).array().square();
  }
  Eigen::Map<const RowMat> w(weights.data(), model.in_dim, model.out_dim);

  StageGradients g;
  g.params.assign(model.param_count(), 0.0);
  Eigen::Map<RowMat> dw(g.params.data(), model.in_dim, model.out_dim);
  Eigen::Map<RowVec> db(g.params.data() + dw.size(), model.out_dim);
  dw.noalias() = View(x).transpose() * dz;
  db = dz.colwise().sum();
  g.downstream = Matrix(x.rows, model.in_dim);
  View(g.downstream).noalias() = dz * w.transpose();
  return g;
}

LossResult SoftmaxCrossEntropy(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<size_t>(logits.rows) != labels.size() || logits.rows == 0) {
    throw SimError(ErrorCode::kDimensionMismatch,
                   "logits rows and labels disagree");
  }
  LossResult r;
  r.grad_logits = Matrix(logits.rows, logits.cols);
  const double inv_n = 1.0 / logits.rows;
  for (int i = 0; i < logits.rows; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= logits.cols) {
      throw SimError(ErrorCode::kDimensionMismatch, "label out of range");
    }
    double mx = logits(i, 0);
    int argmax = 0;
    for (int c = 1; c < logits.cols; ++c) {
      if (logits(i, c) > mx) {
        mx = logits(i, c);
        argmax = c;
      }
    }
    double sum = 0.0;
    for (int c = 0; c < logits.cols; ++c) sum += std::exp(logits(i, c) - mx);
    const double log_sum = std::log(sum);
    r.loss += (log_sum - (logits(i, y) - mx)) * inv_n;
    r.correct += argmax == y ? 1 : 0;
    for (int c = 0; c < logits.cols; ++c) {
      const double p = std::exp(logits(i, c) - mx - log_sum);
      r.grad_logits(i, c) = (p - (c == y ? 1.0 : 0.0)) * inv_n;
    }
  }
  return r;
}

Dataset MakeDataset(const DatasetOptions& options, std::uint64_t seed) {
  if (options.samples < options.classes || options.classes < 2 ||
      options.input_dim < 1) {
    throw SimError(ErrorCode::kInvalidArgument, "bad dataset options");
  }
  if (options.kind == DatasetKind::kSpirals && options.input_dim < 2) {
    throw SimError(ErrorCode::kInvalidArgument, "spirals need input_dim >= 2");
  }
  std::mt19937_64 rng(Derive(seed, kDataStream));
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.classes = options.classes;
  ds.inputs = Matrix(options.samples, options.input_dim);
  ds.labels.resize(options.samples);

  if (options.kind == DatasetKind::kBlobs) {
    Matrix centres(options.classes, options.input_dim);
    for (double& v : centres.data) v = options.separation * noise(rng);
    for (int i = 0; i < options.samples; ++i) {
      const int y = i % options.classes;
      ds.labels[i] = y;
      for (int d = 0; d < options.input_dim; ++d) {
        ds.inputs(i, d) = centres(y, d) + noise(rng);
      }
    }
  } else {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < options.samples; ++i) {
      const int y = i % options.classes;
      ds.labels[i] = y;
      const double t = unit(rng);
      const double angle = 2.0 * std::numbers::pi * y / options.classes + 4.0 * t +
                           0.2 * noise(rng);
      ds.inputs(i, 0) = t * std::cos(angle);
      ds.inputs(i, 1) = t * std::sin(angle);
      for (int d = 2; d < options.input_dim; ++d) ds.inputs(i, d) = 0.1 * noise(rng);
    }
  }
  return ds;
}

namespace {

std::vector<std::vector<double>> InitialWeights(const std::vector<StageModel>& models,
                                                std::uint64_t seed) {
  std::mt19937_64 rng(Derive(seed, kInitStream));
  std::vector<std::vector<double>> out;
  for (const StageModel& m : models) out.push_back(InitStageWeights(m, rng));
  return out;
}

Matrix GatherRows(const Matrix& src, std::span<const int> rows) {
  Matrix out(static_cast<int>(rows.size()), src.cols);
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(src.data.begin() + static_cast<size_t>(rows[i]) * src.cols, src.cols,
                out.data.begin() + i * src.cols);
  }
  return out;
}

void AppendRows(Matrix& dst, const Matrix& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
  dst.rows += src.rows;
}

}  // namespace

Trainer::Trainer(const SimConfig& cfg, const TrainerOptions& options)
    : Trainer(cfg, options, MakeDataset(options.data, cfg.seed)) {}

Trainer::Trainer(const SimConfig& cfg, const TrainerOptions& options, Dataset dataset)
    : cfg_(ValidateConfig(cfg)),
      options_(options),
      decay_{cfg.policy.lambda, options.clamp_factor_min},
      dataset_(std::move(dataset)),
      models_(BuildStageModels(cfg.stages, dataset_.inputs.cols, options.hidden,
                               dataset_.classes)),
      timeline_(BuildTimeline(cfg)),
      store_(InitialWeights(models_, cfg.seed)),
      log_(cfg.stages),
      shuffle_rng_(Derive(cfg.seed, kShuffleStream)) {
  const int per_epoch = cfg.mini_batches * cfg.micro_batches;
  if (dataset_.inputs.rows % per_epoch != 0) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "dataset size " + std::to_string(dataset_.inputs.rows) +
                       " is not divisible by mini_batches * micro_batches = " +
                       std::to_string(per_epoch));
  }
  if (auto v = VerifyTimeline(timeline_, cfg_); !v.empty()) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "generated timeline failed verification: " + v.front().detail);
  }
  order_.resize(dataset_.inputs.rows);
  std::iota(order_.begin(), order_.end(), 0);
  run_.policy = cfg_.policy.kind;
  run_.seed = cfg_.seed;
  run_.epoch_span = timeline_.epoch_span;
  run_.commits_per_stage.assign(cfg_.stages, 0);
}

void Trainer::Record(const ResolvedWeights& w, Pass pass, const BatchRef& batch,
                     Tick tick) {
  ResolutionRecord rec;
  rec.epoch = epoch_;
  rec.tick = tick;
  rec.staleness = StalenessRecord{w.stage, batch.mini_batch, pass, w.delta};
  rec.micro_batch = batch.micro_batch;
  rec.version_id = w.version_id;
  rec.source = w.source;
  run_.resolutions.push_back(rec);
  epoch_deltas_.push_back(w.delta);
}

void Trainer::StartForward(const ScheduleEvent& e, Tick tick,
                           std::span<const int> rows) {
  const int s = e.stage.index;
  const int b = e.batch.mini_batch;
  const int k = e.batch.micro_batch.value_or(0);
  ResolvedWeights w = ResolveForward(store_, cfg_.policy, e.stage, e.batch);
  Record(w, Pass::kForward, e.batch, tick);
  // The forward pass resolves its versions for every stage on entry.
  if (s == 0 && k == 0) {
    for (int t = 0; t < cfg_.stages; ++t) forward_ticks_[{t, b}] = tick;
  }

  StageCache cache;
  if (s == 0) {
    cache.input = GatherRows(dataset_.inputs, rows);
  } else {
    auto it = caches_.find({b, k, s - 1});
    if (it == caches_.end()) {
      throw SimError(ErrorCode::kMissingForwardCache,
                     "forward at stage " + std::to_string(s) +
                         " has no upstream activations");
    }
    cache.input = it->second.output;
  }
  cache.output = ForwardStage(models_[s], w.values, cache.input);
  caches_[{b, k, s}] = std::move(cache);
}

void Trainer::StartBackward(const ScheduleEvent& e, Tick tick) {
  const int s = e.stage.index;
  const int b = e.batch.mini_batch;
  const bool nf1b = UsesNf1b(cfg_.policy.kind);
  const int micros = nf1b ? cfg_.micro_batches : 1;

  ResolvedWeights w = ResolveBackward(store_, cfg_.policy, e.stage, e.batch, decay_);
  Record(w, Pass::kBackward, e.batch, tick);
  if (cfg_.policy.kind == PolicyKind::kITiMePReSt) {
    ScheduleEvent at = e;
    at.start_tick = tick;
    if (DeltaOf(at, log_, forward_ticks_).delta != w.delta) {
      throw SimError(ErrorCode::kUnknownVersion,
                     "update log and version store disagree on staleness");
    }
  }

  // Micro-batches stacked in order; the last-stage loss is then the mean over
  // the whole mini-batch, i.e. the mean of the equal-sized micro-batch means.
  StageCache stacked;
  for (int k = 0; k < micros; ++k) {
    auto it = caches_.find({b, k, s});
    if (it == caches_.end()) {
      throw SimError(ErrorCode::kMissingForwardCache,
                     "backward at stage " + std::to_string(s) +
                         " is missing a micro-batch forward");
    }
    AppendRows(stacked.input, it->second.input);
    AppendRows(stacked.output, it->second.output);
    caches_.erase(it);
  }

  Matrix upstream;
  if (s == cfg_.stages - 1) {
    const int batch_size = dataset_.inputs.rows / cfg_.mini_batches;
    std::vector<int> labels(batch_size);
    for (int i = 0; i < batch_size; ++i) {
      labels[i] = dataset_.labels[order_[(b - 1) * batch_size + i]];
    }
    upstream = SoftmaxCrossEntropy(stacked.output, labels).grad_logits;
  } else {
    auto it = upstream_.find({b, s});
    if (it == upstream_.end()) {
      throw SimError(ErrorCode::kMissingForwardCache,
                     "backward at stage " + std::to_string(s) +
                         " has no upstream gradient");
    }
    upstream = std::move(it->second);
    upstream_.erase(it);
  }

  StageGradients g = BackwardStage(models_[s], w.values, &stacked, upstream);
  if (s > 0) upstream_[{b, s - 1}] = std::move(g.downstream);
  pending_[{b, s}] = PendingUpdate{std::move(g.params), std::move(w.values), b};
}

void Trainer::FinishForward(const ScheduleEvent& e) {
  const bool last = !e.batch.micro_batch ||
                    *e.batch.micro_batch == cfg_.micro_batches - 1;
  if (last) CompleteForward(store_, cfg_.policy, e.stage, e.batch.mini_batch);
}

void Trainer::FinishBackward(const ScheduleEvent& e, Tick tick) {
  const int s = e.stage.index;
  const int b = e.batch.mini_batch;
  auto it = pending_.find({b, s});
  if (it == pending_.end()) {
    throw SimError(ErrorCode::kInvalidArgument, "backward finished without starting");
  }
  PendingUpdate update = std::move(it->second);
  pending_.erase(it);

  CompleteBackward(store_, cfg_.policy, e.stage, b);
  const WeightVersion& latest = store_.Latest(e.stage);
  WeightVersion next;
  next.version_id = latest.version_id + 1;
  next.produced_by = b;
  next.values = options_.update_base == UpdateBase::kLatest ? latest.values
                                                            : std::move(update.resolved);
  for (size_t i = 0; i < next.values.size(); ++i) {
    next.values[i] -= options_.learning_rate * update.gradient[i];
  }
  CommitUpdate(store_, cfg_.policy, e.stage, std::move(next));
  log_.Record(e.stage, tick);
  ++run_.commits_per_stage[s];
}

const EpochMetrics& Trainer::RunEpoch() {
  ++epoch_;
  epoch_deltas_.clear();
  std::shuffle(order_.begin(), order_.end(), shuffle_rng_);

  const Tick offset = static_cast<Tick>(epoch_ - 1) * timeline_.epoch_span;
  const int batch_size = dataset_.inputs.rows / cfg_.mini_batches;
  const int micro_size = batch_size / cfg_.micro_batches;

  // Commits at a tick land before any resolution starting at that tick.
  struct Action {
    Tick tick;
    int phase;  // 0 = finish, 1 = start
    int stage;
    size_t event;
  };
  std::vector<Action> actions;
  for (size_t i = 0; i < timeline_.events.size(); ++i) {
    const ScheduleEvent& e = timeline_.events[i];
    actions.push_back({offset + e.start_tick, 1, e.stage.index, i});
    actions.push_back({offset + e.end_tick, 0, e.stage.index, i});
  }
  std::sort(actions.begin(), actions.end(), [](const Action& a, const Action& b) {
    return std::tie(a.tick, a.phase, a.stage, a.event) <
           std::tie(b.tick, b.phase, b.stage, b.event);
  });

  for (size_t i = 0; i < actions.size(); ++i) {
    const Action& act = actions[i];
    const ScheduleEvent& e = timeline_.events[act.event];
    if (act.phase == 0) {
      if (e.pass == Pass::kBackward) {
        FinishBackward(e, act.tick);
      } else {
        FinishForward(e);
      }
    } else if (e.pass == Pass::kBackward) {
      StartBackward(e, act.tick);
    } else {
      const int b = e.batch.mini_batch;
      size_t first = static_cast<size_t>(b - 1) * batch_size;
      size_t count = batch_size;
      if (e.batch.micro_batch) {
        first += static_cast<size_t>(*e.batch.micro_batch) * micro_size;
        count = micro_size;
      }
      StartForward(e, act.tick, std::span<const int>(order_).subspan(first, count));
    }
    if (i + 1 == actions.size() || actions[i + 1].tick != act.tick) {
      store_.MarkBoundary();
    }
  }
  if (!caches_.empty() || !upstream_.empty() || !pending_.empty()) {
    throw SimError(ErrorCode::kInvalidArgument, "epoch ended with work in flight");
  }

  const LossResult eval = Evaluate();
  EpochMetrics m;
  m.epoch = epoch_;
  m.loss = eval.loss;
  m.top1_acc = static_cast<double>(eval.correct) / dataset_.inputs.rows;
  m.ticks_elapsed = static_cast<Tick>(epoch_) * timeline_.epoch_span;
  const auto& peaks = store_.peak_live_counts();
  m.peak_versions = *std::max_element(peaks.begin(), peaks.end());
  if (!epoch_deltas_.empty()) {
    m.mean_delta = std::accumulate(epoch_deltas_.begin(), epoch_deltas_.end(), 0.0) /
                   static_cast<double>(epoch_deltas_.size());
    m.max_delta = static_cast<int>(
        *std::max_element(epoch_deltas_.begin(), epoch_deltas_.end()));
  }
  run_.epochs.push_back(m);

  std::vector<std::int64_t> bytes;
  for (const StageModel& model : models_) {
    bytes.push_back(static_cast<std::int64_t>(model.param_count() * sizeof(double)));
  }
  run_.memory = MemoryReport(store_, bytes);
  return run_.epochs.back();
}

const TrainRun& Trainer::RunAll() {
  while (epoch_ < cfg_.epochs) RunEpoch();
  return run_;
}

LossResult Trainer::Evaluate() const {
  Matrix act = dataset_.inputs;
  for (int s = 0; s < cfg_.stages; ++s) {
    act = ForwardStage(models_[s], store_.Latest(StageId{s}).values, act);
  }
  return SoftmaxCrossEntropy(act, dataset_.labels);
}

TrainRun TrainPolicy(const SimConfig& cfg, const TrainerOptions& options) {
  Trainer trainer(cfg, options);
  return trainer.RunAll();
}

std::optional<int> EpochsToLoss(const TrainRun& run, double threshold) {
  for (const EpochMetrics& m : run.epochs) {
    if (m.loss <= threshold) return m.epoch;
  }
  return std::nullopt;
}

std::optional<int> EpochsToAccuracy(const TrainRun& run, double threshold) {
  for (const EpochMetrics& m : run.epochs) {
    if (m.top1_acc >= threshold) return m.epoch;
  }
  return std::nullopt;
}

std::vector<PolicyOutcome> RunExperiment(const SimConfig& cfg,
                                         const std::vector<PolicyKind>& policies,
                                         const TrainerOptions& options,
                                         double loss_threshold) {
  const Dataset dataset = MakeDataset(options.data, cfg.seed);
  std::vector<PolicyOutcome> out;
  for (PolicyKind kind : policies) {
    SimConfig c = cfg;
    c.policy.kind = kind;
    Trainer trainer(c, options, dataset);
    PolicyOutcome o;
    o.run = trainer.RunAll();
    o.epochs_to_threshold = EpochsToLoss(o.run, loss_threshold);
    if (o.epochs_to_threshold) {
      o.ticks_to_threshold = static_cast<Tick>(*o.epochs_to_threshold) * o.run.epoch_span;
    }
    out.push_back(std::move(o));
  }
  return out;
}

void WriteTrainRunCsv(const TrainRun& run, std::ostream& out) {
  out << "epoch,loss,top1_acc,ticks_elapsed,peak_versions,mean_delta,max_delta\n";
  const auto old_precision = out.precision(17);
  for (const EpochMetrics& m : run.epochs) {
    out << m.epoch << ',' << m.loss << ',' << m.top1_acc << ',' << m.ticks_elapsed
        << ',' << m.peak_versions << ',' << m.mean_delta << ',' << m.max_delta << '\n';
  }
  out.precision(old_precision);
}

}  // namespace pipesim
