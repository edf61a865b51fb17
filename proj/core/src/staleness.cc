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

#include "pipesim/staleness.h"

#include <algorithm>
#include <cmath>
#include <string>

namespace pipesim {

double Significance(int delta, const DecayParams& params) {
  if (delta < 0) {
    throw SimError(ErrorCode::kNegativeDelta,
                   "staleness degree must be >= 0, got " + std::to_string(delta));
  }
  if (!(params.lambda > 0.0) || !std::isfinite(params.lambda)) {
    throw SimError(ErrorCode::kNonPositiveLambda, "lambda must be > 0");
  }
  return std::exp(-params.lambda * static_cast<double>(delta));
}

double IntermediateFactor(double significance) {
  if (!(significance > 0.0 && significance <= 1.0)) {
    throw SimError(ErrorCode::kFactorOutOfRange,
                   "significance must lie in (0, 1], got " +
                       std::to_string(significance));
  }
  return 2.0 - 1.0 / significance;
}

std::vector<double> IntermediateWeights(std::span<const double> stale,
                                        int delta, const DecayParams& params) {
  if (stale.empty()) {
    throw SimError(ErrorCode::kInvalidArgument, "stale weights are empty");
  }
  double factor = IntermediateFactor(Significance(delta, params));
  if (params.clamp_factor_min) factor = std::max(factor, *params.clamp_factor_min);
  std::vector<double> out(stale.begin(), stale.end());
  // Exact identity at zero staleness (factor == 1.0 exactly).
  if (factor != 1.0) {
    for (double& w : out) w *= factor;
  }
  return out;
}

void UpdateLog::Record(StageId stage, Tick tick) {
  if (stage.index < 0 || stage.index >= static_cast<int>(commits_per_stage.size())) {
    throw SimError(ErrorCode::kInvalidArgument, "stage out of range in update log");
  }
  commits_per_stage[stage.index].push_back(tick);
}

int UpdateLog::CountBetween(StageId stage, Tick after, Tick upto) const {
  const auto& ticks = commits_per_stage.at(stage.index);
  auto lo = std::upper_bound(ticks.begin(), ticks.end(), after);
  auto hi = std::upper_bound(ticks.begin(), ticks.end(), upto);
  return hi > lo ? static_cast<int>(hi - lo) : 0;
}

StalenessRecord DeltaOf(const ScheduleEvent& backward, const UpdateLog& log,
                        const ForwardResolutions& forward_ticks) {
  if (backward.pass != Pass::kBackward) {
    throw SimError(ErrorCode::kInvalidArgument, "DeltaOf expects a backward event");
  }
  auto it = forward_ticks.find({backward.stage.index, backward.batch.mini_batch});
  if (it == forward_ticks.end()) {
    throw SimError(ErrorCode::kUnknownVersion,
                   "no forward resolution recorded for mini-batch " +
                       std::to_string(backward.batch.mini_batch) + " at stage " +
                       std::to_string(backward.stage.index));
  }
  StalenessRecord rec;
  rec.stage = backward.stage;
  rec.mini_batch = backward.batch.mini_batch;
  rec.pass = Pass::kBackward;
  rec.delta = log.CountBetween(backward.stage, it->second, backward.start_tick);
  return rec;
}

}  // namespace pipesim
