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

#ifndef PIPESIM_STALENESS_H_
#define PIPESIM_STALENESS_H_

#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "pipesim/scheduler.h"
#include "pipesim/types.h"

namespace pipesim {

// Staleness of one weight resolution: how many updates were committed at
// `stage` after the version the computation is based on.
struct StalenessRecord {
  StageId stage;
  int mini_batch = 0;
  Pass pass = Pass::kForward;
  int delta = 0;

  friend bool operator==(const StalenessRecord&, const StalenessRecord&) = default;
};

struct DecayParams {
  double lambda = kDefaultLambda;
  // Optional floor on the intermediate factor. Unset reproduces the
  // unclamped transform, whose range extends to -infinity.
  std::optional<double> clamp_factor_min;
};

// f(delta) = exp(-lambda * delta), in (0, 1], 1 at delta = 0.
double Significance(int delta, const DecayParams& params);

// 2 - 1/f, in (-inf, 1]; 1 only at f = 1, 0 at f = 1/2.
double IntermediateFactor(double significance);

// stale * IntermediateFactor(Significance(delta)), element-wise.
std::vector<double> IntermediateWeights(std::span<const double> stale,
                                        int delta, const DecayParams& params);

// Commit ticks per stage, in commit order.
struct UpdateLog {
  std::vector<std::vector<Tick>> commits_per_stage;

  explicit UpdateLog(int stages = 0) : commits_per_stage(stages) {}
  void Record(StageId stage, Tick tick);
  // Commits at `stage` with tick in (after, upto].
  int CountBetween(StageId stage, Tick after, Tick upto) const;
};

// Tick at which each (stage, mini-batch) forward resolved the weights its
// backward will be measured against.
using ForwardResolutions = std::map<std::pair<int, int>, Tick>;

// delta for a backward event: commits at the event's stage in
// (forward resolution tick, event.start_tick]. Throws kUnknownVersion if
// the forward resolution was never recorded, kInvalidArgument for a
// forward event.
StalenessRecord DeltaOf(const ScheduleEvent& backward, const UpdateLog& log,
                        const ForwardResolutions& forward_ticks);

}  // namespace pipesim

#endif  // PIPESIM_STALENESS_H_
