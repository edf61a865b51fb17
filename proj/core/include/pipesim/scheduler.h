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

#ifndef PIPESIM_SCHEDULER_H_
#define PIPESIM_SCHEDULER_H_

#include <iosfwd>
#include <string>
#include <vector>

#include "pipesim/types.h"

namespace pipesim {

enum class Pass { kForward, kBackward };

// One box of the pipeline diagram: a forward of one micro-batch (nF1B), a
// forward of a whole mini-batch (1F1B), or the collective backward of a
// mini-batch, occupying [start_tick, end_tick) on one stage.
struct ScheduleEvent {
  StageId stage;
  Tick start_tick = 0;
  Tick end_tick = 0;
  Pass pass = Pass::kForward;
  BatchRef batch;

  Tick duration() const { return end_tick - start_tick; }
  friend bool operator==(const ScheduleEvent&, const ScheduleEvent&) = default;
};

// The per-epoch plan. Events are sorted by (start_tick, stage).
struct Timeline {
  std::vector<ScheduleEvent> events;
  Tick epoch_span = 0;
  std::vector<Tick> idle_ticks_per_stage;

  friend bool operator==(const Timeline&, const Timeline&) = default;
};

// Ticks one forward event occupies. A 1F1B forward carries a whole
// mini-batch, i.e. micro_batches micro-batches worth of samples, so the two
// schedule families process the same work per epoch.
Tick ForwardDuration(const SimConfig& cfg, bool nf1b);

// A schedulable unit before it is placed in time.
struct Task {
  StageId stage;
  Pass pass = Pass::kForward;
  BatchRef batch;

  friend bool operator==(const Task&, const Task&) = default;
};

// Tasks plus precedence edges (predecessor index -> successor index).
//  - a forward at stage s waits for the same (mini, micro) forward at s-1;
//  - the last stage's backward waits for all of its mini-batch's forwards;
//  - a backward at stage s waits for the backward at s+1;
//  - admission cap: stage s holds at most S-s mini-batches in flight, so a
//    forward of mini-batch b at s waits for the backward of b-(S-s) at s.
struct DependencyGraph {
  std::vector<Task> tasks;
  std::vector<std::pair<int, int>> edges;
};

DependencyGraph BuildDependencyGraph(const SimConfig& cfg, bool nf1b);
bool IsAcyclic(const DependencyGraph& graph);

// PipeDream's one-forward-one-backward schedule; micro_batches only scales
// the forward duration.
Timeline Build1F1B(const SimConfig& cfg);
// TiMePReSt-family schedule: m micro-batch forwards and one collective
// backward per mini-batch per stage.
Timeline BuildNF1B(const SimConfig& cfg);
// Dispatches on cfg.policy.kind.
Timeline BuildTimeline(const SimConfig& cfg);

enum class ViolationKind {
  kOverlap,
  kDependency,
  kDuration,
  kMissingEvent,
  kUnexpectedEvent,
  kCycle,
  kAccounting,
};

std::string_view ViolationKindName(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  StageId stage;
  std::string detail;
};

// Empty iff events match the task set, have the configured durations, never
// overlap on a stage, respect every dependency edge, the dependency graph
// is acyclic, and span/idle accounting is consistent.
std::vector<Violation> VerifyTimeline(const Timeline& timeline,
                                      const SimConfig& cfg);

// Recomputes epoch_span and idle_ticks_per_stage from the events and sorts
// them by (start_tick, stage).
void FinalizeTimeline(Timeline& timeline, int stages);

// CSV: stage,start_tick,end_tick,pass,mini_batch,micro_batch
void WriteTimelineCsv(const Timeline& timeline, std::ostream& out);

// Stage-by-tick character grid. Forward cells read "<mini><micro letter>"
// ("1a"), or just "<mini>" under 1F1B; backward cells read "B<mini>"; idle
// cells read ".".
std::string RenderGantt(const Timeline& timeline, int stages);

}  // namespace pipesim

#endif  // PIPESIM_SCHEDULER_H_
