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

#include "pipesim/scheduler.h"

#include <algorithm>
#include <map>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <tuple>

namespace pipesim {

Tick ForwardDuration(const SimConfig& cfg, bool nf1b) {
  return nf1b ? Tick{cfg.fwd_cost}
              : Tick{cfg.fwd_cost} * Tick{cfg.micro_batches};
}

namespace {

// Index layout: for each mini-batch, each stage: forwards then the backward.
class TaskIndex {
 public:
  TaskIndex(int stages, int minis, int micros)
      : stages_(stages), minis_(minis), micros_(micros) {}

  int forward(int mini, int stage, int micro) const {
    return Base(mini, stage) + micro;
  }
  int backward(int mini, int stage) const {
    return Base(mini, stage) + micros_;
  }
  int size() const { return minis_ * stages_ * (micros_ + 1); }

 private:
  int Base(int mini, int stage) const {
    return ((mini - 1) * stages_ + stage) * (micros_ + 1);
  }

  int stages_;
  int minis_;
  int micros_;
};

}  // namespace

DependencyGraph BuildDependencyGraph(const SimConfig& cfg, bool nf1b) {
  const int S = cfg.stages;
  const int M = cfg.mini_batches;
  const int m = nf1b ? cfg.micro_batches : 1;
  TaskIndex index(S, M, m);

  DependencyGraph graph;
  graph.tasks.resize(index.size());
  for (int b = 1; b <= M; ++b) {
    for (int s = 0; s < S; ++s) {
      for (int k = 0; k < m; ++k) {
        Task& t = graph.tasks[index.forward(b, s, k)];
        t.stage = StageId{s};
        t.pass = Pass::kForward;
        t.batch = BatchRef{b, nf1b ? std::optional<int>(k) : std::nullopt};
      }
      Task& t = graph.tasks[index.backward(b, s)];
      t.stage = StageId{s};
      t.pass = Pass::kBackward;
      t.batch = BatchRef{b, std::nullopt};
    }
  }

  auto& edges = graph.edges;
  for (int b = 1; b <= M; ++b) {
    for (int s = 0; s < S; ++s) {
      const int cap = S - s;
      for (int k = 0; k < m; ++k) {
        if (s > 0) edges.emplace_back(index.forward(b, s - 1, k), index.forward(b, s, k));
        if (b - cap >= 1) edges.emplace_back(index.backward(b - cap, s), index.forward(b, s, k));
      }
      if (s == S - 1) {
        for (int k = 0; k < m; ++k) {
          edges.emplace_back(index.forward(b, s, k), index.backward(b, s));
        }
      } else {
        edges.emplace_back(index.backward(b, s + 1), index.backward(b, s));
      }
    }
  }
  return graph;
}

bool IsAcyclic(const DependencyGraph& graph) {
  const int n = static_cast<int>(graph.tasks.size());
  std::vector<int> indegree(n, 0);
  std::vector<std::vector<int>> succ(n);
  for (auto [from, to] : graph.edges) {
    if (from < 0 || from >= n || to < 0 || to >= n) return false;
    succ[from].push_back(to);
    ++indegree[to];
  }
  std::vector<int> frontier;
  for (int i = 0; i < n; ++i) {
    if (indegree[i] == 0) frontier.push_back(i);
  }
  int visited = 0;
  while (!frontier.empty()) {
    int v = frontier.back();
    frontier.pop_back();
    ++visited;
    for (int w : succ[v]) {
      if (--indegree[w] == 0) frontier.push_back(w);
    }
  }
  return visited == n;
}

void FinalizeTimeline(Timeline& timeline, int stages) {
  std::sort(timeline.events.begin(), timeline.events.end(),
            [](const ScheduleEvent& a, const ScheduleEvent& b) {
              return std::tie(a.start_tick, a.stage.index) <
                     std::tie(b.start_tick, b.stage.index);
            });
  timeline.epoch_span = 0;
  std::vector<Tick> busy(stages, 0);
  for (const ScheduleEvent& e : timeline.events) {
    timeline.epoch_span = std::max(timeline.epoch_span, e.end_tick);
    if (e.stage.index >= 0 && e.stage.index < stages) {
      busy[e.stage.index] += e.duration();
    }
  }
  timeline.idle_ticks_per_stage.assign(stages, 0);
  for (int s = 0; s < stages; ++s) {
    timeline.idle_ticks_per_stage[s] = timeline.epoch_span - busy[s];
  }
}

namespace {

// Ready-queue ordering on one stage: backwards before forwards, then lower
// (mini, micro) first.
struct ReadyOrder {
  const std::vector<Task>* tasks;
  bool operator()(int a, int b) const {
    const Task& ta = (*tasks)[a];
    const Task& tb = (*tasks)[b];
    auto key = [](const Task& t) {
      return std::make_tuple(t.pass == Pass::kBackward ? 0 : 1,
                             t.batch.mini_batch, t.batch.micro_batch.value_or(0));
    };
    // priority_queue pops the largest; invert.
    return key(ta) > key(tb);
  }
};

Timeline ListSchedule(const SimConfig& cfg, bool nf1b) {
  ValidateConfig(cfg);
  const DependencyGraph graph = BuildDependencyGraph(cfg, nf1b);
  const int n = static_cast<int>(graph.tasks.size());
  const int S = cfg.stages;
  const Tick fwd = ForwardDuration(cfg, nf1b);
  const Tick bwd = cfg.bwd_cost;

  std::vector<int> unmet(n, 0);
  std::vector<std::vector<int>> succ(n);
  for (auto [from, to] : graph.edges) {
    succ[from].push_back(to);
    ++unmet[to];
  }

  using ReadyQueue = std::priority_queue<int, std::vector<int>, ReadyOrder>;
  std::vector<ReadyQueue> ready;
  ready.reserve(S);
  for (int s = 0; s < S; ++s) ready.emplace_back(ReadyOrder{&graph.tasks});
  for (int i = 0; i < n; ++i) {
    if (unmet[i] == 0) ready[graph.tasks[i].stage.index].push(i);
  }

  // (end_tick, task) of in-flight work.
  using Running = std::pair<Tick, int>;
  std::priority_queue<Running, std::vector<Running>, std::greater<>> running;
  std::vector<bool> stage_busy(S, false);

  Timeline timeline;
  timeline.events.reserve(n);
  Tick now = 0;
  int done = 0;
  while (done < n) {
    for (int s = 0; s < S; ++s) {
      if (stage_busy[s] || ready[s].empty()) continue;
      const int id = ready[s].top();
      ready[s].pop();
      const Task& task = graph.tasks[id];
      const Tick dur = task.pass == Pass::kForward ? fwd : bwd;
      timeline.events.push_back(
          ScheduleEvent{task.stage, now, now + dur, task.pass, task.batch});
      running.emplace(now + dur, id);
      stage_busy[s] = true;
    }
    if (running.empty()) {
      throw SimError(ErrorCode::kInvalidArgument,
                     "schedule deadlock: dependency graph has a cycle");
    }
    now = running.top().first;
    while (!running.empty() && running.top().first == now) {
      const int id = running.top().second;
      running.pop();
      ++done;
      stage_busy[graph.tasks[id].stage.index] = false;
      for (int next : succ[id]) {
        if (--unmet[next] == 0) ready[graph.tasks[next].stage.index].push(next);
      }
    }
  }
  FinalizeTimeline(timeline, S);
  return timeline;
}

}  // namespace

Timeline Build1F1B(const SimConfig& cfg) { return ListSchedule(cfg, false); }

Timeline BuildNF1B(const SimConfig& cfg) { return ListSchedule(cfg, true); }

Timeline BuildTimeline(const SimConfig& cfg) {
  return UsesNf1b(cfg.policy.kind) ? BuildNF1B(cfg) : Build1F1B(cfg);
}

std::string_view ViolationKindName(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kOverlap: return "OverlapViolation";
    case ViolationKind::kDependency: return "DependencyViolation";
    case ViolationKind::kDuration: return "DurationViolation";
    case ViolationKind::kMissingEvent: return "MissingEvent";
    case ViolationKind::kUnexpectedEvent: return "UnexpectedEvent";
    case ViolationKind::kCycle: return "CycleViolation";
    case ViolationKind::kAccounting: return "AccountingViolation";
  }
  return "?";
}

namespace {

using TaskKey = std::tuple<int, int, int, int>;  // stage, pass, mini, micro

TaskKey KeyOf(StageId stage, Pass pass, const BatchRef& batch) {
  return {stage.index, pass == Pass::kForward ? 0 : 1, batch.mini_batch,
          batch.micro_batch.value_or(-1)};
}

std::string Describe(const ScheduleEvent& e) {
  std::ostringstream os;
  os << (e.pass == Pass::kForward ? "F" : "B") << e.batch.mini_batch;
  if (e.batch.micro_batch) os << "." << *e.batch.micro_batch;
  os << "@s" << e.stage.index << "[" << e.start_tick << "," << e.end_tick << ")";
  return os.str();
}

}  // namespace

std::vector<Violation> VerifyTimeline(const Timeline& timeline,
                                      const SimConfig& cfg) {
  std::vector<Violation> out;
  const bool nf1b = UsesNf1b(cfg.policy.kind);
  const DependencyGraph graph = BuildDependencyGraph(cfg, nf1b);
  const Tick fwd = ForwardDuration(cfg, nf1b);

  if (!IsAcyclic(graph)) {
    out.push_back({ViolationKind::kCycle, StageId{0},
                   "dependency graph has a cycle"});
  }

  std::map<TaskKey, int> task_of;
  for (int i = 0; i < static_cast<int>(graph.tasks.size()); ++i) {
    const Task& t = graph.tasks[i];
    task_of[KeyOf(t.stage, t.pass, t.batch)] = i;
  }

  std::vector<const ScheduleEvent*> placed(graph.tasks.size(), nullptr);
  for (const ScheduleEvent& e : timeline.events) {
    auto it = task_of.find(KeyOf(e.stage, e.pass, e.batch));
    if (it == task_of.end() || placed[it->second] != nullptr) {
      out.push_back({ViolationKind::kUnexpectedEvent, e.stage,
                     "unexpected or duplicate event " + Describe(e)});
      continue;
    }
    placed[it->second] = &e;
    const Tick want = e.pass == Pass::kForward ? fwd : Tick{cfg.bwd_cost};
    if (e.start_tick < 0 || e.duration() != want) {
      out.push_back({ViolationKind::kDuration, e.stage,
                     Describe(e) + " should last " + std::to_string(want)});
    }
  }
  for (size_t i = 0; i < placed.size(); ++i) {
    if (placed[i] == nullptr) {
      const Task& t = graph.tasks[i];
      ScheduleEvent ghost{t.stage, 0, 0, t.pass, t.batch};
      out.push_back({ViolationKind::kMissingEvent, t.stage,
                     "missing event " + Describe(ghost)});
    }
  }

  std::vector<std::vector<const ScheduleEvent*>> per_stage(cfg.stages);
  for (const ScheduleEvent& e : timeline.events) {
    if (e.stage.index >= 0 && e.stage.index < cfg.stages) {
      per_stage[e.stage.index].push_back(&e);
    }
  }
  for (int s = 0; s < cfg.stages; ++s) {
    auto& row = per_stage[s];
    std::sort(row.begin(), row.end(), [](auto* a, auto* b) {
      return std::tie(a->start_tick, a->end_tick) < std::tie(b->start_tick, b->end_tick);
    });
    for (size_t i = 1; i < row.size(); ++i) {
      if (row[i - 1]->end_tick > row[i]->start_tick) {
        out.push_back({ViolationKind::kOverlap, StageId{s},
                       Describe(*row[i - 1]) + " overlaps " + Describe(*row[i])});
      }
    }
  }

  for (auto [from, to] : graph.edges) {
    const ScheduleEvent* a = placed[from];
    const ScheduleEvent* b = placed[to];
    if (a == nullptr || b == nullptr) continue;
    if (a->end_tick > b->start_tick) {
      out.push_back({ViolationKind::kDependency, b->stage,
                     Describe(*b) + " starts before " + Describe(*a) + " ends"});
    }
  }

  Timeline recomputed = timeline;
  FinalizeTimeline(recomputed, cfg.stages);
  if (recomputed.epoch_span != timeline.epoch_span ||
      recomputed.idle_ticks_per_stage != timeline.idle_ticks_per_stage) {
    out.push_back({ViolationKind::kAccounting, StageId{0},
                   "epoch_span/idle ticks disagree with events"});
  }
  return out;
}

void WriteTimelineCsv(const Timeline& timeline, std::ostream& out) {
  out << "stage,start_tick,end_tick,pass,mini_batch,micro_batch\n";
  for (const ScheduleEvent& e : timeline.events) {
    out << e.stage.index << ',' << e.start_tick << ',' << e.end_tick << ','
        << (e.pass == Pass::kForward ? "forward" : "backward") << ','
        << e.batch.mini_batch << ',';
    if (e.batch.micro_batch) out << *e.batch.micro_batch;
    out << '\n';
  }
}

namespace {

std::string CellLabel(const ScheduleEvent& e) {
  std::string label;
  if (e.pass == Pass::kBackward) label += 'B';
  label += std::to_string(e.batch.mini_batch);
  if (e.pass == Pass::kForward && e.batch.micro_batch) {
    const int k = *e.batch.micro_batch;
    label += k < 26 ? std::string(1, static_cast<char>('a' + k))
                    : "." + std::to_string(k);
  }
  return label;
}

}  // namespace

std::string RenderGantt(const Timeline& timeline, int stages) {
  const Tick span = timeline.epoch_span;
  std::vector<std::vector<std::string>> grid(
      stages, std::vector<std::string>(static_cast<size_t>(span), "."));
  size_t width = 1;
  for (const ScheduleEvent& e : timeline.events) {
    if (e.stage.index < 0 || e.stage.index >= stages) continue;
    const std::string label = CellLabel(e);
    width = std::max(width, label.size());
    for (Tick t = e.start_tick; t < e.end_tick && t < span; ++t) {
      grid[e.stage.index][static_cast<size_t>(t)] = label;
    }
  }
  const std::string stage_label = "S" + std::to_string(stages - 1);
  std::ostringstream os;
  for (int s = 0; s < stages; ++s) {
    std::string name = "S" + std::to_string(s);
    name.resize(stage_label.size(), ' ');
    os << name << " |";
    for (const std::string& cell : grid[s]) {
      os << ' ' << cell << std::string(width - cell.size(), ' ');
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace pipesim
