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

#include "pipesim/versioning.h"

#include <algorithm>
#include <ostream>
#include <string>

namespace pipesim {

namespace {

std::string Where(StageId stage, VersionId id) {
  return "version " + std::to_string(id) + " at stage " + std::to_string(stage.index);
}

}  // namespace

VersionStore::VersionStore(std::vector<std::vector<double>> initial_weights) {
  if (initial_weights.empty()) {
    throw SimError(ErrorCode::kInvalidArgument, "store needs at least one stage");
  }
  stages_.resize(initial_weights.size());
  for (size_t s = 0; s < initial_weights.size(); ++s) {
    StageVersions& sv = stages_[s];
    sv.param_count = initial_weights[s].size();
    Entry entry;
    entry.version = WeightVersion{0, 0, std::move(initial_weights[s])};
    sv.live.emplace(0, std::move(entry));
  }
  peaks_.assign(stages_.size(), 1);
}

VersionStore::StageVersions& VersionStore::At(StageId stage) {
  if (stage.index < 0 || stage.index >= stages()) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "stage " + std::to_string(stage.index) + " out of range");
  }
  return stages_[stage.index];
}

const VersionStore::StageVersions& VersionStore::At(StageId stage) const {
  return const_cast<VersionStore*>(this)->At(stage);
}

const WeightVersion& VersionStore::Latest(StageId stage) const {
  return At(stage).live.rbegin()->second.version;
}

const WeightVersion& VersionStore::Get(StageId stage, VersionId id) const {
  const auto& live = At(stage).live;
  auto it = live.find(id);
  if (it == live.end()) {
    throw SimError(ErrorCode::kMissingVersion, Where(stage, id) + " is not live");
  }
  return it->second.version;
}

bool VersionStore::IsLive(StageId stage, VersionId id) const {
  return At(stage).live.count(id) != 0;
}

std::vector<VersionId> VersionStore::LiveVersions(StageId stage) const {
  std::vector<VersionId> ids;
  for (const auto& [id, entry] : At(stage).live) ids.push_back(id);
  return ids;
}

int VersionStore::LiveCount(StageId stage) const {
  return static_cast<int>(At(stage).live.size());
}

void VersionStore::AddConsumer(StageId stage, VersionId id, int mini_batch) {
  auto& live = At(stage).live;
  auto it = live.find(id);
  if (it == live.end()) {
    throw SimError(ErrorCode::kMissingVersion,
                   "cannot reference evicted " + Where(stage, id));
  }
  ++it->second.consumers[mini_batch];
}

void VersionStore::RemoveConsumer(StageId stage, VersionId id, int mini_batch) {
  StageVersions& sv = At(stage);
  auto it = sv.live.find(id);
  if (it == sv.live.end()) {
    throw SimError(ErrorCode::kMissingVersion,
                   "cannot release evicted " + Where(stage, id));
  }
  auto& consumers = it->second.consumers;
  auto c = consumers.find(mini_batch);
  if (c == consumers.end()) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "mini-batch " + std::to_string(mini_batch) +
                       " holds no reference to " + Where(stage, id));
  }
  if (--c->second == 0) consumers.erase(c);
  EvictUnreferenced(sv);
}

std::set<int> VersionStore::Consumers(StageId stage, VersionId id) const {
  const auto& live = At(stage).live;
  auto it = live.find(id);
  if (it == live.end()) {
    throw SimError(ErrorCode::kMissingVersion, Where(stage, id) + " is not live");
  }
  std::set<int> out;
  for (const auto& [mini, count] : it->second.consumers) out.insert(mini);
  return out;
}

void VersionStore::Commit(StageId stage, WeightVersion next) {
  StageVersions& sv = At(stage);
  const VersionId latest = sv.live.rbegin()->first;
  if (next.version_id != latest + 1) {
    throw SimError(ErrorCode::kNonMonotonicVersion,
                   "expected version " + std::to_string(latest + 1) +
                       " at stage " + std::to_string(stage.index) + ", got " +
                       std::to_string(next.version_id));
  }
  if (next.values.size() != sv.param_count) {
    throw SimError(ErrorCode::kDimensionMismatch,
                   "committed weights have " + std::to_string(next.values.size()) +
                       " values, stage holds " + std::to_string(sv.param_count));
  }
  const VersionId id = next.version_id;
  Entry entry;
  entry.version = std::move(next);
  sv.live.emplace(id, std::move(entry));
  EvictUnreferenced(sv);
}

void VersionStore::EvictUnreferenced(StageVersions& sv) {
  const VersionId latest = sv.live.rbegin()->first;
  for (auto it = sv.live.begin(); it != sv.live.end();) {
    if (it->first != latest && it->second.consumers.empty()) {
      it = sv.live.erase(it);
    } else {
      ++it;
    }
  }
}

void VersionStore::MarkBoundary() {
  for (size_t s = 0; s < stages_.size(); ++s) {
    peaks_[s] = std::max(peaks_[s], static_cast<int>(stages_[s].live.size()));
  }
}

std::optional<VersionId> VersionStore::Held(Role role, StageId stage,
                                            int mini_batch) const {
  auto it = held_.find({static_cast<int>(role), stage.index, mini_batch});
  if (it == held_.end()) return std::nullopt;
  return it->second;
}

void VersionStore::Hold(Role role, StageId stage, int mini_batch, VersionId id) {
  AddConsumer(stage, id, mini_batch);
  held_[{static_cast<int>(role), stage.index, mini_batch}] = id;
}

void VersionStore::Drop(Role role, StageId stage, int mini_batch) {
  auto it = held_.find({static_cast<int>(role), stage.index, mini_batch});
  if (it == held_.end()) return;
  const VersionId id = it->second;
  held_.erase(it);
  RemoveConsumer(stage, id, mini_batch);
}

std::string_view WeightSourceName(WeightSource source) {
  switch (source) {
    case WeightSource::kLatest: return "Latest";
    case WeightSource::kStashed: return "Stashed";
    case WeightSource::kIntermediate: return "Intermediate";
  }
  return "?";
}

namespace {

using Role = VersionStore::Role;

ResolvedWeights FromVersion(const VersionStore& store, StageId stage,
                            VersionId id, WeightSource source) {
  const WeightVersion& v = store.Get(stage, id);
  ResolvedWeights out;
  out.stage = stage;
  out.values = v.values;
  out.source = source;
  out.version_id = id;
  out.delta = static_cast<int>(store.Latest(stage).version_id - id);
  return out;
}

ResolvedWeights FromLatest(const VersionStore& store, StageId stage) {
  return FromVersion(store, stage, store.Latest(stage).version_id,
                     WeightSource::kLatest);
}

// Records the latest version of every stage for `mini` under `role`. Only the
// first stage may take the snapshot; later stages must find it in place.
VersionId PinnedAtAdmission(VersionStore& store, VersionStore::Role role,
                            StageId stage, int mini) {
  if (!store.Held(role, StageId{0}, mini) && !store.Held(role, stage, mini)) {
    if (stage.index != 0) {
      throw SimError(ErrorCode::kMissingVersion,
                     "mini-batch " + std::to_string(mini) + " reached stage " +
                         std::to_string(stage.index) +
                         " without an admission snapshot");
    }
    for (int s = 0; s < store.stages(); ++s) {
      store.Hold(role, StageId{s}, mini, store.Latest(StageId{s}).version_id);
    }
  }
  auto pinned = store.Held(role, stage, mini);
  if (!pinned) {
    throw SimError(ErrorCode::kMissingVersion,
                   "admission snapshot released before forward at stage " +
                       std::to_string(stage.index));
  }
  return *pinned;
}

}  // namespace

ResolvedWeights ResolveForward(VersionStore& store, const Policy& policy,
                               StageId stage, const BatchRef& batch) {
  const int mini = batch.mini_batch;
  switch (policy.kind) {
    case PolicyKind::kPipeDream:
      return FromVersion(store, stage,
                         PinnedAtAdmission(store, Role::kAdmission, stage, mini),
                         WeightSource::kStashed);
    case PolicyKind::kTiMePReSt:
    case PolicyKind::kITiMePReSt: {
      const VersionId id = PinnedAtAdmission(store, Role::kForward, stage, mini);
      const bool fresh = id == store.Latest(stage).version_id;
      return FromVersion(store, stage, id,
                         fresh ? WeightSource::kLatest : WeightSource::kStashed);
    }
    case PolicyKind::kVTiMePReSt:
      return FromLatest(store, stage);
  }
  throw SimError(ErrorCode::kInvalidArgument, "unhandled policy");
}

ResolvedWeights ResolveBackward(VersionStore& store, const Policy& policy,
                                StageId stage, const BatchRef& batch,
                                const DecayParams& decay) {
  const int mini = batch.mini_batch;
  switch (policy.kind) {
    case PolicyKind::kVTiMePReSt:
    case PolicyKind::kTiMePReSt:
      return FromLatest(store, stage);
    case PolicyKind::kPipeDream: {
      auto pinned = store.Held(Role::kAdmission, stage, mini);
      if (!pinned) {
        throw SimError(ErrorCode::kMissingVersion,
                       "no admission pin for mini-batch " + std::to_string(mini) +
                           " at stage " + std::to_string(stage.index));
      }
      return FromVersion(store, stage, *pinned, WeightSource::kStashed);
    }
    case PolicyKind::kITiMePReSt: {
      auto used = store.Held(Role::kForward, stage, mini);
      if (!used) {
        throw SimError(ErrorCode::kUnknownVersion,
                       "no forward resolution recorded for mini-batch " +
                           std::to_string(mini) + " at stage " +
                           std::to_string(stage.index));
      }
      ResolvedWeights out =
          FromVersion(store, stage, *used, WeightSource::kIntermediate);
      out.values = IntermediateWeights(out.values, out.delta, decay);
      store.Drop(Role::kForward, stage, mini);
      return out;
    }
  }
  throw SimError(ErrorCode::kInvalidArgument, "unhandled policy");
}

void CompleteForward(VersionStore& store, const Policy& policy, StageId stage,
                     int mini_batch) {
  if (policy.kind == PolicyKind::kTiMePReSt) {
    store.Drop(Role::kForward, stage, mini_batch);
  }
}

void CompleteBackward(VersionStore& store, const Policy& policy, StageId stage,
                      int mini_batch) {
  if (policy.kind == PolicyKind::kPipeDream) {
    store.Drop(Role::kAdmission, stage, mini_batch);
  }
}

void CommitUpdate(VersionStore& store, const Policy& policy, StageId stage,
                  WeightVersion next) {
  store.Commit(stage, std::move(next));
  if (policy.kind == PolicyKind::kVTiMePReSt && store.LiveCount(stage) != 1) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "V-TiMePReSt retained a stale version at stage " +
                       std::to_string(stage.index));
  }
}

std::vector<StageMemory> MemoryReport(const VersionStore& store,
                                      std::int64_t param_bytes_per_stage) {
  return MemoryReport(store, std::vector<std::int64_t>(store.stages(),
                                                       param_bytes_per_stage));
}

std::vector<StageMemory> MemoryReport(
    const VersionStore& store, const std::vector<std::int64_t>& param_bytes) {
  if (static_cast<int>(param_bytes.size()) != store.stages()) {
    throw SimError(ErrorCode::kDimensionMismatch,
                   "need one parameter byte count per stage");
  }
  std::vector<StageMemory> out;
  for (int s = 0; s < store.stages(); ++s) {
    const int peak = store.peak_live_counts()[s];
    out.push_back(StageMemory{StageId{s}, peak, peak * param_bytes[s]});
  }
  return out;
}

void WriteMemoryReportHeader(std::ostream& out) {
  out << "policy,stage,peak_live_versions,peak_bytes\n";
}

void WriteMemoryReportRows(PolicyKind policy,
                           const std::vector<StageMemory>& report,
                           std::ostream& out) {
  for (const StageMemory& row : report) {
    out << PolicyName(policy) << ',' << row.stage.index << ','
        << row.peak_live_versions << ',' << row.peak_bytes << '\n';
  }
}

}  // namespace pipesim
