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

#ifndef PIPESIM_VERSIONING_H_
#define PIPESIM_VERSIONING_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "pipesim/staleness.h"
#include "pipesim/types.h"

namespace pipesim {

// Per-stage weight versions with consumer reference counts.
//
// A version other than the latest is evicted as soon as no mini-batch holds
// a reference to it. Policies differ only in which references they take:
//   V-TiMePReSt  none, so every commit drops the previous version;
//   TiMePReSt    the forward-pass-start version of every stage, until the
//                mini-batch's forward at that stage completes;
//   I-TiMePReSt  the same forward-pass-start version, until the intermediate
//                weights for the backward at that stage have been computed;
//   PipeDream    the admission-time version of every stage, until that
//                stage's backward completes.
//
// Peak live counts are sampled at event boundaries (MarkBoundary), so the
// transient old+new overlap inside Commit never shows up.
class VersionStore {
 public:
  explicit VersionStore(std::vector<std::vector<double>> initial_weights);

  int stages() const { return static_cast<int>(stages_.size()); }

  const WeightVersion& Latest(StageId stage) const;
  // Throws kMissingVersion if `id` was evicted or never existed.
  const WeightVersion& Get(StageId stage, VersionId id) const;
  bool IsLive(StageId stage, VersionId id) const;
  std::vector<VersionId> LiveVersions(StageId stage) const;
  int LiveCount(StageId stage) const;

  void AddConsumer(StageId stage, VersionId id, int mini_batch);
  // Drops one reference and evicts the version if it became unreferenced.
  void RemoveConsumer(StageId stage, VersionId id, int mini_batch);
  std::set<int> Consumers(StageId stage, VersionId id) const;

  // Requires next.version_id == Latest(stage).version_id + 1 and a matching
  // parameter count; throws kNonMonotonicVersion / kDimensionMismatch.
  void Commit(StageId stage, WeightVersion next);

  void MarkBoundary();
  const std::vector<int>& peak_live_counts() const { return peaks_; }

  // Policy bookkeeping: the version a mini-batch holds at a stage for a
  // given role.
  enum class Role { kAdmission, kForward };
  std::optional<VersionId> Held(Role role, StageId stage, int mini_batch) const;
  void Hold(Role role, StageId stage, int mini_batch, VersionId id);
  void Drop(Role role, StageId stage, int mini_batch);

 private:
  struct Entry {
    WeightVersion version;
    std::map<int, int> consumers;  // mini-batch -> reference count
  };
  struct StageVersions {
    std::map<VersionId, Entry> live;
    std::size_t param_count = 0;
  };

  StageVersions& At(StageId stage);
  const StageVersions& At(StageId stage) const;
  void EvictUnreferenced(StageVersions& sv);

  std::vector<StageVersions> stages_;
  std::vector<int> peaks_;
  std::map<std::tuple<int, int, int>, VersionId> held_;
};

enum class WeightSource { kLatest, kStashed, kIntermediate };

std::string_view WeightSourceName(WeightSource source);

// Weights a pass computes with. `version_id` is the version they derive
// from; for kIntermediate the values are the transformed stale weights.
struct ResolvedWeights {
  StageId stage;
  std::vector<double> values;
  WeightSource source = WeightSource::kLatest;
  VersionId version_id = 0;
  int delta = 0;
};

// Forward pass. PipeDream, TiMePReSt and I-TiMePReSt snapshot the latest
// version of every stage when the mini-batch enters stage 0 and compute the
// whole forward pass with it; V-TiMePReSt returns the latest version.
ResolvedWeights ResolveForward(VersionStore& store, const Policy& policy,
                               StageId stage, const BatchRef& batch);

// Backward pass. V-TiMePReSt and TiMePReSt: latest at this stage.
// PipeDream: the admission pin. I-TiMePReSt: the forward-used version scaled
// by IntermediateFactor(Significance(delta)), after which the stale
// version's reference is released.
ResolvedWeights ResolveBackward(VersionStore& store, const Policy& policy,
                                StageId stage, const BatchRef& batch,
                                const DecayParams& decay);

// Called when the mini-batch's last forward at `stage` ends.
void CompleteForward(VersionStore& store, const Policy& policy, StageId stage,
                     int mini_batch);

// Releases the references the mini-batch held at `stage` for its backward.
void CompleteBackward(VersionStore& store, const Policy& policy, StageId stage,
                      int mini_batch);

// Appends a new version and evicts every unreferenced older one.
void CommitUpdate(VersionStore& store, const Policy& policy, StageId stage,
                  WeightVersion next);

struct StageMemory {
  StageId stage;
  int peak_live_versions = 0;
  std::int64_t peak_bytes = 0;
};

std::vector<StageMemory> MemoryReport(const VersionStore& store,
                                      std::int64_t param_bytes_per_stage);
std::vector<StageMemory> MemoryReport(
    const VersionStore& store, const std::vector<std::int64_t>& param_bytes);

// CSV: policy,stage,peak_live_versions,peak_bytes
void WriteMemoryReportHeader(std::ostream& out);
void WriteMemoryReportRows(PolicyKind policy,
                           const std::vector<StageMemory>& report,
                           std::ostream& out);

}  // namespace pipesim

#endif  // PIPESIM_VERSIONING_H_
