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

#ifndef PIPESIM_TYPES_H_
#define PIPESIM_TYPES_H_

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pipesim {

// Every failure the library reports carries one of these codes so callers
// (and the CLI's exit-code mapping) can branch without parsing messages.
enum class ErrorCode {
  kStageCountTooSmall,
  kMiniBatchCountTooSmall,
  kMicroBatchCountTooSmall,
  kNonPositiveCost,
  kEpochCountTooSmall,
  kNonPositiveLambda,
  kUnknownPolicy,
  kMalformedConfig,
  kMissingVersion,
  kNonMonotonicVersion,
  kUnknownVersion,
  kNegativeDelta,
  kFactorOutOfRange,
  kDimensionMismatch,
  kMissingForwardCache,
  kInvalidArgument,
  kIo,
};

std::string_view ErrorCodeName(ErrorCode code);

class SimError : public std::runtime_error {
 public:
  SimError(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Zero-based pipeline stage index.
struct StageId {
  int index = 0;

  friend constexpr auto operator<=>(const StageId&, const StageId&) = default;
};

using VersionId = std::int64_t;
using Tick = std::int64_t;

// One-based mini-batch id plus, for forward work under nF1B, the zero-based
// micro-batch index. Backward work always refers to the whole mini-batch.
struct BatchRef {
  int mini_batch = 1;
  std::optional<int> micro_batch;

  friend bool operator==(const BatchRef&, const BatchRef&) = default;
};

enum class PolicyKind { kPipeDream, kTiMePReSt, kVTiMePReSt, kITiMePReSt };

inline constexpr double kDefaultLambda = 0.5;

struct Policy {
  PolicyKind kind = PolicyKind::kVTiMePReSt;
  // Decay rate of the staleness significance; only consulted by
  // I-TiMePReSt but always serialized.
  double lambda = kDefaultLambda;

  friend bool operator==(const Policy&, const Policy&) = default;
};

// True for the three policies that run on the nF1B schedule.
constexpr bool UsesNf1b(PolicyKind kind) {
  return kind != PolicyKind::kPipeDream;
}

std::string_view PolicyName(PolicyKind kind);
// Accepts the canonical names ("PipeDream", "TiMePReSt", "V-TiMePReSt",
// "I-TiMePReSt") case-insensitively, with or without the dash.
PolicyKind ParsePolicyKind(std::string_view name);
const std::vector<PolicyKind>& AllPolicies();
std::string ValidPolicyNames();

struct WeightVersion {
  VersionId version_id = 0;
  // Mini-batch whose update produced this version; 0 for the initial weights.
  int produced_by = 0;
  std::vector<double> values;
};

struct SimConfig {
  int stages = 4;
  int mini_batches = 8;
  int micro_batches = 2;
  // Ticks per forward of one micro-batch worth of samples.
  int fwd_cost = 1;
  // Ticks per (collective) backward of one mini-batch.
  int bwd_cost = 2;
  int epochs = 30;
  std::uint64_t seed = 1;
  Policy policy;

  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

// Returns cfg unchanged when every invariant holds; throws SimError with a
// code specific to the first violated rule otherwise.
const SimConfig& ValidateConfig(const SimConfig& cfg);

// Flat key/value JSON with keys stages, mini_batches, micro_batches,
// fwd_cost, bwd_cost, epochs, seed, policy, lambda.
std::string ConfigToJson(const SimConfig& cfg);
// Missing keys keep the values already in `base`; unknown keys are rejected.
SimConfig ConfigFromJson(std::string_view text, SimConfig base = {});
SimConfig LoadConfigFile(const std::string& path, SimConfig base = {});

}  // namespace pipesim

#endif  // PIPESIM_TYPES_H_
