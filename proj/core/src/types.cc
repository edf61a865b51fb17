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

#include "pipesim/types.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace pipesim {

using json = nlohmann::json;

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kStageCountTooSmall: return "StageCountTooSmall";
    case ErrorCode::kMiniBatchCountTooSmall: return "MiniBatchCountTooSmall";
    case ErrorCode::kMicroBatchCountTooSmall: return "MicroBatchCountTooSmall";
    case ErrorCode::kNonPositiveCost: return "NonPositiveCost";
    case ErrorCode::kEpochCountTooSmall: return "EpochCountTooSmall";
    case ErrorCode::kNonPositiveLambda: return "NonPositiveLambda";
    case ErrorCode::kUnknownPolicy: return "UnknownPolicy";
    case ErrorCode::kMalformedConfig: return "MalformedConfig";
    case ErrorCode::kMissingVersion: return "MissingVersion";
    case ErrorCode::kNonMonotonicVersion: return "NonMonotonicVersion";
    case ErrorCode::kUnknownVersion: return "UnknownVersion";
    case ErrorCode::kNegativeDelta: return "NegativeDelta";
    case ErrorCode::kFactorOutOfRange: return "FactorOutOfRange";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kMissingForwardCache: return "MissingForwardCache";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

std::string_view PolicyName(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kPipeDream: return "PipeDream";
    case PolicyKind::kTiMePReSt: return "TiMePReSt";
    case PolicyKind::kVTiMePReSt: return "V-TiMePReSt";
    case PolicyKind::kITiMePReSt: return "I-TiMePReSt";
  }
  return "?";
}

const std::vector<PolicyKind>& AllPolicies() {
  static const std::vector<PolicyKind> kAll = {
      PolicyKind::kPipeDream, PolicyKind::kTiMePReSt, PolicyKind::kVTiMePReSt,
      PolicyKind::kITiMePReSt};
  return kAll;
}

std::string ValidPolicyNames() {
  std::string out;
  for (PolicyKind kind : AllPolicies()) {
    if (!out.empty()) out += ", ";
    out += PolicyName(kind);
  }
  return out;
}

namespace {

std::string Normalize(std::string_view name) {
  std::string out;
  for (char c : name) {
    if (c == '-' || c == '_') continue;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

}  // namespace

PolicyKind ParsePolicyKind(std::string_view name) {
  const std::string key = Normalize(name);
  for (PolicyKind kind : AllPolicies()) {
    if (Normalize(PolicyName(kind)) == key) return kind;
  }
  throw SimError(ErrorCode::kUnknownPolicy,
                 "unknown policy '" + std::string(name) +
                     "'; valid names: " + ValidPolicyNames());
}

const SimConfig& ValidateConfig(const SimConfig& cfg) {
  if (cfg.stages < 2) {
    throw SimError(ErrorCode::kStageCountTooSmall,
                   "stages must be >= 2, got " + std::to_string(cfg.stages));
  }
  if (cfg.mini_batches < 1) {
    throw SimError(ErrorCode::kMiniBatchCountTooSmall,
                   "mini_batches must be >= 1, got " +
                       std::to_string(cfg.mini_batches));
  }
  if (cfg.micro_batches < 1) {
    throw SimError(ErrorCode::kMicroBatchCountTooSmall,
                   "micro_batches must be >= 1, got " +
                       std::to_string(cfg.micro_batches));
  }
  if (cfg.fwd_cost < 1 || cfg.bwd_cost < 1) {
    throw SimError(ErrorCode::kNonPositiveCost,
                   "fwd_cost and bwd_cost must be >= 1");
  }
  if (cfg.epochs < 1) {
    throw SimError(ErrorCode::kEpochCountTooSmall,
                   "epochs must be >= 1, got " + std::to_string(cfg.epochs));
  }
  if (cfg.policy.kind == PolicyKind::kITiMePReSt &&
      !(cfg.policy.lambda > 0.0 && std::isfinite(cfg.policy.lambda))) {
    throw SimError(ErrorCode::kNonPositiveLambda,
                   "lambda must be a finite value > 0 for I-TiMePReSt");
  }
  return cfg;
}

std::string ConfigToJson(const SimConfig& cfg) {
  json j = json::object();
  j["stages"] = cfg.stages;
  j["mini_batches"] = cfg.mini_batches;
  j["micro_batches"] = cfg.micro_batches;
  j["fwd_cost"] = cfg.fwd_cost;
  j["bwd_cost"] = cfg.bwd_cost;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  j["policy"] = std::string(PolicyName(cfg.policy.kind));
  j["lambda"] = cfg.policy.lambda;
  return j.dump(2);
}

namespace {

template <typename T>
void ReadKey(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw SimError(ErrorCode::kMalformedConfig,
                   std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

SimConfig ConfigFromJson(std::string_view text, SimConfig base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SimError(ErrorCode::kMalformedConfig, e.what());
  }
  if (!j.is_object()) {
    throw SimError(ErrorCode::kMalformedConfig, "config must be a JSON object");
  }
  static const std::vector<std::string> kKeys = {
      "stages", "mini_batches", "micro_batches", "fwd_cost", "bwd_cost",
      "epochs", "seed", "policy", "lambda"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
      throw SimError(ErrorCode::kMalformedConfig, "unknown key '" + key + "'");
    }
  }
  SimConfig cfg = base;
  ReadKey(j, "stages", cfg.stages);
  ReadKey(j, "mini_batches", cfg.mini_batches);
  ReadKey(j, "micro_batches", cfg.micro_batches);
  ReadKey(j, "fwd_cost", cfg.fwd_cost);
  ReadKey(j, "bwd_cost", cfg.bwd_cost);
  ReadKey(j, "epochs", cfg.epochs);
  ReadKey(j, "seed", cfg.seed);
  ReadKey(j, "lambda", cfg.policy.lambda);
  std::string policy;
  ReadKey(j, "policy", policy);
  if (!policy.empty()) cfg.policy.kind = ParsePolicyKind(policy);
  return cfg;
}

SimConfig LoadConfigFile(const std::string& path, SimConfig base) {
  std::ifstream in(path);
  if (!in) throw SimError(ErrorCode::kIo, "cannot open config " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ConfigFromJson(buffer.str(), base);
}

}  // namespace pipesim
