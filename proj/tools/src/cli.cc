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

#include "pipesim/cli.h"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pipesim/versioning.h"

namespace pipesim::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

template <typename T>
T LowerMedian(std::vector<T> values) {
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

// Epochs to a threshold with "never" mapped past the last epoch.
int EpochsOrSentinel(const std::optional<int>& e, int epochs) {
  return e ? *e : epochs + 1;
}

Json OptionalInt(std::optional<std::int64_t> v) {
  return v ? Json(*v) : Json(nullptr);
}

std::ofstream OpenOut(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw SimError(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  }
  return out;
}

void MakeDirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw SimError(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  }
}

std::string CellName(const SimConfig& cfg) {
  return "S=" + std::to_string(cfg.stages) + " M=" + std::to_string(cfg.mini_batches) +
         " m=" + std::to_string(cfg.micro_batches);
}

std::string Digits(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return "[" + s + "]";
}

}  // namespace

void ValidateSpec(const ExperimentSpec& spec) {
  if (spec.policies.empty()) {
    throw SimError(ErrorCode::kInvalidArgument, "experiment needs at least one policy");
  }
  if (spec.seeds.empty()) {
    throw SimError(ErrorCode::kInvalidArgument, "experiment needs at least one seed");
  }
  ValidateConfig(spec.base);
}

TrainerOptions OptionsFor(const SimConfig& cfg) {
  TrainerOptions o;
  const int unit = cfg.mini_batches * cfg.micro_batches;
  if (o.data.samples % unit != 0) {
    o.data.samples = (o.data.samples / unit + 1) * unit;
  }
  return o;
}

int WorkerCount() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("PIPESIM_THREADS")) {
    std::string_view s(env);
    int cap = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), cap);
    if (ec != std::errc() || p != s.data() + s.size() || cap < 1) {
      throw SimError(ErrorCode::kInvalidArgument,
                     "PIPESIM_THREADS must be a positive integer, got '" +
                         std::string(s) + "'");
    }
    n = std::min(n, cap);
  }
  return n;
}

std::vector<CellResult> RunCells(const ExperimentSpec& spec, int workers) {
  ValidateSpec(spec);
  const TrainerOptions options = OptionsFor(spec.base);

  std::vector<Dataset> datasets;
  for (std::uint64_t seed : spec.seeds) {
    datasets.push_back(MakeDataset(options.data, seed));
  }

  const size_t P = spec.policies.size();
  std::vector<CellResult> cells(spec.seeds.size() * P);
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<size_t> next{0};

  auto work = [&] {
    for (size_t i = next++; i < cells.size(); i = next++) {
      try {
        SimConfig cfg = spec.base;
        cfg.seed = spec.seeds[i / P];
        cfg.policy.kind = spec.policies[i % P];
        Trainer trainer(cfg, options, datasets[i / P]);
        CellResult& c = cells[i];
        c.policy = cfg.policy.kind;
        c.seed = cfg.seed;
        c.run = trainer.RunAll();
        c.epochs_to_loss = EpochsToLoss(c.run, spec.loss_threshold);
        c.epochs_to_accuracy = EpochsToAccuracy(c.run, spec.accuracy_threshold);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const int n = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(work);
    work();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return cells;
}

std::string SummaryJson(const ExperimentSpec& spec,
                        const std::vector<CellResult>& cells) {
  Json root;
  root["config"] = Json::parse(ConfigToJson(spec.base));
  root["seeds"] = spec.seeds;
  root["loss_threshold"] = spec.loss_threshold;
  root["accuracy_threshold"] = spec.accuracy_threshold;

  const int E = spec.base.epochs;
  Json policies = Json::object();
  for (PolicyKind kind : spec.policies) {
    std::vector<int> to_loss, to_acc;
    std::vector<double> final_loss;
    std::vector<int> peak_versions;
    std::vector<std::int64_t> peak_bytes;
    Tick span = 0;
    Json per_seed = Json::array();
    for (const CellResult& c : cells) {
      if (c.policy != kind) continue;
      span = c.run.epoch_span;
      to_loss.push_back(EpochsOrSentinel(c.epochs_to_loss, E));
      to_acc.push_back(EpochsOrSentinel(c.epochs_to_accuracy, E));
      final_loss.push_back(c.run.epochs.back().loss);
      peak_versions.resize(c.run.memory.size(), 0);
      peak_bytes.resize(c.run.memory.size(), 0);
      for (size_t s = 0; s < c.run.memory.size(); ++s) {
        peak_versions[s] = std::max(peak_versions[s], c.run.memory[s].peak_live_versions);
        peak_bytes[s] = std::max(peak_bytes[s], c.run.memory[s].peak_bytes);
      }
      Json row;
      row["seed"] = c.seed;
      row["epochs_to_threshold"] = OptionalInt(c.epochs_to_loss);
      row["ticks_to_threshold"] = OptionalInt(
          c.epochs_to_loss ? std::optional<std::int64_t>(*c.epochs_to_loss * span)
                           : std::nullopt);
      row["epochs_to_accuracy"] = OptionalInt(c.epochs_to_accuracy);
      row["final_loss"] = c.run.epochs.back().loss;
      row["final_top1_acc"] = c.run.epochs.back().top1_acc;
      per_seed.push_back(std::move(row));
    }
    if (to_loss.empty()) continue;

    const int med_loss = LowerMedian(to_loss);
    const int med_acc = LowerMedian(to_acc);
    std::optional<std::int64_t> epochs_loss, epochs_acc, ticks_loss;
    if (med_loss <= E) {
      epochs_loss = med_loss;
      ticks_loss = med_loss * span;
    }
    if (med_acc <= E) epochs_acc = med_acc;

    Json p;
    p["epochs_to_threshold"] = OptionalInt(epochs_loss);
    p["ticks_to_threshold"] = OptionalInt(ticks_loss);
    p["epochs_to_accuracy"] = OptionalInt(epochs_acc);
    p["epoch_span"] = span;
    p["final_loss"] = LowerMedian(final_loss);
    p["peak_live_versions"] = peak_versions;
    p["peak_bytes"] = peak_bytes;
    p["per_seed"] = std::move(per_seed);
    policies[std::string(PolicyName(kind))] = std::move(p);
  }
  root["policies"] = std::move(policies);
  return root.dump(2) + "\n";
}

void WriteArtifacts(const ExperimentSpec& spec,
                    const std::vector<CellResult>& cells) {
  const fs::path dir(spec.output_dir);
  MakeDirs(dir / "trainruns");
  for (const CellResult& c : cells) {
    auto out = OpenOut(dir / "trainruns" /
                       (std::string(PolicyName(c.policy)) + "_seed" +
                        std::to_string(c.seed) + ".csv"));
    WriteTrainRunCsv(c.run, out);
  }
  {
    // Retention depends on the schedule only, so the first seed stands for all.
    auto out = OpenOut(dir / "memory.csv");
    WriteMemoryReportHeader(out);
    for (PolicyKind kind : spec.policies) {
      auto it = std::find_if(cells.begin(), cells.end(),
                             [&](const CellResult& c) { return c.policy == kind; });
      if (it != cells.end()) WriteMemoryReportRows(kind, it->run.memory, out);
    }
  }
  OpenOut(dir / "config.json") << ConfigToJson(spec.base) << "\n";
  OpenOut(dir / "summary.json") << SummaryJson(spec, cells);
}

std::vector<Check> VerifyConfig(const SimConfig& cfg_in, const VerifyOptions& options) {
  SimConfig cfg = cfg_in;
  ValidateConfig(cfg);
  cfg.epochs = options.epochs;
  std::vector<Check> checks;

  // Schedule validity, both families.
  {
    Check c{"schedule", true, ""};
    SimConfig pd = cfg;
    pd.policy.kind = PolicyKind::kPipeDream;
    SimConfig nf = cfg;
    if (!UsesNf1b(nf.policy.kind)) nf.policy.kind = PolicyKind::kVTiMePReSt;
    Timeline t1 = BuildTimeline(pd);
    Timeline tn = BuildTimeline(nf);
    if (options.mutate_timeline) options.mutate_timeline(tn);
    for (const auto& [name, t, sc] : {std::tuple{"1F1B", &t1, &pd},
                                      std::tuple{"nF1B", &tn, &nf}}) {
      for (const Violation& v : VerifyTimeline(*t, *sc)) {
        c.passed = false;
        c.detail += std::string(name) + " " + std::string(ViolationKindName(v.kind)) +
                    " at stage " + std::to_string(v.stage.index) + ": " + v.detail + "; ";
      }
    }
    if (!IsAcyclic(BuildDependencyGraph(cfg, true)) ||
        !IsAcyclic(BuildDependencyGraph(cfg, false))) {
      c.passed = false;
      c.detail += "dependency graph has a cycle; ";
    }
    SimConfig one = nf;
    one.micro_batches = 1;
    SimConfig one_pd = pd;
    one_pd.micro_batches = 1;
    const Tick a = BuildTimeline(one).epoch_span;
    const Tick b = BuildTimeline(one_pd).epoch_span;
    if (a != b) {
      c.passed = false;
      c.detail += "nF1B with one micro-batch spans " + std::to_string(a) +
                  " ticks, 1F1B spans " + std::to_string(b) + "; ";
    }
    checks.push_back(c);

    Check thr{"throughput", tn.epoch_span <= t1.epoch_span,
              "nF1B " + std::to_string(tn.epoch_span) + " vs 1F1B " +
                  std::to_string(t1.epoch_span) + " ticks"};
    checks.push_back(thr);
  }

  const TrainerOptions topts = OptionsFor(cfg);
  const Dataset data = MakeDataset(topts.data, cfg.seed);
  std::map<PolicyKind, TrainRun> runs;
  for (PolicyKind kind : AllPolicies()) {
    SimConfig c = cfg;
    c.policy.kind = kind;
    Trainer trainer(c, topts, data);
    runs[kind] = trainer.RunAll();
  }
  auto max_delta = [&](PolicyKind k) {
    int m = 0;
    for (const auto& r : runs[k].resolutions) m = std::max(m, r.staleness.delta);
    return m;
  };

  {
    Check c{"staleness", true, ""};
    if (max_delta(PolicyKind::kVTiMePReSt) != 0) {
      c.passed = false;
      c.detail += "V-TiMePReSt recorded delta " +
                  std::to_string(max_delta(PolicyKind::kVTiMePReSt)) + "; ";
    }
    if (cfg.stages >= 2 && cfg.mini_batches >= 4) {
      for (PolicyKind k : {PolicyKind::kPipeDream, PolicyKind::kTiMePReSt}) {
        if (max_delta(k) == 0) {
          c.passed = false;
          c.detail += std::string(PolicyName(k)) + " never saw stale weights; ";
        }
      }
    }
    checks.push_back(c);
  }

  {
    Check c{"memory", true, ""};
    const PolicyKind order[] = {PolicyKind::kVTiMePReSt, PolicyKind::kTiMePReSt,
                                PolicyKind::kITiMePReSt, PolicyKind::kPipeDream};
    std::vector<std::vector<int>> peaks;
    for (PolicyKind k : order) {
      std::vector<int> p;
      for (const StageMemory& m : runs[k].memory) p.push_back(m.peak_live_versions);
      peaks.push_back(p);
    }
    for (int s = 0; s < cfg.stages; ++s) {
      bool ok = peaks[0][s] == 1;
      for (size_t i = 1; i < peaks.size(); ++i) ok = ok && peaks[i - 1][s] <= peaks[i][s];
      if (!ok) {
        c.passed = false;
        c.detail += "stage " + std::to_string(s) + " out of order; ";
      }
    }
    if (!c.passed) {
      for (size_t i = 0; i < peaks.size(); ++i) {
        c.detail += std::string(PolicyName(order[i])) + Digits(peaks[i]) + " ";
      }
    }
    checks.push_back(c);
  }

  {
    Check c{"commits", true, ""};
    for (const auto& [kind, run] : runs) {
      for (size_t s = 0; s < run.commits_per_stage.size(); ++s) {
        if (run.commits_per_stage[s] != cfg.mini_batches * cfg.epochs) {
          c.passed = false;
          c.detail += std::string(PolicyName(kind)) + " stage " + std::to_string(s) +
                      " committed " + std::to_string(run.commits_per_stage[s]) + "; ";
        }
      }
    }
    checks.push_back(c);
  }
  return checks;
}

std::vector<Check> VerifySweep(const SimConfig& base, const VerifyOptions& options) {
  std::vector<Check> out;
  for (int S : {2, 4}) {
    for (int M : {4, 8}) {
      for (int m : {1, 2}) {
        SimConfig cfg = base;
        cfg.stages = S;
        cfg.mini_batches = M;
        cfg.micro_batches = m;
        for (Check c : VerifyConfig(cfg, options)) {
          c.name = CellName(cfg) + " " + c.name;
          out.push_back(std::move(c));
        }
      }
    }
  }
  return out;
}

namespace {

struct ConfigFlags {
  std::string config_path;
  int stages = 0, mini = 0, micro = 0, fwd = 0, bwd = 0, epochs = 0;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  std::string out;
  CLI::Option* o_stages = nullptr;
  CLI::Option* o_mini = nullptr;
  CLI::Option* o_micro = nullptr;
  CLI::Option* o_fwd = nullptr;
  CLI::Option* o_bwd = nullptr;
  CLI::Option* o_epochs = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_lambda = nullptr;

  void Attach(CLI::App* app, const std::string& default_out) {
    out = default_out;
    app->add_option("--config", config_path, "JSON config file");
    o_stages = app->add_option("--stages", stages, "pipeline stages");
    o_mini = app->add_option("--mini-batches", mini, "mini-batches per epoch");
    o_micro = app->add_option("--micro-batches", micro, "micro-batches per mini-batch");
    o_fwd = app->add_option("--fwd-cost", fwd, "ticks per micro-batch forward");
    o_bwd = app->add_option("--bwd-cost", bwd, "ticks per mini-batch backward");
    o_epochs = app->add_option("--epochs", epochs, "training epochs");
    o_seed = app->add_option("--seed", seed, "random seed");
    o_lambda = app->add_option("--lambda", lambda, "staleness decay rate");
    app->add_option("--out", out, "output directory")->capture_default_str();
  }

  // Defaults, then the config file, then explicit flags.
  SimConfig Build() const {
    SimConfig cfg;
    if (!config_path.empty()) cfg = LoadConfigFile(config_path, cfg);
    if (o_stages->count()) cfg.stages = stages;
    if (o_mini->count()) cfg.mini_batches = mini;
    if (o_micro->count()) cfg.micro_batches = micro;
    if (o_fwd->count()) cfg.fwd_cost = fwd;
    if (o_bwd->count()) cfg.bwd_cost = bwd;
    if (o_epochs->count()) cfg.epochs = epochs;
    if (o_seed->count()) cfg.seed = seed;
    if (o_lambda->count()) cfg.policy.lambda = lambda;
    return cfg;
  }
};

int PrintChecks(const std::vector<Check>& checks, std::ostream& out) {
  int failed = 0;
  for (const Check& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name;
    if (!c.passed && !c.detail.empty()) out << ": " << c.detail;
    out << "\n";
    failed += !c.passed;
  }
  out << (failed ? std::to_string(failed) + " invariant check(s) failed\n"
                 : "all invariant checks passed\n");
  return failed ? kExitInvariant : kExitOk;
}

// Corruptions for the verify negative control.
std::function<void(Timeline&)> FaultInjector(const std::string& kind) {
  if (kind == "overlap") {
    return [](Timeline& t) {
      // Pull the second event on stage 0 onto the first.
      const ScheduleEvent* first = nullptr;
      for (ScheduleEvent& e : t.events) {
        if (e.stage.index != 0) continue;
        if (!first) {
          first = &e;
          continue;
        }
        const Tick d = e.duration();
        e.start_tick = first->start_tick;
        e.end_tick = e.start_tick + d;
        break;
      }
    };
  }
  if (kind == "dependency") {
    return [](Timeline& t) {
      // Start the last backward at tick 0, before its forward.
      for (auto it = t.events.rbegin(); it != t.events.rend(); ++it) {
        if (it->pass == Pass::kBackward) {
          const Tick d = it->duration();
          it->start_tick = 0;
          it->end_tick = d;
          break;
        }
      }
    };
  }
  throw SimError(ErrorCode::kInvalidArgument,
                 "unknown fault '" + kind + "' (valid: overlap, dependency)");
}

}  // namespace

int RunMain(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pipeline-parallel training simulator", "pipesim"};
  app.require_subcommand(1);

  ConfigFlags sched_flags, run_flags, verify_flags;
  std::string sched_policy;
  std::vector<std::string> run_policies;
  std::vector<std::uint64_t> run_seeds;
  double loss_threshold = ExperimentSpec{}.loss_threshold;
  double acc_threshold = ExperimentSpec{}.accuracy_threshold;
  std::string verify_policy;
  bool sweep = false;
  std::string fault;

  CLI::App* sched = app.add_subcommand("schedule", "write timeline.csv and print a Gantt grid");
  sched_flags.Attach(sched, ".");
  CLI::Option* sched_policy_opt =
      sched->add_option("--policy", sched_policy, "policy (selects 1F1B or nF1B)");

  CLI::App* run = app.add_subcommand("run", "train every (policy, seed) cell");
  run_flags.Attach(run, "runs");
  run->add_option("--policy", run_policies, "policies, comma separated (default: all)")
      ->delimiter(',');
  run->add_option("--seeds", run_seeds, "seeds, comma separated (default: --seed)")
      ->delimiter(',');
  run->add_option("--loss-threshold", loss_threshold, "loss target")->capture_default_str();
  run->add_option("--accuracy-threshold", acc_threshold, "top-1 target")
      ->capture_default_str();

  CLI::App* verify = app.add_subcommand("verify", "check schedule and versioning invariants");
  verify_flags.Attach(verify, ".");
  CLI::Option* verify_policy_opt = verify->add_option("--policy", verify_policy, "policy");
  verify->add_flag("--sweep", sweep, "check every cell of the standard sweep");
  verify->add_option("--inject-fault", fault, "corrupt the nF1B timeline (testing)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  // Setup errors are usage errors; failures while executing are not.
  SimConfig cfg;
  ExperimentSpec spec;
  VerifyOptions vo;
  int workers = 1;
  try {
    if (sched->parsed()) {
      cfg = sched_flags.Build();
      if (sched_policy_opt->count()) cfg.policy.kind = ParsePolicyKind(sched_policy);
      ValidateConfig(cfg);
    } else if (run->parsed()) {
      spec.base = run_flags.Build();
      if (!run_policies.empty()) {
        spec.policies.clear();
        for (const std::string& p : run_policies) spec.policies.push_back(ParsePolicyKind(p));
      }
      spec.seeds = run_seeds.empty() ? std::vector<std::uint64_t>{spec.base.seed} : run_seeds;
      spec.output_dir = run_flags.out;
      spec.loss_threshold = loss_threshold;
      spec.accuracy_threshold = acc_threshold;
      ValidateSpec(spec);
      workers = WorkerCount();
    } else {
      cfg = verify_flags.Build();
      if (verify_policy_opt->count()) cfg.policy.kind = ParsePolicyKind(verify_policy);
      ValidateConfig(cfg);
      if (!fault.empty()) vo.mutate_timeline = FaultInjector(fault);
    }
  } catch (const SimError& e) {
    err << "pipesim: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (sched->parsed()) {
      Timeline t = BuildTimeline(cfg);
      MakeDirs(sched_flags.out);
      auto csv = OpenOut(fs::path(sched_flags.out) / "timeline.csv");
      WriteTimelineCsv(t, csv);
      out << RenderGantt(t, cfg.stages);
      out << "epoch_span " << t.epoch_span << " idle";
      for (Tick idle : t.idle_ticks_per_stage) out << ' ' << idle;
      out << "\n";
      return kExitOk;
    }
    if (run->parsed()) {
      auto cells = RunCells(spec, workers);
      WriteArtifacts(spec, cells);
      out << "wrote " << cells.size() << " runs to " << spec.output_dir << "\n";
      return kExitOk;
    }
    return PrintChecks(sweep ? VerifySweep(cfg, vo) : VerifyConfig(cfg, vo), out);
  } catch (const SimError& e) {
    err << "pipesim: " << e.what() << "\n";
    return e.code() == ErrorCode::kIo ? kExitUsage : kExitInvariant;
  } catch (const std::exception& e) {
    err << "pipesim: " << e.what() << "\n";
    return kExitInvariant;
  }
}

}  // namespace pipesim::cli
