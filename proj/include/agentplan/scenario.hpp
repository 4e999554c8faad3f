#pragma once

// Experiment orchestration: scenarios (workflows x query counts x schedulers,
// plus ablation variants and online sweeps), synthetic workloads and run
// manifests.
//
// Scenario document:
//   name: table3
//   workflows: [workflows/w5.yaml]     # relative to the scenario file
//   queries: [50, 250, 1000, 2000]
//   schedulers: [halo, rr, coloc, dp]
//   ablations: [parallelism, optimization, cache_reuse, adaptive_batching, ordering]
//   config: {...}                      # same keys as a config file
//   seed: 0
//   traces: false
//   online: {schedulers: [halo, topo], rates: [...], interval_s: 1.0, duration_s: 300}

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentplan/config.hpp"
#include "agentplan/online.hpp"

namespace agentplan {

enum class Toggle { kParallelism, kOptimization, kCacheReuse, kAdaptiveBatching, kOrdering };
const char* to_string(Toggle t);
Toggle parse_toggle(std::string_view s);

// The run with `t` switched off:
//   parallelism       one worker
//   optimization      topological order + data parallelism (the dp plan)
//   cache_reuse       no prefix cache / KV reuse, gamma = lambda = 1
//   adaptive_batching fixed static decode batches
//   ordering          fifo
struct Variant {
  std::string name;  // "full" or "no_<toggle>"
  Scheduler scheduler;
  RunConfig config;
};
Variant full_variant(Scheduler s, const RunConfig& cfg);
Variant toggle_off(Toggle t, Scheduler s, const RunConfig& cfg);

struct OnlineSpec {
  std::vector<Scheduler> schedulers;
  std::vector<double> rates = default_rate_sweep();
  double interval_s = 1.0;
  double duration_s = 300.0;
};

struct Scenario {
  std::string name;
  std::vector<std::string> workflows;  // resolved paths
  std::vector<std::size_t> queries;
  std::vector<Scheduler> schedulers;
  std::vector<Toggle> ablations;
  RunConfig config;
  std::uint64_t seed = 0;
  bool traces = false;
  std::optional<OnlineSpec> online;
};

Scenario parse_scenario(std::string_view doc, const std::string& base_dir = ".");
Scenario load_scenario(const std::string& path);

struct CellResult {
  std::string workflow;
  std::size_t queries = 0;
  Scheduler scheduler = Scheduler::kHalo;
  std::string variant;
  double estimated_cost_s = 0.0;
  Metrics metrics;
  nlohmann::json plan;
  std::string dot;
  std::string trace_ndjson;  // only when the scenario asks for traces
};

struct OnlineRow {
  std::string workflow;
  Scheduler scheduler = Scheduler::kHalo;
  SaturationReport report;
};

struct ScenarioReport {
  std::string name;
  std::vector<CellResult> cells;
  std::vector<OnlineRow> online;
};

// Runs one (workflow, n, variant) cell.
CellResult run_cell(const Workflow& wf, const std::string& workflow_name, std::size_t n, const Variant& v,
                    bool keep_trace);

// Cells run in parallel; the report keeps scenario order. With a non-empty
// `out_dir` writes table.csv, metrics.json, online.csv, plans/*.dot,
// traces/*.ndjson and manifest.json. Throws Error naming the failing cell.
ScenarioReport run_scenario(const Scenario& s, const std::string& out_dir = {});

std::string report_table_csv(const ScenarioReport& r);
std::string report_online_csv(const ScenarioReport& r);
nlohmann::json report_metrics_json(const ScenarioReport& r);

// Full resolved configuration of a run plus the command that produced it.
// `created_at` is the only non-reproducible field.
nlohmann::json make_manifest(const std::string& command, const RunConfig& cfg, const nlohmann::json& extra);

enum class WorkloadShape { kChain, kFanoutFanin, kMultiturn, kVoting };
const char* to_string(WorkloadShape s);
WorkloadShape parse_shape(std::string_view s);

// Deterministic synthetic workload with `k_ops` operators and `n_queries`
// queries whose token counts vary with `seed`.
Workflow generate_workload(WorkloadShape shape, std::size_t k_ops, std::size_t n_queries, std::uint64_t seed);

// Writes `content` to `path`, creating parent directories.
void write_file(const std::string& path, const std::string& content);

}  // namespace agentplan
