#pragma once

// Resolved configuration of one planning + simulation run, and the YAML
// config document that overrides it.
//
//   coefficients: {gamma, sigma, lambda, beta, gamma_prefill_only}
//   profile:
//     context_prep_seconds_per_token: 2.0e-5
//     handoff_seconds_per_token: 5.0e-6
//     models:
//       small: {load_seconds, prefill_seconds_per_token,
//               decode_seconds_per_token, transfer_seconds_per_token}
//   batching: {mode, fixed_batch, prefill_batch, decode_saturation_batch,
//              memory_capacity_tokens, prefix_cache_tokens}
//   ordering: length_sorted | priority | fifo
//   cache_reuse: true
//   search: {beam_width, workers, dp_threshold_seconds,
//            rank_weights: {out_degree, context_affinity}}

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "agentplan/baselines.hpp"
#include "agentplan/cost_model.hpp"
#include "agentplan/optimizer.hpp"
#include "agentplan/simulator.hpp"

namespace agentplan {

struct RunConfig {
  CostCoefficients coefficients;
  LatencyProfile profile = LatencyProfile::defaults();
  SearchConfig search;
  SimulationConfig simulation;

  void validate() const;
};

// Keys present in `doc` replace the corresponding fields of `base`.
RunConfig parse_config(std::string_view doc, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

nlohmann::json config_to_json(const RunConfig& cfg);

struct PlanResult {
  Assignment assignment;
  Nanos estimated_cost{0};  // Cost(f) under the planning cost model
  std::optional<SearchStats> stats;
};

// Cost model the planner uses: batching-aware throughput estimate and the
// coefficients in effect under cfg.simulation.cache_reuse.
CostModel make_cost_model(const WorkflowGraph& g, const TokenTable& tokens, const RunConfig& cfg);

PlanResult make_plan(Scheduler s, const WorkflowGraph& g, const TokenTable& tokens, const RunConfig& cfg);

}  // namespace agentplan
