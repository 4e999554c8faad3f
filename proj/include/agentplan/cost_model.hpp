#pragma once

// Analytic cost of (partial) operator-to-worker assignments.
//
//   C_a^d(f) = sum over v on d of  gamma_v * k_v^(1-beta) * e_v(shard d)
//                                 + sigma_v * lambda_v * p_v
//   C_a(f)   = max_d C_a^d(f)
//   C_r(f)   = (1 / m^beta) * sum over unassigned v of e_v
//   Cost(f)  = C_a(f) + C_r(f)
//
// For an evenly sharded replicated operator k^(1-beta) * e_v(shard) is the
// familiar e_v / k^beta; using the shard keeps uneven splits honest.

#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agentplan/units.hpp"
#include "agentplan/workflow.hpp"

namespace agentplan {

struct CostCoefficients {
  double gamma = 0.2;   // KV-cache reuse
  double sigma = 0.1;   // model-weight reuse
  double lambda = 0.5;  // retrieval / context reuse
  double beta = 0.8;    // parallelism decay
  // Restrict the gamma discount to the prefill share of e_v.
  bool gamma_prefill_only = false;

  void validate() const;  // throws ValidationError
  static CostCoefficients ones() { return {1.0, 1.0, 1.0, 1.0, false}; }
};

struct ModelProfile {
  Nanos load{0};                // load + warm-up
  Nanos prefill_per_token{0};
  Nanos decode_per_token{0};
  Nanos transfer_per_token{0};  // KV-cache transfer instead of recompute
};

struct LatencyProfile {
  std::map<std::string, ModelProfile, std::less<>> models;
  Nanos context_prep_per_token{0};
  // Cross-worker handoff of an operator's input; zero disables transfers.
  Nanos handoff_per_token{0};

  // Throws ProfileError for unknown models.
  const ModelProfile& model(std::string_view id) const;
  // Rates > 0 and transfer < prefill for every model.
  void validate() const;

  // Three model sizes ("small", "medium", "large") loosely shaped after 3B /
  // 8B / 32B-class models on one datacenter GPU.
  static LatencyProfile defaults();
};

// Per-operator inference cost split into its two phases.
struct InferenceCost {
  Nanos prefill{0};
  Nanos decode{0};
  Nanos total() const { return prefill + decode; }
};

// Effective batching speed-up per phase; 1 means one query at a time.
struct ThroughputFactor {
  double prefill = 1.0;
  double decode = 1.0;
};

// Supplied by the runtime's batching policy; maps (operator, shard size) to a
// throughput factor. An empty estimator means factor 1.
using ThroughputEstimator = std::function<ThroughputFactor(const OperatorSpec&, std::size_t)>;

// e_v = repeat * sum over queries of (input * prefill + output * decode),
// divided per phase by the throughput factor.
InferenceCost inference_cost(const WorkflowGraph& g, OpIndex v, const TokenTable& tokens,
                             std::span<const QueryIndex> queries, const LatencyProfile& prof,
                             ThroughputFactor factor = {});
InferenceCost inference_cost(const WorkflowGraph& g, OpIndex v, const TokenTable& tokens,
                             const LatencyProfile& prof, ThroughputFactor factor = {});

// p_v = load + context_tokens * context_prep rate + tool latency. Reuse
// discounts are applied by assigned_cost, not here.
Nanos prep_cost(const OperatorSpec& op, std::span<const OpIndex> worker_history, const LatencyProfile& prof);

struct Discounts {
  double gamma = 1.0;
  double sigma = 1.0;
  double lambda = 1.0;
  friend bool operator==(const Discounts&, const Discounts&) = default;
};

// Discount factors for each operator of one worker's sequence.
std::vector<Discounts> resolve_discounts(std::span<const OpIndex> seq, const WorkflowGraph& g,
                                         const CostCoefficients& coef);

// Contiguous equal split of [0, n) over `replicas` (sorted worker ids), the
// remainder going to the lowest worker index. Returns [begin, end) for `worker`.
std::pair<QueryIndex, QueryIndex> shard_range(std::size_t n, std::span<const WorkerIndex> replicas,
                                              WorkerIndex worker);

// The mapping f: per-worker ordered sequences plus the replica set of every
// assigned operator.
class PartialAssignment {
 public:
  PartialAssignment() = default;
  PartialAssignment(std::size_t workers, std::size_t ops);

  // Appends `op` to every replica's sequence. Replicas are stored sorted.
  void assign(OpIndex op, std::vector<WorkerIndex> replicas);

  std::size_t workers() const { return sequences_.size(); }
  std::size_t ops() const { return replicas_.size(); }
  const std::vector<OpIndex>& sequence(WorkerIndex d) const { return sequences_.at(d); }
  const std::vector<WorkerIndex>& replicas(OpIndex v) const { return replicas_.at(v); }
  bool assigned(OpIndex v) const { return !replicas_.at(v).empty(); }
  std::size_t assigned_count() const { return assigned_; }
  bool complete() const { return assigned_ == replicas_.size(); }
  std::vector<bool> assigned_mask() const;

  // Canonical encoding used for deterministic tie-breaking: per worker the
  // sequence of op indices, workers separated by -1.
  std::vector<long> encoding() const;

  friend bool operator==(const PartialAssignment&, const PartialAssignment&) = default;

 private:
  std::vector<std::vector<OpIndex>> sequences_;
  std::vector<std::vector<WorkerIndex>> replicas_;
  std::size_t assigned_ = 0;
};

using Assignment = PartialAssignment;

// Throws ValidationError if a sequence runs an operator before one of its
// parents on the same worker, or replica sets are inconsistent.
void validate_assignment(const WorkflowGraph& g, const PartialAssignment& f);

struct WorkerCosts {
  std::vector<Nanos> per_worker;
  Nanos max{0};
};

// Precomputes e_v for every (operator, replica count, shard) and p_v, then
// scores assignments in O(assigned operators).
class CostModel {
 public:
  CostModel(const WorkflowGraph& g, const TokenTable& tokens, const LatencyProfile& prof,
            CostCoefficients coef, std::size_t workers, ThroughputEstimator estimator = {});

  const WorkflowGraph& graph() const { return *g_; }
  const CostCoefficients& coefficients() const { return coef_; }
  std::size_t workers() const { return workers_; }
  std::size_t queries() const { return queries_; }

  // Full-batch e_v on one worker.
  Nanos inference(OpIndex v) const { return shard(v, 1, 0).total(); }
  const InferenceCost& shard(OpIndex v, std::size_t k, std::size_t shard_index) const;
  Nanos prep(OpIndex v) const { return prep_[v]; }

  // Inference term of v on one replica, after gamma and the k^(1-beta) factor.
  Nanos inference_term(OpIndex v, std::size_t k, std::size_t shard_index, double gamma) const;

  WorkerCosts assigned(const PartialAssignment& f) const;
  Nanos remaining(const PartialAssignment& f) const;
  Nanos total(const PartialAssignment& f) const { return assigned(f).max + remaining(f); }

  // Sequence of worker d without replicas whose query shard is empty (only
  // possible when n < k); those neither compute nor load.
  std::vector<OpIndex> active_sequence(const PartialAssignment& f, WorkerIndex d) const;

  // CSV rows (one per operator replica) with every factor of the formula.
  std::string dump_csv(const PartialAssignment& f) const;

 private:
  const WorkflowGraph* g_;
  CostCoefficients coef_;
  std::size_t workers_;
  std::size_t queries_;
  // shards_[v][k-1][i] for k in 1..workers, i in 0..k-1
  std::vector<std::vector<std::vector<InferenceCost>>> shards_;
  std::vector<Nanos> prep_;
};

}  // namespace agentplan
