#pragma once

// Deterministic discrete-event replay of an assignment on virtual GPU workers.
//
// Each worker runs its operator sequence in order. An operator replica starts
// once the worker is free and every parent replica holding one of its queries
// has finished; queries whose parent output lives on another worker pay a
// handoff transfer first. A replica then runs
//   load + prep   scale(p_v, sigma * lambda)
//   z iterations  prefill groups, then continuously batched decode
// over its query shard. Memory is accounted in tokens: resident template
// prefixes plus the input + output reservation of every decoding query.

#include <cstddef>
#include <list>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "agentplan/cost_model.hpp"
#include "agentplan/units.hpp"
#include "agentplan/workflow.hpp"

namespace agentplan {

enum class BatchingMode { kAdaptive, kFixed };
enum class QueryOrder { kLengthSorted, kPriority, kFifo };

const char* to_string(BatchingMode m);
const char* to_string(QueryOrder o);
BatchingMode parse_batching_mode(std::string_view s);
QueryOrder parse_query_order(std::string_view s);

struct BatchingPolicy {
  BatchingMode mode = BatchingMode::kAdaptive;
  // Decode batch in fixed mode: static batches that drain before the next one
  // is admitted.
  std::size_t fixed_batch = 8;
  std::size_t prefill_batch = 8;
  // Decode steps cost one token-time up to this batch size and grow linearly
  // beyond it.
  std::size_t decode_saturation_batch = 64;
  Tokens memory_capacity_tokens = 262144;
  // Share of memory_capacity_tokens reserved for template prefixes.
  Tokens prefix_cache_tokens = 32768;

  void validate() const;  // throws ValidationError
  Tokens decode_capacity_tokens() const { return memory_capacity_tokens - prefix_cache_tokens; }
  // Largest decode batch the policy admits for queries reserving `tokens` each.
  std::size_t decode_batch_max(Tokens tokens_per_query) const;
};

// Planning-side estimate of the batching speed-up the simulator will achieve
// on a shard, used as the cost model's throughput factor.
ThroughputEstimator make_throughput_estimator(const BatchingPolicy& policy, const LatencyProfile& prof,
                                              bool cache_reuse);

struct SimulationConfig {
  BatchingPolicy batching;
  QueryOrder order = QueryOrder::kLengthSorted;
  // Off: no prefix cache, no KV reuse, and gamma = lambda = 1.
  bool cache_reuse = true;
  // Off: only aggregates (busy time, memory integral, completions) are kept.
  bool record_events = true;
};

// Coefficients the planner and simulator use under `cache_reuse`.
CostCoefficients effective_coefficients(const CostCoefficients& coef, bool cache_reuse);

// LRU cache of template prefixes in a worker's prefix budget.
class PrefixCache {
 public:
  explicit PrefixCache(Tokens capacity = 0) : capacity_(capacity) {}

  bool contains(const std::string& key) const { return index_.count(key) > 0; }
  // Marks `key` most recently used; false if absent.
  bool touch(const std::string& key);
  // Inserts as most recently used, evicting least recently used entries.
  // False (and no change) if `tokens` exceeds the capacity.
  bool insert(const std::string& key, Tokens tokens);

  Tokens used() const { return used_; }
  Tokens capacity() const { return capacity_; }
  std::size_t evictions() const { return evictions_; }
  std::vector<std::string> keys_lru_first() const;

 private:
  struct Entry {
    std::string key;
    Tokens tokens;
  };
  Tokens capacity_;
  Tokens used_ = 0;
  std::size_t evictions_ = 0;
  std::list<Entry> lru_;  // front = least recently used
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

struct WorkerState {
  WorkerIndex id = 0;
  std::optional<std::string> loaded_model;
  PrefixCache prefixes;
  std::set<std::string> materialized_sources;
  Tokens memory_used_tokens = 0;
  Tokens memory_capacity_tokens = 0;
  Nanos busy_until{0};
};

enum class CacheResult { kHit, kMiss };

// Hit iff `key` is resident. A miss inserts it (LRU eviction).
CacheResult prefix_cache_lookup(WorkerState& worker, const std::string& key, Tokens tokens);

// Worker state carried across simulations (online mini-batches).
struct ClusterState {
  std::vector<WorkerState> workers;
  static ClusterState fresh(std::size_t workers, const BatchingPolicy& policy);
};

enum class EventKind { kLoad, kPrep, kPrefill, kDecode, kTransfer, kIdle };
const char* to_string(EventKind k);

inline constexpr OpIndex kNoOp = static_cast<OpIndex>(-1);

struct TraceEvent {
  Nanos start{0};
  Nanos duration{0};
  WorkerIndex worker = 0;
  EventKind kind = EventKind::kIdle;
  OpIndex op = kNoOp;
  int iteration = 0;
  // prefill: the group; decode: queries that finished at the event's end.
  std::vector<QueryIndex> queries;

  Nanos end() const { return start + duration; }
  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct MemorySample {
  Nanos time{0};
  WorkerIndex worker = 0;
  Tokens used = 0;
  friend bool operator==(const MemorySample&, const MemorySample&) = default;
};

// Interval of one operator replica on one worker, including handoff and prep.
struct ReplicaSpan {
  OpIndex op = kNoOp;
  WorkerIndex worker = 0;
  Nanos start{0};
  Nanos end{0};
  QueryIndex shard_begin = 0;
  QueryIndex shard_end = 0;
  friend bool operator==(const ReplicaSpan&, const ReplicaSpan&) = default;
};

struct ExecutionTrace {
  std::size_t workers = 0;
  std::size_t queries = 0;
  Nanos origin{0};       // simulated start time
  Nanos wall_clock{0};   // max event end - origin
  Tokens memory_capacity_tokens = 0;

  std::vector<TraceEvent> events;  // per worker time-ordered; sorted by (start, worker)
  std::vector<MemorySample> memory;
  std::vector<ReplicaSpan> spans;

  std::vector<Nanos> busy;            // per worker, excludes idle
  std::vector<Nanos> worker_end;      // per worker
  std::vector<double> memory_integral;  // per worker, token * seconds
  std::vector<Nanos> query_completion;  // absolute time the query left its last operator
  std::size_t completed_queries = 0;
  std::size_t prefix_hits = 0;
  std::size_t prefix_misses = 0;
  Tokens peak_memory_tokens = 0;

  friend bool operator==(const ExecutionTrace&, const ExecutionTrace&) = default;
};

// Replays `plan`. Throws ValidationError on a plan/graph mismatch, a plan
// whose per-worker orders deadlock, or a query larger than worker memory;
// OverflowError when fixed batching exceeds memory. `state` (optional)
// carries loaded models, prefixes and materialized context across calls;
// `start` offsets every timestamp.
ExecutionTrace simulate(const Assignment& plan, const WorkflowGraph& g, const TokenTable& tokens,
                        const LatencyProfile& prof, const CostCoefficients& coef, const SimulationConfig& cfg,
                        ClusterState* state = nullptr, Nanos start = Nanos{0});

// Stable permutation of [first, last) of the batch: length_sorted ascending in
// total tokens, priority descending, fifo identity.
std::vector<QueryIndex> order_queries(const TokenTable& tokens, QueryOrder mode, QueryIndex first, QueryIndex last);
std::vector<QueryIndex> order_queries(const TokenTable& tokens, QueryOrder mode);

struct Metrics {
  double wall_clock_s = 0.0;
  std::vector<double> busy_fraction;
  double memory_auc = 0.0;       // mean memory fraction over workers and time
  double utilization_auc = 0.0;  // mean busy fraction over workers
  double throughput_qps = 0.0;
  std::size_t completed_queries = 0;
  std::size_t prefix_hits = 0;
  std::size_t prefix_misses = 0;
  double peak_memory_fraction = 0.0;
};

Metrics collect_metrics(const ExecutionTrace& trace);

// Exports. Every document carries schema_version.
inline constexpr int kSchemaVersion = 1;
std::string trace_to_ndjson(const ExecutionTrace& trace, const WorkflowGraph& g);
std::string metrics_to_json(const Metrics& m);
// Per-worker memory change points: time_s,worker,used_tokens,used_fraction.
std::string memory_curve_csv(const ExecutionTrace& trace);
// `bins` equal slices of normalized time: mean busy fraction and memory fraction.
std::string utilization_curve_csv(const ExecutionTrace& trace, std::size_t bins = 100);

// Checks the dependency-safety, per-worker ordering and memory invariants of
// a recorded trace. Returns a description of the first violation.
std::optional<std::string> check_trace_invariants(const ExecutionTrace& trace, const WorkflowGraph& g,
                                                  const Assignment& plan);

}  // namespace agentplan
