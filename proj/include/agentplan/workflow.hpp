#pragma once

// Workflow IR: operators, dependency DAG, query batches and the structural
// primitives (sequential / fan-out / fan-in / self-loop) the cost model keys on.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "agentplan/units.hpp"

namespace agentplan {

enum class Aggregation { kNone, kConcat, kVote };
enum class DemandClass { kSmall, kLarge };

struct OperatorSpec {
  std::string id;
  std::string model;
  Tokens prompt_tokens = 0;
  // Leading part of prompt_tokens shared by every query (system prompt,
  // few-shot exemplars). Keys the prefix cache.
  Tokens prefix_tokens = 0;
  Tokens context_tokens = 0;
  // Symbol naming where the context comes from (a corpus, an index). Empty
  // means the operator has no shared context source.
  std::string context_source;
  Tokens output_tokens = 1;
  int repeat = 1;
  Aggregation aggregation = Aggregation::kNone;
  // Unset: replication decided by the planner's demand threshold.
  std::optional<DemandClass> demand;
  // Fixed latency of a tool/API call made by the operator.
  double tool_seconds = 0.0;

  void validate() const;
  friend bool operator==(const OperatorSpec&, const OperatorSpec&) = default;
};

class WorkflowGraph {
 public:
  WorkflowGraph() = default;

  // Throws ValidationError on duplicate ids or invalid token counts.
  OpIndex add_operator(OperatorSpec spec);
  // Throws ValidationError if either endpoint is unknown. Cycles are allowed
  // here so that validate_dag can report them.
  void add_edge(std::string_view from, std::string_view to);

  std::size_t size() const { return ops_.size(); }
  bool empty() const { return ops_.empty(); }
  const OperatorSpec& op(OpIndex i) const { return ops_.at(i); }
  const std::vector<OperatorSpec>& operators() const { return ops_; }
  std::optional<OpIndex> find(std::string_view id) const;
  OpIndex index_of(std::string_view id) const;  // throws ValidationError

  const std::vector<OpIndex>& parents(OpIndex i) const { return parents_.at(i); }
  const std::vector<OpIndex>& children(OpIndex i) const { return children_.at(i); }
  std::size_t in_degree(OpIndex i) const { return parents_.at(i).size(); }
  std::size_t out_degree(OpIndex i) const { return children_.at(i).size(); }
  const std::vector<std::pair<OpIndex, OpIndex>>& edges() const { return edges_; }
  bool has_edge(OpIndex from, OpIndex to) const;

  // Kahn's algorithm; among ready operators the lexicographically smallest id
  // goes first. Throws CycleError on cyclic graphs.
  std::vector<OpIndex> topological_order() const;

  // Order used for every "lowest id" tie-break.
  bool id_less(OpIndex a, OpIndex b) const { return ops_[a].id < ops_[b].id; }

  friend bool operator==(const WorkflowGraph& a, const WorkflowGraph& b) {
    return a.ops_ == b.ops_ && a.edges_ == b.edges_;
  }

 private:
  std::vector<OperatorSpec> ops_;
  std::unordered_map<std::string, OpIndex> by_id_;
  std::vector<std::vector<OpIndex>> parents_;
  std::vector<std::vector<OpIndex>> children_;
  std::vector<std::pair<OpIndex, OpIndex>> edges_;
};

struct TokenOverride {
  std::optional<Tokens> prompt_tokens;
  std::optional<Tokens> context_tokens;
  std::optional<Tokens> output_tokens;
  friend bool operator==(const TokenOverride&, const TokenOverride&) = default;
};

struct QueryInstance {
  std::string id;
  std::map<std::string, TokenOverride> overrides;  // keyed by operator id
  int priority = 0;
  double arrival_time = 0.0;
  friend bool operator==(const QueryInstance&, const QueryInstance&) = default;
};

struct QueryBatch {
  std::vector<QueryInstance> queries;
  std::size_t size() const { return queries.size(); }
  bool empty() const { return queries.empty(); }
  friend bool operator==(const QueryBatch&, const QueryBatch&) = default;
};

struct Workflow {
  WorkflowGraph graph;
  QueryBatch batch;
  friend bool operator==(const Workflow&, const Workflow&) = default;
};

// Per-(query, operator) token counts with overrides resolved and the fan-in
// fold applied: input = prompt + context + agg(parent outputs), where agg is a
// sum (concat/none) or a max (vote).
class TokenTable {
 public:
  TokenTable() = default;
  TokenTable(const WorkflowGraph& g, const QueryBatch& batch);

  std::size_t queries() const { return queries_; }
  std::size_t ops() const { return ops_; }
  Tokens prompt(QueryIndex q, OpIndex v) const { return prompt_[q * ops_ + v]; }
  Tokens context(QueryIndex q, OpIndex v) const { return context_[q * ops_ + v]; }
  Tokens output(QueryIndex q, OpIndex v) const { return output_[q * ops_ + v]; }
  // Tokens prefilled for one invocation of v on query q.
  Tokens input(QueryIndex q, OpIndex v) const { return input_[q * ops_ + v]; }
  // Sum over operators of prompt + context + output (the ordering key).
  Tokens total_length(QueryIndex q) const { return total_[q]; }
  int priority(QueryIndex q) const { return priority_[q]; }

  // Table restricted to a subset of queries, in the given order.
  TokenTable subset(std::span<const QueryIndex> queries) const;

 private:
  std::size_t queries_ = 0;
  std::size_t ops_ = 0;
  std::vector<Tokens> prompt_, context_, output_, input_, total_;
  std::vector<int> priority_;
};

enum class PrimitiveKind { kSequential, kFanOut, kFanIn, kSelfLoop };

// For fan-out and fan-in the hub operator comes first in `members`, followed
// by its children (fan-out) or parents (fan-in) in id order.
struct PrimitiveTag {
  PrimitiveKind kind;
  std::vector<std::string> members;
  friend bool operator==(const PrimitiveTag&, const PrimitiveTag&) = default;
};

const char* to_string(PrimitiveKind kind);
const char* to_string(Aggregation agg);
const char* to_string(DemandClass demand);

// Empty optional if acyclic, otherwise one cycle as an operator-id list.
std::optional<std::vector<std::string>> validate_dag(const WorkflowGraph& g);

std::vector<PrimitiveTag> detect_primitives(const WorkflowGraph& g);

// Operators not in `done` whose parents are all in `done`, ascending index.
// Throws DependencyError if `done` is not closed under predecessors.
std::vector<OpIndex> ready_set(const WorkflowGraph& g, const std::vector<bool>& done);
std::vector<std::string> ready_set(const WorkflowGraph& g, const std::vector<std::string>& done);

// YAML workflow documents. parse_workflow validates the graph (dangling edges,
// cycles, token invariants) and the query overrides.
Workflow parse_workflow(std::string_view doc);
Workflow load_workflow(const std::string& path);
std::string serialize_workflow(const Workflow& wf);

// n queries built by cycling through `base` (or template defaults when base is
// empty); ids get a numeric suffix per cycle.
QueryBatch expand_queries(const QueryBatch& base, std::size_t n);

}  // namespace agentplan
