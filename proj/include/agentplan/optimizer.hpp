#pragma once

// Beam search over round-structured operator-to-worker assignments.
//
// Each round takes the ready operators of a partial assignment, keeps the
// top-m by rank, and expands into either all m! bijections onto the workers
// (|ready| >= m) or the padded surjections of a padding round (|ready| < m),
// where an operator holding several worker slots is replicated when its
// demand is large and otherwise runs on the lowest of them. The w cheapest
// expansions under Cost = C_a + C_r survive to the next round.

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agentplan/cost_model.hpp"
#include "agentplan/workflow.hpp"

namespace agentplan {

struct RankWeights {
  double out_degree = 1.0;
  double context_affinity = 0.5;
};

enum class ScoringMode { kSerial, kParallel };

struct SearchConfig {
  static constexpr std::size_t kUnboundedBeam = std::numeric_limits<std::size_t>::max();

  std::size_t beam_width = 8;
  std::size_t workers = 2;
  // Unset: 4x the mean per-query, per-operator inference cost.
  std::optional<double> dp_threshold_seconds;
  RankWeights rank_weights;
  ScoringMode scoring = ScoringMode::kParallel;

  void validate() const;  // throws ValidationError
};

// "d1", "d2", ...
std::string worker_name(WorkerIndex d);

// Planning inputs shared by every step of a search.
class SearchContext {
 public:
  SearchContext(const CostModel& cost, SearchConfig cfg);

  const WorkflowGraph& graph() const { return cost_->graph(); }
  const CostModel& cost() const { return *cost_; }
  const SearchConfig& config() const { return cfg_; }
  Nanos dp_threshold() const { return threshold_; }
  // Whether an operator qualifies for data-parallel replication.
  bool is_large(OpIndex v) const;

 private:
  const CostModel* cost_;
  SearchConfig cfg_;
  Nanos threshold_{0};
};

// Ready operators sorted by out_degree_weight * out-degree +
// context_affinity_weight * [model matches some worker's last-assigned model],
// ties broken by id; the first min(m, |ready|) are returned.
std::vector<OpIndex> rank_ready(std::span<const OpIndex> ready, const WorkflowGraph& g,
                                const PartialAssignment& f, const SearchConfig& cfg);

// Extensions of `f` for one round over the ranked ready operators `top`.
// Throws SearchError if `top` is empty.
std::vector<PartialAssignment> candidate_assignments(std::span<const OpIndex> top, const PartialAssignment& f,
                                                     const SearchContext& ctx);

// w * m!; saturates at SIZE_MAX for an unbounded beam.
std::size_t candidates_per_round_bound(const SearchConfig& cfg);

// Total cost of each candidate. The serial version is the reference
// implementation; the parallel one distributes candidates over OpenMP threads
// and must return identical values.
std::vector<Nanos> score_candidates_serial(std::span<const PartialAssignment> candidates, const CostModel& cost);
std::vector<Nanos> score_candidates_parallel(std::span<const PartialAssignment> candidates,
                                             const CostModel& cost);

struct SearchStats {
  std::size_t rounds = 0;
  std::size_t total_expansions = 0;
  std::size_t max_expansions_per_round = 0;
  std::vector<std::size_t> expansions_per_round;
};

struct SearchResult {
  Assignment assignment;
  Nanos cost{0};
  SearchStats stats;
};

SearchResult beam_search(const CostModel& cost, const SearchConfig& cfg);

// Exhaustive enumeration of every assignment reachable by the candidate
// generator. Refuses instances with more than 8 operators or 3 workers.
SearchResult exhaustive_oracle(const CostModel& cost, const SearchConfig& cfg);

}  // namespace agentplan
