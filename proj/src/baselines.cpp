#include "agentplan/baselines.hpp"

#include <numeric>

#include "agentplan/errors.hpp"

namespace agentplan {

namespace {

void require_workers(std::size_t workers) {
  if (workers == 0) throw ValidationError("at least one worker is required");
}

}  // namespace

Assignment schedule_round_robin(const WorkflowGraph& g, std::size_t workers) {
  require_workers(workers);
  Assignment f(workers, g.size());
  const auto order = g.topological_order();
  for (std::size_t i = 0; i < order.size(); ++i) f.assign(order[i], {i % workers});
  return f;
}

Assignment schedule_coloc(const WorkflowGraph& g, std::size_t workers) {
  require_workers(workers);
  Assignment f(workers, g.size());
  std::size_t next_source = 0;
  for (OpIndex v : g.topological_order()) {
    const auto& parents = g.parents(v);
    if (parents.empty()) {
      f.assign(v, {next_source++ % workers});
    } else {
      // parents are kept sorted by id
      f.assign(v, {f.replicas(parents.front()).front()});
    }
  }
  return f;
}

Assignment schedule_data_parallel(const WorkflowGraph& g, std::size_t workers) {
  require_workers(workers);
  Assignment f(workers, g.size());
  std::vector<WorkerIndex> all(workers);
  std::iota(all.begin(), all.end(), WorkerIndex{0});
  for (OpIndex v : g.topological_order()) f.assign(v, all);
  return f;
}

Assignment schedule_naive_topological(const WorkflowGraph& g, std::size_t workers) {
  require_workers(workers);
  Assignment f(workers, g.size());
  for (OpIndex v : g.topological_order()) f.assign(v, {0});
  return f;
}

const char* to_string(Scheduler s) {
  switch (s) {
    case Scheduler::kHalo: return "halo";
    case Scheduler::kRoundRobin: return "rr";
    case Scheduler::kCoLoc: return "coloc";
    case Scheduler::kDataParallel: return "dp";
    case Scheduler::kTopological: return "topo";
  }
  return "?";
}

Scheduler parse_scheduler(std::string_view name) {
  for (auto s : {Scheduler::kHalo, Scheduler::kRoundRobin, Scheduler::kCoLoc, Scheduler::kDataParallel,
                 Scheduler::kTopological})
    if (name == to_string(s)) return s;
  throw ValidationError("unknown scheduler '" + std::string(name) + "' (expected halo|rr|coloc|dp|topo)");
}

}  // namespace agentplan
