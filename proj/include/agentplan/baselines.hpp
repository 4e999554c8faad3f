#pragma once

// Reference schedulers: round-robin, parent co-location, full data
// parallelism and the single-worker topological plan.

#include <cstddef>
#include <string>
#include <string_view>

#include "agentplan/cost_model.hpp"
#include "agentplan/workflow.hpp"

namespace agentplan {

// Topological operator i -> worker i mod m.
Assignment schedule_round_robin(const WorkflowGraph& g, std::size_t workers);

// Sources round-robin in topological order; every other operator follows its
// lowest-id parent.
Assignment schedule_coloc(const WorkflowGraph& g, std::size_t workers);

// Every operator on every worker; worker d keeps the same query shard
// throughout.
Assignment schedule_data_parallel(const WorkflowGraph& g, std::size_t workers);

// Everything on d1 in topological order.
Assignment schedule_naive_topological(const WorkflowGraph& g, std::size_t workers);

enum class Scheduler { kHalo, kRoundRobin, kCoLoc, kDataParallel, kTopological };

const char* to_string(Scheduler s);
Scheduler parse_scheduler(std::string_view name);  // throws ValidationError

}  // namespace agentplan
