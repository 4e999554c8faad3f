#pragma once

// Plan files. JSON:
//   {"schema_version": 1, "workers": ["d1", ...],
//    "placement": {"d1": [{"op": "A", "replicas": ["d1", "d2"],
//                          "shard": [begin, end]}, ...], ...}}
// DOT: one cluster per worker, operators annotated with their cost terms.

#include <string>

#include <nlohmann/json.hpp>

#include "agentplan/cost_model.hpp"
#include "agentplan/workflow.hpp"

namespace agentplan {

nlohmann::json plan_to_json(const Assignment& f, const WorkflowGraph& g, std::size_t queries);
// Throws ParseError on malformed documents, ValidationError on plans that do
// not match `g`.
Assignment plan_from_json(const nlohmann::json& doc, const WorkflowGraph& g);

// `cost` (optional) adds per-replica inference and prep terms to the labels.
std::string plan_to_dot(const Assignment& f, const WorkflowGraph& g, const CostModel* cost = nullptr);

}  // namespace agentplan
