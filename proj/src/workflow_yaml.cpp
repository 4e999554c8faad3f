#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "agentplan/errors.hpp"
#include "agentplan/workflow.hpp"
#include "yaml_util.hpp"

namespace agentplan {

namespace {

using detail::line_of;
using detail::require_keys;
using detail::scalar_as;

OperatorSpec parse_operator(const YAML::Node& node) {
  if (!node.IsMap()) throw ParseError("operator entry must be a mapping", line_of(node), "operators");
  require_keys(node,
               {"id", "model", "prompt_tokens", "prefix_tokens", "context_tokens", "context_source",
                "output_tokens", "repeat", "aggregation", "demand", "tool_seconds"},
               "operators");
  OperatorSpec op;
  if (!node["id"]) throw ParseError("operator is missing required field 'id'", line_of(node), "id");
  if (!node["model"])
    throw ParseError("operator is missing required field 'model'", line_of(node), "model");
  op.id = scalar_as<std::string>(node["id"], "id");
  op.model = scalar_as<std::string>(node["model"], "model");
  if (node["prompt_tokens"]) op.prompt_tokens = scalar_as<Tokens>(node["prompt_tokens"], "prompt_tokens");
  if (node["prefix_tokens"]) op.prefix_tokens = scalar_as<Tokens>(node["prefix_tokens"], "prefix_tokens");
  if (node["context_tokens"])
    op.context_tokens = scalar_as<Tokens>(node["context_tokens"], "context_tokens");
  if (node["context_source"])
    op.context_source = scalar_as<std::string>(node["context_source"], "context_source");
  if (!node["output_tokens"])
    throw ParseError("operator " + op.id + " is missing 'output_tokens'", line_of(node), "output_tokens");
  op.output_tokens = scalar_as<Tokens>(node["output_tokens"], "output_tokens");
  if (node["repeat"]) op.repeat = scalar_as<int>(node["repeat"], "repeat");
  if (node["tool_seconds"]) op.tool_seconds = scalar_as<double>(node["tool_seconds"], "tool_seconds");
  if (auto agg = node["aggregation"]) {
    auto s = scalar_as<std::string>(agg, "aggregation");
    if (s == "none") op.aggregation = Aggregation::kNone;
    else if (s == "concat") op.aggregation = Aggregation::kConcat;
    else if (s == "vote") op.aggregation = Aggregation::kVote;
    else throw ParseError("aggregation must be none|concat|vote, got '" + s + "'", line_of(agg), "aggregation");
  }
  if (auto demand = node["demand"]) {
    auto s = scalar_as<std::string>(demand, "demand");
    if (s == "small") op.demand = DemandClass::kSmall;
    else if (s == "large") op.demand = DemandClass::kLarge;
    else throw ParseError("demand must be small|large, got '" + s + "'", line_of(demand), "demand");
  }
  try {
    op.validate();
  } catch (const ValidationError& e) {
    throw ParseError(e.what(), line_of(node), "operators");
  }
  return op;
}

std::pair<std::string, std::string> parse_edge(const YAML::Node& node) {
  auto text = scalar_as<std::string>(node, "edges");
  auto arrow = text.find("->");
  if (arrow == std::string::npos)
    throw ParseError("edge must look like \"A->B\", got '" + text + "'", line_of(node), "edges");
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t");
    auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  auto from = trim(text.substr(0, arrow));
  auto to = trim(text.substr(arrow + 2));
  if (from.empty() || to.empty())
    throw ParseError("edge endpoints must be non-empty: '" + text + "'", line_of(node), "edges");
  return {from, to};
}

TokenOverride parse_override(const YAML::Node& node) {
  if (!node.IsMap()) throw ParseError("override must be a mapping", line_of(node), "overrides");
  require_keys(node, {"prompt_tokens", "context_tokens", "output_tokens"}, "overrides");
  TokenOverride o;
  if (node["prompt_tokens"]) o.prompt_tokens = scalar_as<Tokens>(node["prompt_tokens"], "prompt_tokens");
  if (node["context_tokens"]) o.context_tokens = scalar_as<Tokens>(node["context_tokens"], "context_tokens");
  if (node["output_tokens"]) o.output_tokens = scalar_as<Tokens>(node["output_tokens"], "output_tokens");
  if ((o.prompt_tokens && *o.prompt_tokens < 0) || (o.context_tokens && *o.context_tokens < 0) ||
      (o.output_tokens && *o.output_tokens < 1))
    throw ParseError("override token counts out of range", line_of(node), "overrides");
  return o;
}

QueryInstance parse_query(const YAML::Node& node, const WorkflowGraph& g) {
  if (!node.IsMap()) throw ParseError("query entry must be a mapping", line_of(node), "queries");
  require_keys(node, {"id", "overrides", "arrival_time", "priority"}, "queries");
  QueryInstance q;
  if (!node["id"]) throw ParseError("query is missing 'id'", line_of(node), "id");
  q.id = scalar_as<std::string>(node["id"], "id");
  if (node["priority"]) q.priority = scalar_as<int>(node["priority"], "priority");
  if (node["arrival_time"]) q.arrival_time = scalar_as<double>(node["arrival_time"], "arrival_time");
  if (q.arrival_time < 0) throw ParseError("arrival_time must be >= 0", line_of(node), "arrival_time");
  if (auto ov = node["overrides"]) {
    if (!ov.IsMap()) throw ParseError("overrides must map operator ids", line_of(ov), "overrides");
    for (const auto& kv : ov) {
      auto op_id = kv.first.as<std::string>();
      if (!g.find(op_id))
        throw ParseError("query " + q.id + " overrides unknown operator '" + op_id + "'",
                         line_of(kv.first), "overrides");
      TokenOverride o = parse_override(kv.second);
      const auto& spec = g.op(g.index_of(op_id));
      if (o.prompt_tokens && *o.prompt_tokens < spec.prefix_tokens)
        throw ParseError("query " + q.id + ": prompt_tokens override shorter than the shared prefix of " +
                             op_id,
                         line_of(kv.second), "overrides");
      q.overrides.emplace(op_id, o);
    }
  }
  return q;
}

}  // namespace

Workflow parse_workflow(std::string_view doc) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(doc));
  } catch (const YAML::Exception& e) {
    throw ParseError(e.msg, e.mark.line + 1);
  }
  if (!root.IsMap()) throw ParseError("workflow document must be a mapping", line_of(root));
  require_keys(root, {"operators", "edges", "queries"}, "workflow");
  auto ops = root["operators"];
  if (!ops || !ops.IsSequence())
    throw ParseError("'operators' must be a list", line_of(ops ? ops : root), "operators");

  Workflow wf;
  for (const auto& node : ops) {
    auto op = parse_operator(node);
    if (wf.graph.find(op.id)) throw ParseError("duplicate operator id '" + op.id + "'", line_of(node), "id");
    wf.graph.add_operator(std::move(op));
  }
  if (auto edges = root["edges"]) {
    if (!edges.IsSequence()) throw ParseError("'edges' must be a list", line_of(edges), "edges");
    for (const auto& e : edges) {
      auto [from, to] = parse_edge(e);
      wf.graph.add_edge(from, to);  // ValidationError on dangling endpoints
    }
  }
  if (auto cycle = validate_dag(wf.graph)) throw CycleError(*cycle);

  if (auto queries = root["queries"]) {
    if (!queries.IsSequence()) throw ParseError("'queries' must be a list", line_of(queries), "queries");
    std::set<std::string> seen;
    for (const auto& node : queries) {
      auto q = parse_query(node, wf.graph);
      if (!seen.insert(q.id).second)
        throw ParseError("duplicate query id '" + q.id + "'", line_of(node), "id");
      wf.batch.queries.push_back(std::move(q));
    }
  }
  return wf;
}

Workflow load_workflow(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open workflow file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_workflow(ss.str());
}

std::string serialize_workflow(const Workflow& wf) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "operators" << YAML::Value << YAML::BeginSeq;
  for (const auto& op : wf.graph.operators()) {
    out << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << op.id;
    out << YAML::Key << "model" << YAML::Value << op.model;
    out << YAML::Key << "prompt_tokens" << YAML::Value << op.prompt_tokens;
    if (op.prefix_tokens) out << YAML::Key << "prefix_tokens" << YAML::Value << op.prefix_tokens;
    out << YAML::Key << "context_tokens" << YAML::Value << op.context_tokens;
    if (!op.context_source.empty())
      out << YAML::Key << "context_source" << YAML::Value << op.context_source;
    out << YAML::Key << "output_tokens" << YAML::Value << op.output_tokens;
    out << YAML::Key << "repeat" << YAML::Value << op.repeat;
    if (op.aggregation != Aggregation::kNone)
      out << YAML::Key << "aggregation" << YAML::Value << to_string(op.aggregation);
    if (op.demand) out << YAML::Key << "demand" << YAML::Value << to_string(*op.demand);
    if (op.tool_seconds != 0.0) out << YAML::Key << "tool_seconds" << YAML::Value << op.tool_seconds;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::Key << "edges" << YAML::Value << YAML::BeginSeq;
  for (auto [u, v] : wf.graph.edges()) out << wf.graph.op(u).id + "->" + wf.graph.op(v).id;
  out << YAML::EndSeq;

  out << YAML::Key << "queries" << YAML::Value << YAML::BeginSeq;
  for (const auto& q : wf.batch.queries) {
    out << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << q.id;
    if (!q.overrides.empty()) {
      out << YAML::Key << "overrides" << YAML::Value << YAML::BeginMap;
      for (const auto& [op_id, o] : q.overrides) {
        out << YAML::Key << op_id << YAML::Value << YAML::Flow << YAML::BeginMap;
        if (o.prompt_tokens) out << YAML::Key << "prompt_tokens" << YAML::Value << *o.prompt_tokens;
        if (o.context_tokens) out << YAML::Key << "context_tokens" << YAML::Value << *o.context_tokens;
        if (o.output_tokens) out << YAML::Key << "output_tokens" << YAML::Value << *o.output_tokens;
        out << YAML::EndMap;
      }
      out << YAML::EndMap;
    }
    out << YAML::Key << "arrival_time" << YAML::Value << q.arrival_time;
    out << YAML::Key << "priority" << YAML::Value << q.priority;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace agentplan
