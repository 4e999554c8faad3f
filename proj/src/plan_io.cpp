#include "agentplan/plan_io.hpp"

#include <sstream>

#include "agentplan/errors.hpp"
#include "agentplan/optimizer.hpp"
#include "agentplan/simulator.hpp"

namespace agentplan {

using nlohmann::json;

namespace {

WorkerIndex parse_worker(const json& j, std::size_t workers) {
  if (!j.is_string()) throw ParseError("worker ids must be strings like \"d1\"");
  const auto s = j.get<std::string>();
  if (s.size() < 2 || s[0] != 'd') throw ParseError("bad worker id '" + s + "'");
  std::size_t idx = 0;
  try {
    idx = std::stoul(s.substr(1));
  } catch (const std::exception&) {
    throw ParseError("bad worker id '" + s + "'");
  }
  if (idx < 1 || idx > workers) throw ValidationError("worker id '" + s + "' out of range");
  return idx - 1;
}

}  // namespace

json plan_to_json(const Assignment& f, const WorkflowGraph& g, std::size_t queries) {
  json workers = json::array();
  json placement = json::object();
  for (WorkerIndex d = 0; d < f.workers(); ++d) {
    workers.push_back(worker_name(d));
    json seq = json::array();
    for (OpIndex v : f.sequence(d)) {
      json reps = json::array();
      for (WorkerIndex r : f.replicas(v)) reps.push_back(worker_name(r));
      auto [b, e] = shard_range(queries, f.replicas(v), d);
      seq.push_back({{"op", g.op(v).id}, {"replicas", reps}, {"shard", {b, e}}});
    }
    placement[worker_name(d)] = seq;
  }
  return {{"schema_version", kSchemaVersion}, {"queries", queries}, {"workers", workers}, {"placement", placement}};
}

Assignment plan_from_json(const json& doc, const WorkflowGraph& g) {
  try {
    if (doc.at("schema_version").get<int>() != kSchemaVersion) throw ParseError("unsupported plan schema_version");
    const auto& workers = doc.at("workers");
    const std::size_t m = workers.size();
    if (m == 0) throw ValidationError("plan has no workers");
    Assignment f(m, g.size());
    // Operators are appended in a round-robin over workers so that every
    // replica lands at its listed position.
    std::vector<std::vector<std::pair<OpIndex, std::vector<WorkerIndex>>>> lists(m);
    for (WorkerIndex d = 0; d < m; ++d) {
      for (const auto& item : doc.at("placement").at(worker_name(d))) {
        const OpIndex v = g.index_of(item.at("op").get<std::string>());
        std::vector<WorkerIndex> reps;
        for (const auto& r : item.at("replicas")) reps.push_back(parse_worker(r, m));
        std::sort(reps.begin(), reps.end());
        if (!std::binary_search(reps.begin(), reps.end(), d))
          throw ValidationError("operator " + g.op(v).id + " listed on " + worker_name(d) + " outside its replicas");
        lists[d].emplace_back(v, std::move(reps));
      }
    }
    std::vector<std::size_t> pos(m, 0);
    for (bool progress = true; progress;) {
      progress = false;
      for (WorkerIndex d = 0; d < m; ++d) {
        while (pos[d] < lists[d].size()) {
          const auto& [v, reps] = lists[d][pos[d]];
          if (f.assigned(v)) {
            if (f.replicas(v) != reps) throw ValidationError("inconsistent replica sets for " + g.op(v).id);
            ++pos[d];
            progress = true;
            continue;
          }
          // Assign only when v is next on every replica worker.
          bool aligned = true;
          for (WorkerIndex r : reps)
            aligned = aligned && pos[r] < lists[r].size() && lists[r][pos[r]].first == v;
          if (!aligned) break;
          f.assign(v, reps);
          ++pos[d];
          progress = true;
        }
      }
    }
    for (WorkerIndex d = 0; d < m; ++d)
      if (pos[d] != lists[d].size()) throw ValidationError("replica orders in the plan are inconsistent");
    if (!f.complete()) throw ValidationError("plan does not assign every operator");
    validate_assignment(g, f);
    return f;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed plan: ") + e.what());
  }
}

std::string plan_to_dot(const Assignment& f, const WorkflowGraph& g, const CostModel* cost) {
  std::ostringstream out;
  out.precision(6);
  out << "digraph plan {\n  rankdir=LR;\n  node [shape=box];\n";
  for (WorkerIndex d = 0; d < f.workers(); ++d) {
    out << "  subgraph cluster_" << worker_name(d) << " {\n    label=\"" << worker_name(d) << "\";\n";
    const auto& seq = f.sequence(d);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const OpIndex v = seq[i];
      const auto& reps = f.replicas(v);
      out << "    \"" << g.op(v).id << "@" << worker_name(d) << "\" [label=\"" << g.op(v).id << "\\n"
          << g.op(v).model;
      if (reps.size() > 1) out << "\\nreplica " << reps.size();
      if (cost) {
        const std::size_t idx =
            static_cast<std::size_t>(std::lower_bound(reps.begin(), reps.end(), d) - reps.begin());
        const auto& e = cost->shard(v, reps.size(), idx);
        out << "\\ne=" << to_seconds(e.total()) << "s p=" << to_seconds(cost->prep(v)) << "s";
      }
      out << "\"];\n";
      if (i > 0)
        out << "    \"" << g.op(seq[i - 1]).id << "@" << worker_name(d) << "\" -> \"" << g.op(v).id << "@"
            << worker_name(d) << "\" [style=dotted];\n";
    }
    out << "  }\n";
  }
  for (const auto& [u, v] : g.edges())
    for (WorkerIndex a : f.replicas(u))
      for (WorkerIndex b : f.replicas(v))
        if (f.replicas(u).size() == 1 || f.replicas(v).size() == 1 || a == b)
          out << "  \"" << g.op(u).id << "@" << worker_name(a) << "\" -> \"" << g.op(v).id << "@"
              << worker_name(b) << "\";\n";
  out << "}\n";
  return out.str();
}

}  // namespace agentplan
