#pragma once

// Fixtures and independent oracles shared by the unit tests and the
// acceptance runner. Oracles here deliberately avoid the library code paths
// they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "agentplan/config.hpp"
#include "agentplan/cost_model.hpp"
#include "agentplan/workflow.hpp"

namespace agentplan::testing {

inline OperatorSpec make_op(std::string id, std::string model, Tokens prompt, Tokens output, Tokens context = 0,
                            std::string source = {}) {
  OperatorSpec s;
  s.id = std::move(id);
  s.model = std::move(model);
  s.prompt_tokens = prompt;
  s.context_tokens = context;
  s.context_source = std::move(source);
  s.output_tokens = output;
  return s;
}

inline WorkflowGraph make_graph(const std::vector<OperatorSpec>& ops,
                                const std::vector<std::pair<std::string, std::string>>& edges) {
  WorkflowGraph g;
  for (const auto& op : ops) g.add_operator(op);
  for (const auto& [a, b] : edges) g.add_edge(a, b);
  return g;
}

inline WorkflowGraph diamond(std::string model = "small") {
  return make_graph({make_op("A", model, 100, 10), make_op("B", model, 100, 10), make_op("C", model, 100, 10),
                     make_op("D", model, 100, 10)},
                    {{"A", "B"}, {"A", "C"}, {"B", "D"}, {"C", "D"}});
}

// Round numbers: load 10 s, prefill 1 ms/token, decode 20 ms/token, transfer
// 0.1 ms/token, context prep 0.5 ms/token, no handoff.
inline LatencyProfile round_profile() {
  LatencyProfile p;
  const ModelProfile m{from_seconds(10.0), from_seconds(1e-3), from_seconds(2e-2), from_seconds(1e-4)};
  p.models["m1"] = m;
  p.models["m2"] = {from_seconds(20.0), from_seconds(2e-3), from_seconds(3e-2), from_seconds(2e-4)};
  p.context_prep_per_token = from_seconds(5e-4);
  p.handoff_per_token = Nanos{0};
  return p;
}

inline QueryBatch default_queries(std::size_t n) { return expand_queries({}, n); }

// Random workflow with k operators (edges only from lower to higher index, so
// acyclic by construction), default-profile models and varied token counts.
inline Workflow random_workflow(std::mt19937_64& rng, std::size_t k, std::size_t n, double edge_p = 0.4) {
  static const char* kModels[] = {"small", "medium", "large"};
  static const char* kSources[] = {"", "docs", "web"};
  std::uniform_int_distribution<int> model(0, 2), source(0, 2);
  std::uniform_int_distribution<Tokens> prompt(50, 1200), output(10, 300), context(0, 800);
  std::bernoulli_distribution edge(edge_p), pick_vote(0.3);
  Workflow wf;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < k; ++i) {
    ids.push_back("op" + std::to_string(i));
    const int src = source(rng);
    OperatorSpec s = make_op(ids.back(), kModels[model(rng)], prompt(rng), output(rng),
                             src == 0 ? 0 : context(rng), kSources[src]);
    s.prefix_tokens = s.prompt_tokens / 2;
    if (pick_vote(rng)) s.aggregation = Aggregation::kVote;
    wf.graph.add_operator(s);
  }
  for (std::size_t j = 1; j < k; ++j)
    for (std::size_t i = 0; i < j; ++i)
      if (edge(rng)) wf.graph.add_edge(ids[i], ids[j]);
  std::uniform_int_distribution<Tokens> jitter(-40, 40);
  std::uniform_int_distribution<int> prio(0, 3);
  for (std::size_t q = 0; q < n; ++q) {
    QueryInstance qi;
    qi.id = "q" + std::to_string(q);
    qi.priority = prio(rng);
    const std::string& target = ids[q % k];
    const auto& op = wf.graph.op(wf.graph.index_of(target));
    qi.overrides[target].output_tokens = std::max<Tokens>(1, op.output_tokens + jitter(rng));
    wf.batch.queries.push_back(std::move(qi));
  }
  return wf;
}

// Random complete, dependency-consistent assignment: operators are taken in a
// random topological order and each gets a random nonempty replica set.
inline Assignment random_assignment(const WorkflowGraph& g, std::size_t m, std::mt19937_64& rng,
                                    double replicate_p = 0.3) {
  Assignment f(m, g.size());
  std::vector<bool> done(g.size(), false);
  std::bernoulli_distribution rep(replicate_p), coin(0.5);
  std::uniform_int_distribution<std::size_t> worker(0, m - 1);
  for (std::size_t placed = 0; placed < g.size(); ++placed) {
    std::vector<OpIndex> ready;
    for (OpIndex v = 0; v < g.size(); ++v) {
      if (done[v]) continue;
      bool ok = true;
      for (OpIndex p : g.parents(v)) ok = ok && done[p];
      if (ok) ready.push_back(v);
    }
    const OpIndex v = ready[std::uniform_int_distribution<std::size_t>(0, ready.size() - 1)(rng)];
    std::vector<WorkerIndex> reps;
    if (m > 1 && rep(rng)) {
      for (WorkerIndex d = 0; d < m; ++d)
        if (coin(rng)) reps.push_back(d);
    }
    if (reps.empty()) reps.push_back(worker(rng));
    f.assign(v, reps);
    done[v] = true;
  }
  return f;
}

// Independent cycle finder: colour-marking DFS over an adjacency list built
// from the edge list. Returns true if any cycle exists.
inline bool dfs_has_cycle(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::vector<std::size_t>> adj(n);
  for (auto [a, b] : edges) adj[a].push_back(b);
  std::vector<int> colour(n, 0);
  std::function<bool(std::size_t)> visit = [&](std::size_t u) {
    colour[u] = 1;
    for (std::size_t v : adj[u]) {
      if (colour[v] == 1) return true;
      if (colour[v] == 0 && visit(v)) return true;
    }
    colour[u] = 2;
    return false;
  };
  for (std::size_t u = 0; u < n; ++u)
    if (colour[u] == 0 && visit(u)) return true;
  return false;
}

// Closed-form C_a for an assignment, written directly from the formula with
// floating-point seconds: per worker, sum of gamma * k^(1-beta) * e(shard) +
// sigma * lambda * p, then the max. Discounts come from the single-predecessor
// rule re-derived here.
inline double closed_form_assigned(const WorkflowGraph& g, const TokenTable& tok, const LatencyProfile& prof,
                                   const CostCoefficients& coef, const Assignment& f) {
  const std::size_t n = tok.queries();
  double worst = 0.0;
  for (WorkerIndex d = 0; d < f.workers(); ++d) {
    double sum = 0.0;
    std::vector<OpIndex> seq;
    for (OpIndex v : f.sequence(d)) {
      const auto& reps = f.replicas(v);
      const std::size_t k = reps.size();
      const std::size_t i = static_cast<std::size_t>(std::find(reps.begin(), reps.end(), d) - reps.begin());
      const std::size_t size = n / k + (i < n % k ? 1 : 0);
      if (size == 0) continue;
      seq.push_back(v);
    }
    std::set<std::string> sources;
    for (std::size_t pos = 0; pos < seq.size(); ++pos) {
      const OpIndex v = seq[pos];
      const auto& op = g.op(v);
      const auto& reps = f.replicas(v);
      const std::size_t k = reps.size();
      const std::size_t i = static_cast<std::size_t>(std::find(reps.begin(), reps.end(), d) - reps.begin());
      const std::size_t begin = i * (n / k) + std::min(i, n % k);
      const std::size_t size = n / k + (i < n % k ? 1 : 0);
      const auto& mp = prof.model(op.model);
      double e = 0.0;
      for (std::size_t q = begin; q < begin + size; ++q)
        e += static_cast<double>(tok.input(q, v)) * to_seconds(mp.prefill_per_token) +
             static_cast<double>(tok.output(q, v)) * to_seconds(mp.decode_per_token);
      e *= op.repeat;
      double gamma = 1.0, sigma = 1.0, lambda = 1.0;
      if (pos > 0) {
        const OpIndex u = seq[pos - 1];
        if (g.op(u).model == op.model) {
          sigma = coef.sigma;
          bool share = g.has_edge(u, v);
          for (OpIndex p : g.parents(v)) share = share || g.has_edge(p, u);
          if (!op.context_source.empty() && op.context_source == g.op(u).context_source) share = true;
          if (share) gamma = coef.gamma;
        }
        if (!op.context_source.empty() && sources.count(op.context_source)) lambda = coef.lambda;
      }
      if (!op.context_source.empty()) sources.insert(op.context_source);
      const double p = to_seconds(mp.load) + static_cast<double>(op.context_tokens) *
                                                 to_seconds(prof.context_prep_per_token) + op.tool_seconds;
      sum += gamma * std::pow(static_cast<double>(k), 1.0 - coef.beta) * e + sigma * lambda * p;
    }
    worst = std::max(worst, sum);
  }
  return worst;
}

// Perfect-balance optimum of undiscounted compute over single assignments:
// the minimum over all 2-colourings of the larger side's sum (brute force).
inline double best_two_way_split(const std::vector<double>& work) {
  double best = 1e300;
  const std::size_t k = work.size();
  for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
    double a = 0, b = 0;
    for (std::size_t i = 0; i < k; ++i) (mask >> i & 1 ? a : b) += work[i];
    best = std::min(best, std::max(a, b));
  }
  return best;
}

}  // namespace agentplan::testing
