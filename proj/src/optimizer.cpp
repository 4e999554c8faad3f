#include "agentplan/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "agentplan/errors.hpp"

namespace agentplan {

namespace {

std::size_t factorial(std::size_t m) {
  std::size_t f = 1;
  for (std::size_t i = 2; i <= m; ++i) f *= i;
  return f;
}

// Number of distinct arrangements of a multiset with multiplicities `mu`.
std::size_t multinomial(std::span<const std::size_t> mu) {
  std::size_t m = std::accumulate(mu.begin(), mu.end(), std::size_t{0});
  std::size_t count = factorial(m);
  for (std::size_t k : mu) count /= factorial(k);
  return count;
}

// All compositions of m into r positive parts, in descending lexicographic
// order (more slots to earlier positions first).
void compositions(std::size_t m, std::size_t r, std::vector<std::size_t>& cur,
                  std::vector<std::vector<std::size_t>>& out) {
  if (r == 1) {
    cur.push_back(m);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  for (std::size_t first = m - (r - 1); first >= 1; --first) {
    cur.push_back(first);
    compositions(m - first, r - 1, cur, out);
    cur.pop_back();
  }
}

struct Scored {
  PartialAssignment f;
  Nanos cost{0};
  std::vector<long> key;
};

bool scored_less(const Scored& a, const Scored& b) {
  if (a.cost != b.cost) return a.cost < b.cost;
  return a.key < b.key;
}

}  // namespace

void SearchConfig::validate() const {
  if (beam_width < 1) throw ValidationError("beam width must be >= 1");
  if (workers < 1) throw ValidationError("at least one worker is required");
  if (dp_threshold_seconds && !(*dp_threshold_seconds > 0.0))
    throw ValidationError("dp_threshold_seconds must be > 0");
}

std::string worker_name(WorkerIndex d) { return "d" + std::to_string(d + 1); }

SearchContext::SearchContext(const CostModel& cost, SearchConfig cfg) : cost_(&cost), cfg_(cfg) {
  cfg_.validate();
  if (cfg_.workers != cost.workers())
    throw ValidationError("search config and cost model disagree on the worker count");
  if (cfg_.dp_threshold_seconds) {
    threshold_ = from_seconds(*cfg_.dp_threshold_seconds);
  } else if (cost.queries() > 0 && !cost.graph().empty()) {
    Nanos sum{0};
    for (OpIndex v = 0; v < cost.graph().size(); ++v) sum += cost.inference(v);
    const double mean_per_query = static_cast<double>(sum.count()) /
                                  static_cast<double>(cost.graph().size()) / static_cast<double>(cost.queries());
    threshold_ = Nanos{std::llround(4.0 * mean_per_query)};
  }
}

bool SearchContext::is_large(OpIndex v) const {
  if (auto d = graph().op(v).demand) return *d == DemandClass::kLarge;
  return cost_->inference(v) >= threshold_;
}

std::vector<OpIndex> rank_ready(std::span<const OpIndex> ready, const WorkflowGraph& g,
                                const PartialAssignment& f, const SearchConfig& cfg) {
  std::vector<std::string_view> tail_models;
  for (WorkerIndex d = 0; d < f.workers(); ++d)
    if (!f.sequence(d).empty()) tail_models.push_back(g.op(f.sequence(d).back()).model);

  struct Ranked {
    OpIndex op;
    double score;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(ready.size());
  for (OpIndex v : ready) {
    const bool affinity =
        std::find(tail_models.begin(), tail_models.end(), g.op(v).model) != tail_models.end();
    ranked.push_back({v, cfg.rank_weights.out_degree * static_cast<double>(g.out_degree(v)) +
                             cfg.rank_weights.context_affinity * (affinity ? 1.0 : 0.0)});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [&](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return g.id_less(a.op, b.op);
  });
  const std::size_t keep = std::min(cfg.workers, ranked.size());
  std::vector<OpIndex> top;
  for (std::size_t i = 0; i < keep; ++i) top.push_back(ranked[i].op);
  return top;
}

std::vector<PartialAssignment> candidate_assignments(std::span<const OpIndex> top, const PartialAssignment& f,
                                                     const SearchContext& ctx) {
  if (top.empty()) throw SearchError("no ready operators for an incomplete assignment");
  const std::size_t m = f.workers();
  std::vector<PartialAssignment> out;

  if (top.size() >= m) {
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
      PartialAssignment ext = f;
      for (WorkerIndex d = 0; d < m; ++d) ext.assign(top[perm[d]], {d});
      out.push_back(std::move(ext));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  }

  // Padding round: distribute the m worker slots over r < m operators.
  const std::size_t r = top.size();
  std::vector<std::size_t> by_demand(r);
  std::iota(by_demand.begin(), by_demand.end(), std::size_t{0});
  const auto& g = ctx.graph();
  std::stable_sort(by_demand.begin(), by_demand.end(), [&](std::size_t a, std::size_t b) {
    Nanos ea = ctx.cost().inference(top[a]), eb = ctx.cost().inference(top[b]);
    if (ea != eb) return ea > eb;
    return g.id_less(top[a], top[b]);
  });

  std::vector<std::vector<std::size_t>> shapes;
  std::vector<std::size_t> cur;
  compositions(m, r, cur, shapes);

  const std::size_t budget = factorial(m);
  std::size_t used = 0;
  for (const auto& shape : shapes) {
    // shape[i] is the multiplicity of the i-th most demanding operator.
    std::vector<std::size_t> mu(r);
    for (std::size_t i = 0; i < r; ++i) mu[by_demand[i]] = shape[i];
    const std::size_t count = multinomial(mu);
    if (used + count > budget) continue;
    used += count;

    std::vector<std::size_t> slots;  // slot owner per worker, as index into top
    for (std::size_t i = 0; i < r; ++i) slots.insert(slots.end(), mu[i], i);
    do {
      PartialAssignment ext = f;
      for (std::size_t i = 0; i < r; ++i) {
        std::vector<WorkerIndex> workers;
        for (WorkerIndex d = 0; d < m; ++d)
          if (slots[d] == i) workers.push_back(d);
        if (workers.size() > 1 && !ctx.is_large(top[i])) workers.resize(1);
        ext.assign(top[i], std::move(workers));
      }
      out.push_back(std::move(ext));
    } while (std::next_permutation(slots.begin(), slots.end()));
  }
  return out;
}

std::size_t candidates_per_round_bound(const SearchConfig& cfg) {
  const std::size_t mf = factorial(cfg.workers);
  if (cfg.beam_width > std::numeric_limits<std::size_t>::max() / mf) return std::numeric_limits<std::size_t>::max();
  return cfg.beam_width * mf;
}

std::vector<Nanos> score_candidates_serial(std::span<const PartialAssignment> candidates, const CostModel& cost) {
  std::vector<Nanos> out(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) out[i] = cost.total(candidates[i]);
  return out;
}

std::vector<Nanos> score_candidates_parallel(std::span<const PartialAssignment> candidates,
                                             const CostModel& cost) {
  std::vector<Nanos> out(candidates.size());
  const long n = static_cast<long>(candidates.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = cost.total(candidates[static_cast<std::size_t>(i)]);
  return out;
}

SearchResult beam_search(const CostModel& cost, const SearchConfig& cfg) {
  const SearchContext ctx(cost, cfg);
  const auto& g = cost.graph();
  const std::size_t bound = candidates_per_round_bound(cfg);

  std::vector<Scored> beam;
  {
    PartialAssignment empty(cfg.workers, g.size());
    Nanos c = cost.total(empty);
    beam.push_back({std::move(empty), c, {}});
  }
  SearchStats stats;

  while (!beam.front().f.complete()) {
    std::vector<Scored> next;
    std::vector<PartialAssignment> fresh;
    for (auto& elem : beam) {
      if (elem.f.complete()) {
        next.push_back(std::move(elem));
        continue;
      }
      const auto ready = ready_set(g, elem.f.assigned_mask());
      const auto top = rank_ready(ready, g, elem.f, cfg);
      auto cands = candidate_assignments(top, elem.f, ctx);
      for (auto& c : cands) fresh.push_back(std::move(c));
    }
    if (fresh.size() > bound)
      throw SearchError("round produced " + std::to_string(fresh.size()) + " expansions, above the w*m! bound");
    stats.rounds += 1;
    stats.total_expansions += fresh.size();
    stats.max_expansions_per_round = std::max(stats.max_expansions_per_round, fresh.size());
    stats.expansions_per_round.push_back(fresh.size());

    const auto costs = cfg.scoring == ScoringMode::kParallel ? score_candidates_parallel(fresh, cost)
                                                             : score_candidates_serial(fresh, cost);
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      auto key = fresh[i].encoding();
      next.push_back({std::move(fresh[i]), costs[i], std::move(key)});
    }
    std::stable_sort(next.begin(), next.end(), scored_less);
    next.erase(std::unique(next.begin(), next.end(),
                           [](const Scored& a, const Scored& b) { return a.key == b.key; }),
               next.end());
    if (next.size() > cfg.beam_width) next.resize(cfg.beam_width);
    beam = std::move(next);
  }

  for (auto& elem : beam) {
    if (elem.f.complete()) return {std::move(elem.f), elem.cost, std::move(stats)};
  }
  throw SearchError("beam search ended without a complete assignment");
}

SearchResult exhaustive_oracle(const CostModel& cost, const SearchConfig& cfg) {
  const auto& g = cost.graph();
  if (g.size() > 8 || cfg.workers > 3)
    throw SizeGuardError("exhaustive oracle is limited to 8 operators and 3 workers");
  SearchConfig serial = cfg;
  serial.scoring = ScoringMode::kSerial;
  const SearchContext ctx(cost, serial);

  std::optional<Scored> best;
  SearchStats stats;
  std::function<void(const PartialAssignment&)> dfs = [&](const PartialAssignment& f) {
    if (f.complete()) {
      Scored s{f, cost.total(f), f.encoding()};
      if (!best || scored_less(s, *best)) best = std::move(s);
      return;
    }
    const auto ready = ready_set(g, f.assigned_mask());
    const auto top = rank_ready(ready, g, f, serial);
    const auto cands = candidate_assignments(top, f, ctx);
    stats.total_expansions += cands.size();
    for (const auto& c : cands) dfs(c);
  };
  dfs(PartialAssignment(cfg.workers, g.size()));
  return {std::move(best->f), best->cost, std::move(stats)};
}

}  // namespace agentplan
