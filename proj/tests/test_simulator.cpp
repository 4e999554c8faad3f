#include <doctest.h>

#include <random>

#include "agentplan/baselines.hpp"
#include "agentplan/config.hpp"
#include "agentplan/errors.hpp"
#include "agentplan/simulator.hpp"
#include "support.hpp"

using namespace agentplan;
using namespace agentplan::testing;

namespace {

// One query at a time, no reuse, no transfers: the regime in which the
// simulator reduces to the undiscounted cost formula.
SimulationConfig serial_config() {
  SimulationConfig c;
  c.batching.mode = BatchingMode::kFixed;
  c.batching.fixed_batch = 1;
  c.batching.prefill_batch = 1;
  c.cache_reuse = false;
  return c;
}

Assignment single(std::size_t m, std::size_t ops, std::initializer_list<std::pair<OpIndex, WorkerIndex>> places) {
  Assignment f(m, ops);
  for (auto [v, d] : places) f.assign(v, {d});
  return f;
}

Nanos total_of(const ExecutionTrace& t, EventKind kind) {
  Nanos sum{0};
  for (const auto& e : t.events)
    if (e.kind == kind) sum += e.duration;
  return sum;
}

}  // namespace

TEST_SUITE("simulator") {
  TEST_CASE("an empty batch produces an empty trace") {
    const WorkflowGraph g = diamond();
    const TokenTable t(g, default_queries(0));
    const auto trace = simulate(schedule_round_robin(g, 2), g, t, LatencyProfile::defaults(), CostCoefficients{},
                                SimulationConfig{});
    CHECK(trace.events.empty());
    CHECK(trace.wall_clock == Nanos{0});
    CHECK(trace.completed_queries == 0);
  }

  TEST_CASE("a single operator runs for exactly e + p") {
    const LatencyProfile prof = round_profile();
    const WorkflowGraph g = make_graph({make_op("A", "m1", 100, 50, 20, "kb")}, {});
    const TokenTable t(g, default_queries(3));
    const CostModel cost(g, t, prof, CostCoefficients::ones(), 1);
    const Assignment f = single(1, 1, {{0, 0}});
    const auto trace = simulate(f, g, t, prof, CostCoefficients::ones(), serial_config());
    CHECK(trace.wall_clock == cost.inference(0) + cost.prep(0));
    CHECK(trace.wall_clock == std::chrono::milliseconds(3 * ((100 + 20) * 1 + 50 * 20) + 10000 + 20 / 2));
    CHECK(trace.completed_queries == 3);
  }

  TEST_CASE("busy time per worker equals the undiscounted per-worker cost") {
    std::mt19937_64 rng(44);
    LatencyProfile prof = LatencyProfile::defaults();
    prof.handoff_per_token = Nanos{0};
    for (int i = 0; i < 60; ++i) {
      const std::size_t m = 1 + i % 3;
      const Workflow wf = random_workflow(rng, 1 + i % 6, 1 + i % 10);
      const TokenTable t(wf.graph, wf.batch);
      const Assignment f = random_assignment(wf.graph, m, rng);
      const CostModel cost(wf.graph, t, prof, CostCoefficients::ones(), m);
      const auto trace = simulate(f, wf.graph, t, prof, CostCoefficients::ones(), serial_config());
      CHECK(trace.busy == cost.assigned(f).per_worker);
      CHECK(trace.wall_clock >= cost.assigned(f).max);
    }
  }

  TEST_CASE("a chain on one worker matches C_a exactly") {
    std::mt19937_64 rng(45);
    for (int i = 0; i < 40; ++i) {
      const Workflow wf = random_workflow(rng, 1 + i % 6, 1 + i % 7);
      const TokenTable t(wf.graph, wf.batch);
      const Assignment f = schedule_naive_topological(wf.graph, 1);
      const CostModel cost(wf.graph, t, LatencyProfile::defaults(), CostCoefficients::ones(), 1);
      const auto trace = simulate(f, wf.graph, t, LatencyProfile::defaults(), CostCoefficients::ones(), serial_config());
      CHECK(trace.wall_clock == cost.assigned(f).max);
    }
  }

  TEST_CASE("cross-worker children pay a handoff proportional to their prompt") {
    LatencyProfile prof = round_profile();
    prof.handoff_per_token = from_seconds(1e-3);
    const WorkflowGraph g = make_graph({make_op("A", "m1", 100, 10), make_op("B", "m1", 70, 10)}, {{"A", "B"}});
    const TokenTable t(g, default_queries(2));
    const auto remote = simulate(single(2, 2, {{0, 0}, {1, 1}}), g, t, prof, CostCoefficients::ones(), serial_config());
    CHECK(total_of(remote, EventKind::kTransfer) == from_seconds(2 * 70 * 1e-3));
    const auto local = simulate(single(2, 2, {{0, 0}, {1, 0}}), g, t, prof, CostCoefficients::ones(), serial_config());
    CHECK(total_of(local, EventKind::kTransfer) == Nanos{0});
  }

  TEST_CASE("prefix cache: hit after miss, LRU eviction") {
    WorkerState w;
    w.prefixes = PrefixCache(150);
    CHECK(prefix_cache_lookup(w, "A", 100) == CacheResult::kMiss);
    CHECK(prefix_cache_lookup(w, "A", 100) == CacheResult::kHit);
    CHECK(prefix_cache_lookup(w, "B", 100) == CacheResult::kMiss);
    CHECK(prefix_cache_lookup(w, "A", 100) == CacheResult::kMiss);
    CHECK(w.prefixes.evictions() == 2);

    PrefixCache c(300);
    c.insert("x", 100);
    c.insert("y", 100);
    c.insert("z", 100);
    c.touch("x");
    c.insert("w", 100);
    CHECK(c.keys_lru_first() == std::vector<std::string>{"z", "x", "w"});
    CHECK_FALSE(c.insert("huge", 301));
    CHECK(c.used() == 300);
  }

  TEST_CASE("a KV transfer is about ten times cheaper than recomputing the prefill") {
    const LatencyProfile prof = LatencyProfile::defaults();
    for (const auto& [name, m] : prof.models)
      CHECK(static_cast<double>(m.prefill_per_token.count()) / static_cast<double>(m.transfer_per_token.count()) ==
            doctest::Approx(10.0));
    CHECK_NOTHROW(prof.validate());
    LatencyProfile bad = prof;
    bad.models["small"].transfer_per_token = bad.models["small"].prefill_per_token;
    CHECK_THROWS_AS(bad.validate(), ProfileError);
  }

  TEST_CASE("order_queries") {
    const WorkflowGraph g = make_graph({make_op("a", "m1", 10, 10)}, {});
    QueryBatch b;
    for (Tokens p : {290, 90, 190}) {
      QueryInstance q;
      q.id = "q" + std::to_string(p);
      q.overrides["a"].prompt_tokens = p;
      q.priority = static_cast<int>(p / 100);
      b.queries.push_back(q);
    }
    const TokenTable t(g, b);
    CHECK(t.total_length(0) == 300);
    CHECK(order_queries(t, QueryOrder::kLengthSorted) == std::vector<QueryIndex>{1, 2, 0});
    CHECK(order_queries(t, QueryOrder::kFifo) == std::vector<QueryIndex>{0, 1, 2});
    CHECK(order_queries(t, QueryOrder::kPriority) == std::vector<QueryIndex>{0, 2, 1});
    CHECK(order_queries(t, QueryOrder::kLengthSorted, 1, 3) == std::vector<QueryIndex>{1, 2});

    const TokenTable same(g, default_queries(5));
    CHECK(order_queries(same, QueryOrder::kLengthSorted) == std::vector<QueryIndex>{0, 1, 2, 3, 4});
    CHECK(order_queries(same, QueryOrder::kPriority) == std::vector<QueryIndex>{0, 1, 2, 3, 4});
  }

  TEST_CASE("fixed batching overflows where adaptive batching adapts") {
    const WorkflowGraph g = make_graph({make_op("a", "small", 500, 100)}, {});
    const TokenTable t(g, default_queries(16));
    SimulationConfig c;
    c.batching.memory_capacity_tokens = 2000;
    c.batching.prefix_cache_tokens = 100;
    c.batching.mode = BatchingMode::kFixed;
    c.batching.fixed_batch = 8;
    const Assignment f = single(1, 1, {{0, 0}});
    CHECK_THROWS_AS(simulate(f, g, t, LatencyProfile::defaults(), CostCoefficients{}, c), OverflowError);
    c.batching.mode = BatchingMode::kAdaptive;
    const auto trace = simulate(f, g, t, LatencyProfile::defaults(), CostCoefficients{}, c);
    CHECK(trace.completed_queries == 16);
    CHECK(trace.peak_memory_tokens <= 2000);
    // A single query larger than the whole decode budget cannot run at all.
    c.batching.memory_capacity_tokens = 500;
    CHECK_THROWS_AS(simulate(f, g, t, LatencyProfile::defaults(), CostCoefficients{}, c), ValidationError);
  }

  TEST_CASE("cross-worker cyclic orders are reported as a deadlock") {
    // A -> B, C -> D with d1 running [D, A] and d2 running [B, C].
    const WorkflowGraph g =
        make_graph({make_op("A", "small", 10, 1), make_op("B", "small", 10, 1), make_op("C", "small", 10, 1),
                    make_op("D", "small", 10, 1)},
                   {{"A", "B"}, {"C", "D"}});
    Assignment f(2, 4);
    f.assign(3, {0});
    f.assign(0, {0});
    f.assign(1, {1});
    f.assign(2, {1});
    CHECK_THROWS_AS(simulate(f, g, TokenTable(g, default_queries(1)), LatencyProfile::defaults(), CostCoefficients{},
                             SimulationConfig{}),
                    ValidationError);
  }

  TEST_CASE("plan and graph must match") {
    const WorkflowGraph g = diamond();
    Assignment partial(2, 4);
    partial.assign(0, {0});
    CHECK_THROWS_AS(simulate(partial, g, TokenTable(g, default_queries(1)), LatencyProfile::defaults(),
                             CostCoefficients{}, SimulationConfig{}),
                    ValidationError);
  }

  TEST_CASE("metrics: busy fractions, utilization, throughput") {
    const WorkflowGraph g = make_graph({make_op("a", "small", 100, 10)}, {});
    const TokenTable t(g, default_queries(4));
    const auto one = simulate(single(1, 1, {{0, 0}}), g, t, LatencyProfile::defaults(), CostCoefficients{},
                              SimulationConfig{});
    const Metrics m1 = collect_metrics(one);
    CHECK(m1.utilization_auc == doctest::Approx(1.0));
    CHECK(m1.throughput_qps == doctest::Approx(4.0 / m1.wall_clock_s));

    const auto two = simulate(single(2, 1, {{0, 0}}), g, t, LatencyProfile::defaults(), CostCoefficients{},
                              SimulationConfig{});
    const Metrics m2 = collect_metrics(two);
    CHECK(m2.busy_fraction == std::vector<double>{1.0, 0.0});
    CHECK(m2.utilization_auc == doctest::Approx(0.5));
  }

  TEST_CASE("adaptive batching keeps memory fuller than fixed batching on long decodes") {
    const WorkflowGraph g = make_graph({make_op("think", "medium", 600, 900), make_op("answer", "medium", 300, 400)},
                                       {{"think", "answer"}});
    std::mt19937_64 rng(9);
    QueryBatch b;
    for (int q = 0; q < 96; ++q) {
      QueryInstance qi;
      qi.id = "q" + std::to_string(q);
      qi.overrides["think"].output_tokens = std::uniform_int_distribution<Tokens>(100, 1800)(rng);
      b.queries.push_back(qi);
    }
    const TokenTable t(g, b);
    const Assignment f = single(1, 2, {{0, 0}, {1, 0}});
    SimulationConfig adaptive;
    adaptive.batching.memory_capacity_tokens = 65536;
    adaptive.batching.prefix_cache_tokens = 4096;
    SimulationConfig fixed = adaptive;
    fixed.batching.mode = BatchingMode::kFixed;
    const auto ma = collect_metrics(simulate(f, g, t, LatencyProfile::defaults(), CostCoefficients{}, adaptive));
    const auto mf = collect_metrics(simulate(f, g, t, LatencyProfile::defaults(), CostCoefficients{}, fixed));
    CHECK(ma.memory_auc > mf.memory_auc);
    CHECK(ma.wall_clock_s < mf.wall_clock_s);
  }

  TEST_CASE("reuse collapses preparation time on the voting workflow") {
    const Workflow wf = load_workflow(std::string(AGENTPLAN_SOURCE_DIR) + "/scenarios/workflows/w4_voting.yaml");
    const QueryBatch batch = expand_queries(wf.batch, 64);
    const TokenTable t(wf.graph, batch);
    RunConfig rc;
    const auto plan = make_plan(Scheduler::kHalo, wf.graph, t, rc);
    const auto with = simulate(plan.assignment, wf.graph, t, rc.profile, rc.coefficients, rc.simulation);
    SimulationConfig off = rc.simulation;
    off.cache_reuse = false;
    const auto without =
        simulate(plan.assignment, wf.graph, t, rc.profile, CostCoefficients::ones(), off);
    const Nanos prep_with = total_of(with, EventKind::kLoad) + total_of(with, EventKind::kPrep);
    const Nanos prep_without = total_of(without, EventKind::kLoad) + total_of(without, EventKind::kPrep);
    CHECK(to_seconds(prep_with) < 0.5 * to_seconds(prep_without));
    CHECK(with.wall_clock < without.wall_clock);
    // Each replica prefills its template prefix once for the whole shard.
    CHECK(with.prefix_misses > 0);
    CHECK(without.prefix_misses + without.prefix_hits == 0);
  }

  TEST_CASE("traces are deterministic and satisfy their invariants") {
    std::mt19937_64 rng(77);
    for (int i = 0; i < 100; ++i) {
      const std::size_t m = 1 + i % 3;
      const Workflow wf = random_workflow(rng, 1 + i % 6, 1 + i % 25);
      const TokenTable t(wf.graph, wf.batch);
      const Assignment f = random_assignment(wf.graph, m, rng);
      SimulationConfig c;
      c.order = static_cast<QueryOrder>(i % 3);
      const auto a = simulate(f, wf.graph, t, LatencyProfile::defaults(), CostCoefficients{}, c);
      const auto b = simulate(f, wf.graph, t, LatencyProfile::defaults(), CostCoefficients{}, c);
      CHECK(a == b);
      CHECK(trace_to_ndjson(a, wf.graph) == trace_to_ndjson(b, wf.graph));
      CHECK_FALSE(check_trace_invariants(a, wf.graph, f).has_value());
      CHECK(a.completed_queries == t.queries());
    }
  }

  TEST_CASE("state carried across calls keeps models loaded") {
    const WorkflowGraph g = make_graph({make_op("a", "small", 100, 10)}, {});
    const TokenTable t(g, default_queries(2));
    const Assignment f = single(1, 1, {{0, 0}});
    SimulationConfig c;
    ClusterState state = ClusterState::fresh(1, c.batching);
    const auto first = simulate(f, g, t, LatencyProfile::defaults(), CostCoefficients{}, c, &state);
    const auto second = simulate(f, g, t, LatencyProfile::defaults(), CostCoefficients{}, c, &state, first.wall_clock);
    CHECK(second.wall_clock < first.wall_clock);
    CHECK(second.origin == first.wall_clock);
  }

  TEST_CASE("exports carry the schema version") {
    const WorkflowGraph g = diamond();
    const TokenTable t(g, default_queries(3));
    const auto trace = simulate(schedule_round_robin(g, 2), g, t, LatencyProfile::defaults(), CostCoefficients{},
                                SimulationConfig{});
    const std::string nd = trace_to_ndjson(trace, g);
    CHECK(nd.find("\"schema_version\":1") != std::string::npos);
    CHECK(metrics_to_json(collect_metrics(trace)).find("\"schema_version\"") != std::string::npos);
    CHECK(memory_curve_csv(trace).rfind("# schema_version=1\ntime_s,worker,used_tokens,used_fraction\n", 0) == 0);
    const std::string util = utilization_curve_csv(trace, 10);
    CHECK(std::count(util.begin(), util.end(), '\n') == 2 + 10);
  }
}
