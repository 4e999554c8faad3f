#include <doctest.h>

#include <random>

#include "agentplan/config.hpp"
#include "agentplan/errors.hpp"
#include "agentplan/cost_model.hpp"
#include "support.hpp"

using namespace agentplan;
using namespace agentplan::testing;

namespace {

CostCoefficients no_discounts(double beta = 1.0) {
  CostCoefficients c = CostCoefficients::ones();
  c.beta = beta;
  return c;
}

}  // namespace

TEST_SUITE("cost_model") {
  TEST_CASE("inference cost is direct token arithmetic") {
    const WorkflowGraph g = make_graph({make_op("A", "m1", 100, 50)}, {});
    const LatencyProfile prof = round_profile();
    const TokenTable one(g, default_queries(1));
    CHECK(inference_cost(g, 0, one, prof).total() == from_seconds(1.1));
    CHECK(inference_cost(g, 0, one, prof).prefill == from_seconds(0.1));

    const TokenTable none(g, default_queries(0));
    CHECK(inference_cost(g, 0, none, prof).total() == Nanos{0});

    OperatorSpec rep = make_op("R", "m1", 100, 50);
    rep.repeat = 3;
    const WorkflowGraph gr = make_graph({rep}, {});
    CHECK(inference_cost(gr, 0, TokenTable(gr, default_queries(2)), prof).total() == from_seconds(6.6));
  }

  TEST_CASE("unknown models are profile errors") {
    const WorkflowGraph g = make_graph({make_op("A", "nope", 10, 1)}, {});
    CHECK_THROWS_AS(inference_cost(g, 0, TokenTable(g, default_queries(1)), round_profile()), ProfileError);
    CHECK_THROWS_AS(prep_cost(g.op(0), {}, round_profile()), ProfileError);
  }

  TEST_CASE("large-model aggregator costs more than each small analyzer") {
    const Workflow wf = load_workflow(std::string(AGENTPLAN_SOURCE_DIR) + "/scenarios/workflows/w4_voting.yaml");
    WorkflowGraph g;
    for (const auto& op : wf.graph.operators()) {
      OperatorSpec s = op;
      if (s.id == "decide") s.model = "large";
      g.add_operator(s);
    }
    for (auto [a, b] : wf.graph.edges()) g.add_edge(wf.graph.op(a).id, wf.graph.op(b).id);
    const TokenTable t(g, wf.batch);
    const auto prof = LatencyProfile::defaults();
    const Nanos agg = inference_cost(g, g.index_of("decide"), t, prof).total();
    for (const char* a : {"political", "economic", "social"})
      CHECK(agg > inference_cost(g, g.index_of(a), t, prof).total());
  }

  TEST_CASE("prep cost is undiscounted load plus context preparation") {
    const LatencyProfile prof = round_profile();
    const OperatorSpec a = make_op("A", "m1", 10, 1);
    CHECK(prep_cost(a, {}, prof) == from_seconds(10.0));
    const OperatorSpec b = make_op("B", "m1", 10, 1, 40, "kb");
    const std::vector<OpIndex> history = {0};
    CHECK(prep_cost(b, history, prof) == from_seconds(10.0 + 40 * 5e-4));
  }

  TEST_CASE("reuse collapses the prep of consecutive same-model, same-source operators") {
    // Two operators sharing model and retrieval corpus, ~22 s of prep each.
    const LatencyProfile prof = round_profile();
    const WorkflowGraph g = make_graph({make_op("A", "m2", 100, 10, 4000, "docs"),
                                        make_op("B", "m2", 100, 10, 4000, "docs")},
                                       {{"A", "B"}});
    const CostModel cost(g, TokenTable(g, default_queries(1)), prof, CostCoefficients{}, 1);
    CHECK(cost.prep(1) == from_seconds(22.0));
    Assignment f(1, 2);
    f.assign(0, {0});
    f.assign(1, {0});
    const auto d = resolve_discounts(f.sequence(0), g, cost.coefficients());
    const double effective = to_seconds(cost.prep(1)) * d[1].sigma * d[1].lambda;
    CHECK(effective == doctest::Approx(22.0 * 0.1 * 0.5));
    CHECK(effective < 0.06 * 22.0);
  }

  TEST_CASE("resolve_discounts") {
    const CostCoefficients coef;
    const WorkflowGraph same = make_graph({make_op("A", "m1", 10, 1), make_op("B", "m1", 10, 1)}, {{"A", "B"}});
    const std::vector<OpIndex> seq = {0, 1};
    const auto d = resolve_discounts(seq, same, coef);
    CHECK(d[0] == Discounts{});
    CHECK(d[1].sigma == coef.sigma);
    CHECK(d[1].gamma == coef.gamma);

    const WorkflowGraph diff = make_graph({make_op("A", "m1", 10, 1), make_op("B", "m2", 10, 1)}, {{"A", "B"}});
    const auto e = resolve_discounts(seq, diff, coef);
    CHECK(e[1].sigma == 1.0);
    CHECK(e[1].gamma == 1.0);

    // Siblings sharing a model and a parent: the second reuses the first's
    // weights and the common parent's KV state.
    const WorkflowGraph sib = make_graph({make_op("P", "m2", 10, 1), make_op("A", "m1", 10, 1),
                                          make_op("C", "m1", 10, 1), make_op("D", "m1", 10, 1)},
                                         {{"P", "A"}, {"P", "C"}, {"A", "D"}, {"C", "D"}});
    const std::vector<OpIndex> ac = {1, 2};
    const auto s = resolve_discounts(ac, sib, coef);
    CHECK(s[1].sigma == coef.sigma);
  }

  TEST_CASE("assigned cost: empty, single operator, replication") {
    const LatencyProfile prof = round_profile();
    const WorkflowGraph g = make_graph({make_op("A", "m1", 100, 50)}, {});
    const TokenTable t(g, default_queries(4));
    const CostModel cost(g, t, prof, no_discounts(), 2);

    Assignment empty(2, 1);
    CHECK(cost.assigned(empty).max == Nanos{0});
    CHECK(cost.total(empty) == cost.remaining(empty));

    Assignment one(2, 1);
    one.assign(0, {1});
    const auto c1 = cost.assigned(one);
    CHECK(c1.per_worker[0] == Nanos{0});
    CHECK(c1.per_worker[1] == from_seconds(4 * 1.1 + 10.0));
    CHECK(cost.remaining(one) == Nanos{0});
    CHECK(cost.total(one) == c1.max);

    // Replicated with beta = 1: each replica computes its 2-query shard at
    // factor k^(1-beta) = 1 and pays the full load.
    Assignment both(2, 1);
    both.assign(0, {0, 1});
    const auto c2 = cost.assigned(both);
    CHECK(c2.per_worker[0] == from_seconds(2 * 1.1 + 10.0));
    CHECK(c2.per_worker[1] == from_seconds(2 * 1.1 + 10.0));

    // beta = 0.5: the half shard is inflated by sqrt(2).
    const CostModel partial(g, t, prof, no_discounts(0.5), 2);
    CHECK(to_seconds(partial.assigned(both).max) == doctest::Approx(2 * 1.1 * std::sqrt(2.0) + 10.0));
  }

  TEST_CASE("remaining cost") {
    const LatencyProfile prof = round_profile();
    // e = 10 s and 20 s at one query.
    const WorkflowGraph g = make_graph({make_op("A", "m1", 0, 500), make_op("B", "m1", 0, 1000)}, {});
    const TokenTable t(g, default_queries(1));
    const CostModel two(g, t, prof, no_discounts(1.0), 2);
    CHECK(two.remaining(Assignment(2, 2)) == from_seconds(15.0));

    const CostModel single(g, t, prof, CostCoefficients{}, 1);
    Assignment f(1, 2);
    f.assign(0, {0});
    CHECK(single.remaining(f) == from_seconds(20.0));
    f.assign(1, {0});
    CHECK(single.remaining(f) == Nanos{0});
  }

  TEST_CASE("partial diamond equals an independently computed C_a + C_r") {
    const LatencyProfile prof = round_profile();
    const WorkflowGraph g = make_graph({make_op("A", "m1", 100, 10), make_op("B", "m2", 200, 20),
                                        make_op("C", "m1", 300, 30, 50, "kb"), make_op("D", "m2", 150, 40)},
                                       {{"A", "B"}, {"A", "C"}, {"B", "D"}, {"C", "D"}});
    const TokenTable t(g, default_queries(3));
    const CostCoefficients coef;
    const CostModel cost(g, t, prof, coef, 2);
    Assignment f(2, 4);
    f.assign(0, {0});
    f.assign(2, {0});
    f.assign(1, {1});
    const double ca = closed_form_assigned(g, t, prof, coef, f);
    const double e_d = 3 * (to_seconds(prof.model("m2").prefill_per_token) * (150 + 20 + 30) +
                            to_seconds(prof.model("m2").decode_per_token) * 40);
    const double cr = e_d / std::pow(2.0, coef.beta);
    CHECK(to_seconds(cost.total(f)) == doctest::Approx(ca + cr).epsilon(1e-9));
  }

  TEST_CASE("assigned cost matches the closed form on random assignments") {
    std::mt19937_64 rng(31);
    const LatencyProfile prof = LatencyProfile::defaults();
    for (int i = 0; i < 200; ++i) {
      const std::size_t m = 1 + i % 3;
      const Workflow wf = random_workflow(rng, 1 + i % 6, 1 + i % 9);
      const TokenTable t(wf.graph, wf.batch);
      CostCoefficients coef;
      coef.beta = 0.25 + (i % 4) * 0.25;
      const CostModel cost(wf.graph, t, prof, coef, m);
      const Assignment f = random_assignment(wf.graph, m, rng);
      CHECK(to_seconds(cost.assigned(f).max) ==
            doctest::Approx(closed_form_assigned(wf.graph, t, prof, coef, f)).epsilon(1e-9));
    }
  }

  TEST_CASE("without discounts C_r is a lower bound on any completion") {
    // beta = 1, all discounts 1, single assignments, no prep: the best
    // completion of the empty plan on 2 workers is the best 2-way split,
    // never below the balanced-load estimate.
    std::mt19937_64 rng(3);
    LatencyProfile prof = round_profile();
    prof.models["m1"].load = Nanos{0};
    for (int i = 0; i < 100; ++i) {
      const std::size_t k = 1 + i % 6;
      std::vector<OperatorSpec> ops;
      for (std::size_t v = 0; v < k; ++v)
        ops.push_back(make_op("o" + std::to_string(v), "m1", std::uniform_int_distribution<Tokens>(1, 500)(rng),
                              std::uniform_int_distribution<Tokens>(1, 100)(rng)));
      const WorkflowGraph g = make_graph(ops, {});
      const TokenTable t(g, default_queries(2));
      const CostModel cost(g, t, prof, no_discounts(1.0), 2);
      std::vector<double> work;
      for (OpIndex v = 0; v < k; ++v) work.push_back(to_seconds(cost.inference(v)));
      CHECK(to_seconds(cost.remaining(Assignment(2, k))) <= best_two_way_split(work) + 1e-9);
    }
  }

  TEST_CASE("shard ranges split evenly with the remainder first") {
    const std::vector<WorkerIndex> reps = {0, 2, 3};
    CHECK(shard_range(10, reps, 0) == std::pair<QueryIndex, QueryIndex>{0, 4});
    CHECK(shard_range(10, reps, 2) == std::pair<QueryIndex, QueryIndex>{4, 7});
    CHECK(shard_range(10, reps, 3) == std::pair<QueryIndex, QueryIndex>{7, 10});
    CHECK(shard_range(1, reps, 3) == std::pair<QueryIndex, QueryIndex>{1, 1});
  }

  TEST_CASE("validate_assignment rejects child-before-parent on a worker") {
    const WorkflowGraph g = diamond();
    Assignment bad(1, 4);
    bad.assign(1, {0});
    bad.assign(0, {0});
    CHECK_THROWS_AS(validate_assignment(g, bad), ValidationError);
    Assignment ok(2, 4);
    ok.assign(0, {0});
    ok.assign(1, {0, 1});
    ok.assign(2, {1});
    ok.assign(3, {0});
    CHECK_NOTHROW(validate_assignment(g, ok));
  }

  TEST_CASE("dump_csv has one row per replica") {
    const WorkflowGraph g = diamond();
    const CostModel cost(g, TokenTable(g, default_queries(5)), LatencyProfile::defaults(), CostCoefficients{}, 2);
    Assignment f(2, 4);
    f.assign(0, {0});
    f.assign(1, {0, 1});
    f.assign(2, {1});
    f.assign(3, {0});
    const std::string csv = cost.dump_csv(f);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 5);
  }
}
