#include <doctest.h>

#include <numeric>

#include "agentplan/errors.hpp"
#include "agentplan/online.hpp"
#include "support.hpp"

using namespace agentplan;
using namespace agentplan::testing;

namespace {

Workflow retrieval() {
  return load_workflow(std::string(AGENTPLAN_SOURCE_DIR) + "/scenarios/workflows/w1_retrieval.yaml");
}

}  // namespace

TEST_SUITE("online") {
  TEST_CASE("Poisson arrivals: ascending, inside the window, right mean") {
    const auto t = poisson_arrival_times(5.0, 2000.0, 3);
    CHECK(std::is_sorted(t.begin(), t.end()));
    CHECK(t.front() >= 0.0);
    CHECK(t.back() < 2000.0);
    CHECK(static_cast<double>(t.size()) == doctest::Approx(10000.0).epsilon(0.05));

    const auto gaps = poisson_interarrivals(0.5, 10000, 4);
    const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(gaps.size());
    CHECK(mean == doctest::Approx(2.0).epsilon(0.05));
    CHECK(poisson_interarrivals(0.5, 100, 4) == poisson_interarrivals(0.5, 100, 4));
    CHECK(poisson_interarrivals(0.5, 100, 4) != poisson_interarrivals(0.5, 100, 5));
  }

  TEST_CASE("far below capacity, throughput tracks the offered rate") {
    const Workflow wf = retrieval();
    RunConfig cfg;
    ArrivalProcess a;
    a.rate_qps = 0.5;
    a.seed = 1;
    const auto r = run_online(Scheduler::kHalo, wf.graph, wf.batch, cfg, a, 600.0);
    CHECK(r.completed == r.arrived);
    CHECK(r.arrived > 0);
    CHECK(r.throughput_qps == doctest::Approx(r.arrived / 600.0).epsilon(0.1));
    CHECK(r.p50_latency_s <= r.p95_latency_s);
  }

  TEST_CASE("far above capacity, throughput plateaus while the queue grows") {
    const Workflow wf = retrieval();
    RunConfig cfg;
    ArrivalProcess a;
    a.seed = 1;
    const std::vector<double> rates = {50.0, 100.0, 200.0};
    const auto rep = saturation_sweep(Scheduler::kHalo, wf.graph, wf.batch, cfg, a, 120.0, rates);
    REQUIRE(rep.points.size() == 3);
    for (const auto& p : rep.points) CHECK(p.throughput_qps < 0.5 * p.offered_qps);
    CHECK(rep.points[2].throughput_qps == doctest::Approx(rep.points[1].throughput_qps).epsilon(0.05));
    CHECK(rep.points[2].max_batch > rep.points[0].max_batch);
    CHECK(rep.points[2].p50_latency_s > rep.points[0].p50_latency_s);
  }

  TEST_CASE("planned execution saturates above the single-worker plan") {
    const Workflow wf = retrieval();
    RunConfig cfg;
    ArrivalProcess a;
    a.seed = 2;
    const std::vector<double> rates = {1.0, 10.0, 40.0};
    const auto halo = saturation_sweep(Scheduler::kHalo, wf.graph, wf.batch, cfg, a, 200.0, rates);
    const auto topo = saturation_sweep(Scheduler::kTopological, wf.graph, wf.batch, cfg, a, 200.0, rates);
    CHECK(halo.saturation_throughput_qps > topo.saturation_throughput_qps);
  }

  TEST_CASE("arrival processes are validated") {
    ArrivalProcess a;
    a.rate_qps = 0.0;
    CHECK_THROWS_AS(a.validate(), ValidationError);
    a = ArrivalProcess{};
    a.minibatch_interval_s = -1.0;
    CHECK_THROWS_AS(a.validate(), ValidationError);
    CHECK(default_rate_sweep().front() == doctest::Approx(0.1));
    CHECK(default_rate_sweep().back() == doctest::Approx(100.0));
  }
}
