#include "agentplan/online.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "agentplan/errors.hpp"

namespace agentplan {

void ArrivalProcess::validate() const {
  if (kind == Kind::kPoisson && !(rate_qps > 0.0)) throw ValidationError("arrival rate must be > 0");
  if (!(minibatch_interval_s > 0.0)) throw ValidationError("mini-batch interval must be > 0");
}

std::vector<double> poisson_interarrivals(double rate_qps, std::size_t count, std::uint64_t seed) {
  if (!(rate_qps > 0.0)) throw ValidationError("arrival rate must be > 0");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(rate_qps);
  std::vector<double> out(count);
  for (auto& g : out) g = gap(rng);
  return out;
}

std::vector<double> poisson_arrival_times(double rate_qps, double duration_s, std::uint64_t seed) {
  if (!(rate_qps > 0.0)) throw ValidationError("arrival rate must be > 0");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(rate_qps);
  std::vector<double> out;
  for (double t = gap(rng); t < duration_s; t += gap(rng)) out.push_back(t);
  return out;
}

namespace {

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double rank = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

OnlineResult run_online(Scheduler scheduler, const WorkflowGraph& g, const QueryBatch& base, const RunConfig& cfg,
                        const ArrivalProcess& arrivals, double duration_s) {
  arrivals.validate();
  OnlineResult res;
  res.offered_qps = arrivals.rate_qps;

  std::vector<double> times;
  if (arrivals.kind == ArrivalProcess::Kind::kPoisson) {
    times = poisson_arrival_times(arrivals.rate_qps, duration_s, arrivals.seed);
  } else {
    times.assign(base.empty() ? 1 : base.size(), 0.0);
  }
  QueryBatch stream = expand_queries(base, times.size());
  for (std::size_t i = 0; i < times.size(); ++i) stream.queries[i].arrival_time = times[i];
  res.arrived = times.size();
  if (times.empty()) return res;

  SimulationConfig sim = cfg.simulation;
  sim.record_events = false;
  ClusterState state = ClusterState::fresh(cfg.search.workers, sim.batching);
  const Nanos interval = from_seconds(arrivals.minibatch_interval_s);

  std::vector<double> latency;
  latency.reserve(times.size());
  Nanos free_at{0};
  Nanos last_completion{0};
  std::size_t next = 0;
  while (next < times.size()) {
    // First tick at which the executor is idle and something has arrived.
    const Nanos earliest = std::max(free_at, from_seconds(times[next]));
    const Nanos tick = interval * ((earliest.count() + interval.count() - 1) / interval.count());
    QueryBatch batch;
    while (next < times.size() && from_seconds(times[next]) <= tick) batch.queries.push_back(stream.queries[next++]);

    const TokenTable tokens(g, batch);
    const auto plan = make_plan(scheduler, g, tokens, cfg);
    const auto trace = simulate(plan.assignment, g, tokens, cfg.profile, cfg.coefficients, sim, &state, tick);
    free_at = tick + trace.wall_clock;
    for (QueryIndex q = 0; q < batch.size(); ++q) {
      const Nanos done = trace.query_completion[q];
      last_completion = std::max(last_completion, done);
      latency.push_back(to_seconds(done) - batch.queries[q].arrival_time);
    }
    res.completed += trace.completed_queries;
    res.batches += 1;
    res.max_batch = std::max(res.max_batch, batch.size());
  }
  res.makespan_s = to_seconds(last_completion);
  res.throughput_qps = res.makespan_s > 0 ? static_cast<double>(res.completed) / res.makespan_s : 0.0;
  res.p50_latency_s = percentile(latency, 0.50);
  res.p95_latency_s = percentile(latency, 0.95);
  double sum = 0.0;
  for (double l : latency) sum += l;
  res.mean_latency_s = sum / static_cast<double>(latency.size());
  return res;
}

SaturationReport saturation_sweep(Scheduler scheduler, const WorkflowGraph& g, const QueryBatch& base,
                                  const RunConfig& cfg, ArrivalProcess arrivals, double duration_s,
                                  std::span<const double> rates) {
  SaturationReport rep;
  std::vector<double> sorted(rates.begin(), rates.end());
  std::sort(sorted.begin(), sorted.end());
  rep.points.resize(sorted.size());
  // Each rate is an independent run.
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < static_cast<long>(sorted.size()); ++i) {
    ArrivalProcess a = arrivals;
    a.rate_qps = sorted[static_cast<std::size_t>(i)];
    rep.points[static_cast<std::size_t>(i)] = run_online(scheduler, g, base, cfg, a, duration_s);
  }
  for (const auto& p : rep.points) {
    rep.saturation_throughput_qps = std::max(rep.saturation_throughput_qps, p.throughput_qps);
    if (p.throughput_qps >= 0.95 * p.offered_qps) rep.sustained_rate_qps = std::max(rep.sustained_rate_qps, p.offered_qps);
  }
  return rep;
}

std::vector<double> default_rate_sweep() { return {0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0}; }

}  // namespace agentplan
