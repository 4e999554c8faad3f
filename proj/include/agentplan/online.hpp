#pragma once

// Online mini-batch mode. Queries arrive as a Poisson process; at every
// interval tick an idle executor takes everything buffered so far, plans it
// as one batch and runs it on workers whose state persists across batches.
// A busy executor lets the buffer grow (blocking, unbounded queue).

#include <cstdint>
#include <span>
#include <vector>

#include "agentplan/config.hpp"

namespace agentplan {

struct ArrivalProcess {
  enum class Kind { kOffline, kPoisson };
  Kind kind = Kind::kPoisson;
  double rate_qps = 1.0;
  std::uint64_t seed = 0;
  double minibatch_interval_s = 1.0;

  void validate() const;  // throws ValidationError
};

// Arrival times in [0, duration_s), ascending.
std::vector<double> poisson_arrival_times(double rate_qps, double duration_s, std::uint64_t seed);
// `count` exponential inter-arrival gaps.
std::vector<double> poisson_interarrivals(double rate_qps, std::size_t count, std::uint64_t seed);

struct OnlineResult {
  double offered_qps = 0.0;
  std::size_t arrived = 0;
  std::size_t completed = 0;
  std::size_t batches = 0;
  std::size_t max_batch = 0;
  double makespan_s = 0.0;        // last completion
  double throughput_qps = 0.0;    // completed / makespan
  double p50_latency_s = 0.0;
  double p95_latency_s = 0.0;
  double mean_latency_s = 0.0;
};

// `base` supplies the per-query token overrides, cycled over arrivals.
OnlineResult run_online(Scheduler scheduler, const WorkflowGraph& g, const QueryBatch& base, const RunConfig& cfg,
                        const ArrivalProcess& arrivals, double duration_s);

struct SaturationReport {
  std::vector<OnlineResult> points;  // one per offered rate, ascending
  double saturation_throughput_qps = 0.0;
  // Highest offered rate served at >= 95% of the offered rate.
  double sustained_rate_qps = 0.0;
};

SaturationReport saturation_sweep(Scheduler scheduler, const WorkflowGraph& g, const QueryBatch& base,
                                  const RunConfig& cfg, ArrivalProcess arrivals, double duration_s,
                                  std::span<const double> rates);

// 0.1 ... 100 qps.
std::vector<double> default_rate_sweep();

}  // namespace agentplan
