#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>

namespace agentplan {

// All simulated and estimated time is kept in whole nanoseconds so that sums
// are exact and independent of evaluation order.
using Nanos = std::chrono::nanoseconds;

using OpIndex = std::size_t;
using WorkerIndex = std::size_t;
using QueryIndex = std::size_t;
using Tokens = std::int64_t;

inline double to_seconds(Nanos d) { return static_cast<double>(d.count()) * 1e-9; }

inline Nanos from_seconds(double s) { return Nanos{std::llround(s * 1e9)}; }

// Multiplies a duration by a real factor, rounding to the nearest nanosecond.
// A factor of exactly 1 leaves the value untouched.
inline Nanos scale(Nanos d, double factor) {
  if (factor == 1.0) return d;
  return Nanos{std::llround(static_cast<double>(d.count()) * factor)};
}

// rate (per token) * token count, exact for integer rates.
inline Nanos per_tokens(Nanos rate, Tokens tokens) { return rate * tokens; }

}  // namespace agentplan
