#include "agentplan/simulator.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <sstream>

#include <nlohmann/json.hpp>

#include "agentplan/errors.hpp"
#include "agentplan/optimizer.hpp"

namespace agentplan {

using nlohmann::json;

const char* to_string(BatchingMode m) { return m == BatchingMode::kAdaptive ? "adaptive" : "fixed"; }

const char* to_string(QueryOrder o) {
  switch (o) {
    case QueryOrder::kLengthSorted: return "length_sorted";
    case QueryOrder::kPriority: return "priority";
    case QueryOrder::kFifo: return "fifo";
  }
  return "?";
}

BatchingMode parse_batching_mode(std::string_view s) {
  if (s == "adaptive") return BatchingMode::kAdaptive;
  if (s == "fixed") return BatchingMode::kFixed;
  throw ValidationError("unknown batching mode '" + std::string(s) + "'");
}

QueryOrder parse_query_order(std::string_view s) {
  for (auto o : {QueryOrder::kLengthSorted, QueryOrder::kPriority, QueryOrder::kFifo})
    if (s == to_string(o)) return o;
  throw ValidationError("unknown query order '" + std::string(s) + "'");
}

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::kLoad: return "load";
    case EventKind::kPrep: return "prep";
    case EventKind::kPrefill: return "prefill";
    case EventKind::kDecode: return "decode";
    case EventKind::kTransfer: return "transfer";
    case EventKind::kIdle: return "idle";
  }
  return "?";
}

void BatchingPolicy::validate() const {
  if (fixed_batch < 1 || prefill_batch < 1 || decode_saturation_batch < 1)
    throw ValidationError("batch sizes must be >= 1");
  if (memory_capacity_tokens <= 0) throw ValidationError("memory capacity must be > 0");
  if (prefix_cache_tokens < 0 || prefix_cache_tokens >= memory_capacity_tokens)
    throw ValidationError("prefix cache budget must lie in [0, memory capacity)");
}

std::size_t BatchingPolicy::decode_batch_max(Tokens tokens_per_query) const {
  if (mode == BatchingMode::kFixed) return fixed_batch;
  if (tokens_per_query <= 0) return std::numeric_limits<std::size_t>::max();
  return std::max<std::size_t>(1, static_cast<std::size_t>(decode_capacity_tokens() / tokens_per_query));
}

ThroughputEstimator make_throughput_estimator(const BatchingPolicy& policy, const LatencyProfile& prof,
                                              bool cache_reuse) {
  return [policy, prof, cache_reuse](const OperatorSpec& op, std::size_t shard) {
    ThroughputFactor f;
    const Tokens input = op.prompt_tokens + op.context_tokens;
    const Tokens reserve = input + op.output_tokens;
    const std::size_t b = std::min(shard, policy.decode_batch_max(reserve));
    f.decode = static_cast<double>(std::max<std::size_t>(1, std::min(b, policy.decode_saturation_batch)));
    if (cache_reuse && input > 0) {
      const auto& m = prof.model(op.model);
      const double ratio = static_cast<double>(m.transfer_per_token.count()) /
                           static_cast<double>(m.prefill_per_token.count());
      const double first = static_cast<double>(input - op.prefix_tokens) + ratio * static_cast<double>(op.prefix_tokens);
      const double later = ratio * static_cast<double>(input);
      const double z = static_cast<double>(op.repeat);
      f.prefill = z * static_cast<double>(input) / (first + (z - 1.0) * later);
    }
    return f;
  };
}

CostCoefficients effective_coefficients(const CostCoefficients& coef, bool cache_reuse) {
  CostCoefficients c = coef;
  if (!cache_reuse) c.gamma = c.lambda = 1.0;
  return c;
}

bool PrefixCache::touch(const std::string& key) {
  auto it = index_.find(key);
  if (it == index_.end()) return false;
  lru_.splice(lru_.end(), lru_, it->second);
  return true;
}

bool PrefixCache::insert(const std::string& key, Tokens tokens) {
  if (tokens > capacity_) return false;
  if (touch(key)) return true;
  while (used_ + tokens > capacity_) {
    used_ -= lru_.front().tokens;
    index_.erase(lru_.front().key);
    lru_.pop_front();
    ++evictions_;
  }
  lru_.push_back({key, tokens});
  index_[key] = std::prev(lru_.end());
  used_ += tokens;
  return true;
}

std::vector<std::string> PrefixCache::keys_lru_first() const {
  std::vector<std::string> out;
  for (const auto& e : lru_) out.push_back(e.key);
  return out;
}

CacheResult prefix_cache_lookup(WorkerState& worker, const std::string& key, Tokens tokens) {
  if (worker.prefixes.touch(key)) return CacheResult::kHit;
  const Tokens before = worker.prefixes.used();
  worker.prefixes.insert(key, tokens);
  worker.memory_used_tokens += worker.prefixes.used() - before;
  return CacheResult::kMiss;
}

ClusterState ClusterState::fresh(std::size_t workers, const BatchingPolicy& policy) {
  ClusterState s;
  s.workers.resize(workers);
  for (WorkerIndex d = 0; d < workers; ++d) {
    s.workers[d].id = d;
    s.workers[d].prefixes = PrefixCache(policy.prefix_cache_tokens);
    s.workers[d].memory_capacity_tokens = policy.memory_capacity_tokens;
  }
  return s;
}

std::vector<QueryIndex> order_queries(const TokenTable& tokens, QueryOrder mode, QueryIndex first,
                                      QueryIndex last) {
  std::vector<QueryIndex> out(last - first);
  std::iota(out.begin(), out.end(), first);
  if (mode == QueryOrder::kLengthSorted) {
    std::stable_sort(out.begin(), out.end(),
                     [&](QueryIndex a, QueryIndex b) { return tokens.total_length(a) < tokens.total_length(b); });
  } else if (mode == QueryOrder::kPriority) {
    std::stable_sort(out.begin(), out.end(),
                     [&](QueryIndex a, QueryIndex b) { return tokens.priority(a) > tokens.priority(b); });
  }
  return out;
}

std::vector<QueryIndex> order_queries(const TokenTable& tokens, QueryOrder mode) {
  return order_queries(tokens, mode, 0, tokens.queries());
}

namespace {

struct Range {
  QueryIndex begin = 0;
  QueryIndex end = 0;
  bool empty() const { return begin == end; }
  bool overlaps(const Range& o) const { return begin < o.end && o.begin < end; }
  bool contains(QueryIndex q) const { return q >= begin && q < end; }
};

Range shard_of(std::size_t n, const std::vector<WorkerIndex>& reps, WorkerIndex d) {
  auto [b, e] = shard_range(n, reps, d);
  return {b, e};
}

class Engine {
 public:
  Engine(const Assignment& plan, const WorkflowGraph& g, const TokenTable& tokens, const LatencyProfile& prof,
         const CostCoefficients& coef, const SimulationConfig& cfg, ClusterState& state, Nanos origin)
      : plan_(plan), g_(g), tok_(tokens), prof_(prof), coef_(effective_coefficients(coef, cfg.cache_reuse)),
        cfg_(cfg), state_(state), n_(tokens.queries()), m_(plan.workers()) {
    tr_.workers = m_;
    tr_.queries = n_;
    tr_.origin = origin;
    tr_.memory_capacity_tokens = cfg.batching.memory_capacity_tokens;
    tr_.busy.assign(m_, Nanos{0});
    tr_.worker_end.assign(m_, origin);
    tr_.memory_integral.assign(m_, 0.0);
    tr_.query_completion.assign(n_, Nanos::min());
    cursor_.assign(m_, origin);
    decode_used_.assign(m_, 0);
    mem_time_.assign(m_, origin);
    prev_.assign(m_, std::nullopt);
    finish_.assign(g.size() * m_, std::nullopt);
    for (WorkerIndex d = 0; d < m_; ++d) {
      auto& w = state_.workers[d];
      w.memory_used_tokens = w.prefixes.used();
      if (cfg_.record_events) tr_.memory.push_back({origin, d, w.memory_used_tokens});
      tr_.peak_memory_tokens = std::max(tr_.peak_memory_tokens, w.memory_used_tokens);
    }
  }

  ExecutionTrace run() {
    if (n_ == 0 || g_.empty()) return finish_trace();
    discounts_.resize(m_);
    for (WorkerIndex d = 0; d < m_; ++d) discounts_[d] = worker_discounts(d);

    std::vector<std::size_t> pos(m_, 0);
    std::size_t remaining = 0;
    for (WorkerIndex d = 0; d < m_; ++d) remaining += plan_.sequence(d).size();
    while (remaining > 0) {
      bool progress = false;
      for (WorkerIndex d = 0; d < m_; ++d) {
        const auto& seq = plan_.sequence(d);
        while (pos[d] < seq.size()) {
          auto ready = dependency_ready(seq[pos[d]], d);
          if (!ready) break;
          execute(seq[pos[d]], d, pos[d], *ready);
          ++pos[d];
          --remaining;
          progress = true;
        }
      }
      if (!progress) throw ValidationError("plan deadlocks: per-worker orders wait on each other");
    }
    return finish_trace();
  }

 private:
  std::optional<Nanos>& finish(OpIndex v, WorkerIndex d) { return finish_[v * m_ + d]; }

  // Per-position discounts; carried state extends the worker's history.
  std::vector<Discounts> worker_discounts(WorkerIndex d) {
    std::vector<OpIndex> seq;
    for (OpIndex v : plan_.sequence(d))
      if (!shard_of(n_, plan_.replicas(v), d).empty()) seq.push_back(v);
    auto disc = resolve_discounts(seq, g_, coef_);
    const auto& w = state_.workers[d];
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto& op = g_.op(seq[i]);
      if (i == 0 && w.loaded_model && *w.loaded_model == op.model) disc[i].sigma = coef_.sigma;
      if (!op.context_source.empty() && w.materialized_sources.count(op.context_source))
        disc[i].lambda = coef_.lambda;
    }
    // Re-expand to the full sequence; empty-shard positions are never executed.
    std::vector<Discounts> full(plan_.sequence(d).size());
    std::size_t j = 0;
    for (std::size_t i = 0; i < full.size(); ++i)
      if (!shard_of(n_, plan_.replicas(plan_.sequence(d)[i]), d).empty()) full[i] = disc[j++];
    return full;
  }

  std::optional<Nanos> dependency_ready(OpIndex v, WorkerIndex d) {
    const Range mine = shard_of(n_, plan_.replicas(v), d);
    Nanos ready = tr_.origin;
    if (mine.empty()) return ready;
    for (OpIndex p : g_.parents(v)) {
      const auto& reps = plan_.replicas(p);
      for (WorkerIndex r : reps) {
        if (!shard_of(n_, reps, r).overlaps(mine)) continue;
        const auto& f = finish(p, r);
        if (!f) return std::nullopt;
        ready = std::max(ready, *f);
      }
    }
    return ready;
  }

  void emit(WorkerIndex d, EventKind kind, OpIndex v, int iteration, Nanos duration,
            std::vector<QueryIndex> queries = {}) {
    const Nanos start = cursor_[d];
    cursor_[d] += duration;
    if (kind != EventKind::kIdle) tr_.busy[d] += duration;
    if (cfg_.record_events) tr_.events.push_back({start, duration, d, kind, v, iteration, std::move(queries)});
  }

  void memory_changed(WorkerIndex d) {
    auto& w = state_.workers[d];
    const Tokens used = w.prefixes.used() + decode_used_[d];
    tr_.memory_integral[d] +=
        static_cast<double>(w.memory_used_tokens) * to_seconds(cursor_[d] - mem_time_[d]);
    mem_time_[d] = cursor_[d];
    w.memory_used_tokens = used;
    tr_.peak_memory_tokens = std::max(tr_.peak_memory_tokens, used);
    if (cfg_.record_events) tr_.memory.push_back({cursor_[d], d, used});
  }

  Tokens handoff_tokens(OpIndex v, WorkerIndex d, const Range& mine) {
    std::vector<char> remote(mine.end - mine.begin, 0);
    for (OpIndex p : g_.parents(v)) {
      const auto& reps = plan_.replicas(p);
      for (WorkerIndex r : reps) {
        if (r == d) continue;
        const Range theirs = shard_of(n_, reps, r);
        for (QueryIndex q = std::max(mine.begin, theirs.begin); q < std::min(mine.end, theirs.end); ++q)
          remote[q - mine.begin] = 1;
      }
    }
    Tokens total = 0;
    for (QueryIndex q = mine.begin; q < mine.end; ++q)
      if (remote[q - mine.begin]) total += tok_.prompt(q, v);
    return total;
  }

  // KV state already on the worker from the previous replica it ran.
  Tokens kv_reuse(OpIndex v, WorkerIndex d, QueryIndex q) {
    if (!cfg_.cache_reuse || !prev_[d]) return 0;
    const auto& [prev, range] = *prev_[d];
    if (!range.contains(q) || g_.op(prev).model != g_.op(v).model) return 0;
    Tokens reused = 0;
    for (OpIndex p : g_.parents(v))
      if (p == prev || g_.has_edge(p, prev)) reused += tok_.output(q, p);
    const auto& src = g_.op(v).context_source;
    if (!src.empty() && src == g_.op(prev).context_source) reused += tok_.context(q, v);
    return reused;
  }

  void execute(OpIndex v, WorkerIndex d, std::size_t position, Nanos ready) {
    const auto& op = g_.op(v);
    const Range mine = shard_of(n_, plan_.replicas(v), d);
    if (mine.empty()) {
      finish(v, d) = cursor_[d];
      return;
    }
    const auto& model = prof_.model(op.model);
    auto& w = state_.workers[d];

    if (ready > cursor_[d]) emit(d, EventKind::kIdle, kNoOp, 0, ready - cursor_[d]);
    const Nanos span_start = cursor_[d];

    if (prof_.handoff_per_token.count() > 0) {
      const Tokens t = handoff_tokens(v, d, mine);
      if (t > 0) emit(d, EventKind::kTransfer, v, 0, per_tokens(prof_.handoff_per_token, t));
    }

    const Discounts disc = discounts_[d][position];
    const double prep_factor = disc.sigma * disc.lambda;
    const Nanos prep_total = scale(prep_cost(op, {}, prof_), prep_factor);
    const Nanos load = std::min(scale(model.load, prep_factor), prep_total);
    if (load.count() > 0) emit(d, EventKind::kLoad, v, 0, load);
    if ((prep_total - load).count() > 0) emit(d, EventKind::kPrep, v, 0, prep_total - load);
    w.loaded_model = op.model;
    if (!op.context_source.empty()) w.materialized_sources.insert(op.context_source);

    const auto order = order_queries(tok_, cfg_.order, mine.begin, mine.end);
    Tokens prefix_cached = 0;
    if (cfg_.cache_reuse && op.prefix_tokens > 0) {
      const auto result = prefix_cache_lookup(w, op.id, op.prefix_tokens);
      if (result == CacheResult::kHit) {
        ++tr_.prefix_hits;
      } else {
        ++tr_.prefix_misses;
        if (w.prefixes.contains(op.id)) {
          emit(d, EventKind::kPrefill, v, 0, per_tokens(model.prefill_per_token, op.prefix_tokens));
          memory_changed(d);
        }
      }
      if (w.prefixes.contains(op.id)) prefix_cached = op.prefix_tokens;
    }

    for (int it = 0; it < op.repeat; ++it) {
      prefill(v, d, it, order, prefix_cached, model);
      decode(v, d, it, order, model, it + 1 == op.repeat);
    }

    finish(v, d) = cursor_[d];
    tr_.spans.push_back({v, d, span_start, cursor_[d], mine.begin, mine.end});
    prev_[d] = std::make_pair(v, mine);
  }

  void prefill(OpIndex v, WorkerIndex d, int it, const std::vector<QueryIndex>& order, Tokens prefix_cached,
               const ModelProfile& model) {
    const std::size_t group = cfg_.batching.prefill_batch;
    for (std::size_t i = 0; i < order.size(); i += group) {
      const std::size_t end = std::min(order.size(), i + group);
      Tokens widest = 0, cached_sum = 0;
      for (std::size_t j = i; j < end; ++j) {
        const QueryIndex q = order[j];
        const Tokens input = tok_.input(q, v);
        const Tokens cached =
            (cfg_.cache_reuse && it > 0) ? input : std::min(input, prefix_cached + kv_reuse(v, d, q));
        widest = std::max(widest, input - cached);
        cached_sum += cached;
      }
      const Nanos dur = per_tokens(model.prefill_per_token, widest * static_cast<Tokens>(end - i)) +
                        per_tokens(model.transfer_per_token, cached_sum);
      std::vector<QueryIndex> ids;
      if (cfg_.record_events) ids.assign(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
      if (dur.count() > 0) emit(d, EventKind::kPrefill, v, it, dur, std::move(ids));
    }
  }

  Nanos step_time(const ModelProfile& model, std::size_t b) const {
    const std::size_t sat = cfg_.batching.decode_saturation_batch;
    if (b <= sat) return model.decode_per_token;
    return scale(model.decode_per_token, static_cast<double>(b) / static_cast<double>(sat));
  }

  void decode(OpIndex v, WorkerIndex d, int it, const std::vector<QueryIndex>& order, const ModelProfile& model,
              bool last_iteration) {
    const auto& policy = cfg_.batching;
    const Tokens cap = policy.decode_capacity_tokens();
    auto reserve = [&](QueryIndex q) { return tok_.input(q, v) + tok_.output(q, v); };

    // (finish step, admission order, query)
    using Slot = std::tuple<long long, std::size_t, QueryIndex>;
    std::priority_queue<Slot, std::vector<Slot>, std::greater<>> active;
    long long step = 0;
    std::size_t next = 0;
    Tokens static_batch_reserved = 0;

    auto admit = [&](QueryIndex q) {
      decode_used_[d] += reserve(q);
      active.emplace(step + tok_.output(q, v), next, q);
    };

    while (next < order.size() || !active.empty()) {
      if (active.empty() || policy.mode == BatchingMode::kAdaptive) {
        bool admitted = false;
        if (policy.mode == BatchingMode::kAdaptive) {
          while (next < order.size() && decode_used_[d] + reserve(order[next]) <= cap) {
            admit(order[next++]);
            admitted = true;
          }
          if (active.empty() && next < order.size())
            throw ValidationError("query " + std::to_string(order[next]) + " of operator " + g_.op(v).id +
                                  " needs " + std::to_string(reserve(order[next])) +
                                  " tokens, more than the worker's decode memory");
        } else {
          const std::size_t end = std::min(order.size(), next + policy.fixed_batch);
          static_batch_reserved = 0;
          for (std::size_t j = next; j < end; ++j) static_batch_reserved += reserve(order[j]);
          if (decode_used_[d] + static_batch_reserved > cap)
            throw OverflowError(g_.op(v).id, worker_name(d), state_.workers[d].prefixes.used() + decode_used_[d] + static_batch_reserved,
                                policy.memory_capacity_tokens);
          while (next < end) admit(order[next++]);
          admitted = true;
        }
        if (admitted) memory_changed(d);
      }

      const std::size_t b = active.size();
      const long long until = std::get<0>(active.top());
      const Nanos dur = step_time(model, b) * (until - step);
      step = until;
      std::vector<QueryIndex> done;
      cursor_[d] += dur;  // provisional, for completion timestamps
      while (!active.empty() && std::get<0>(active.top()) == step) {
        const QueryIndex q = std::get<2>(active.top());
        active.pop();
        done.push_back(q);
        if (last_iteration) tr_.query_completion[q] = std::max(tr_.query_completion[q], cursor_[d]);
        if (policy.mode == BatchingMode::kAdaptive) decode_used_[d] -= reserve(q);
      }
      cursor_[d] -= dur;
      emit(d, EventKind::kDecode, v, it, dur, cfg_.record_events ? std::move(done) : std::vector<QueryIndex>{});
      if (policy.mode == BatchingMode::kFixed && active.empty()) decode_used_[d] -= static_batch_reserved;
      if (policy.mode == BatchingMode::kAdaptive || active.empty()) memory_changed(d);
    }
  }

  ExecutionTrace finish_trace() {
    Nanos end = tr_.origin;
    for (WorkerIndex d = 0; d < m_; ++d) end = std::max(end, cursor_[d]);
    for (WorkerIndex d = 0; d < m_; ++d) {
      tr_.worker_end[d] = cursor_[d];
      const auto& w = state_.workers[d];
      tr_.memory_integral[d] += static_cast<double>(w.memory_used_tokens) * to_seconds(end - mem_time_[d]);
      state_.workers[d].busy_until = cursor_[d];
    }
    tr_.wall_clock = end - tr_.origin;
    for (Nanos c : tr_.query_completion)
      if (c != Nanos::min()) ++tr_.completed_queries;
    std::stable_sort(tr_.events.begin(), tr_.events.end(), [](const TraceEvent& a, const TraceEvent& b) {
      if (a.start != b.start) return a.start < b.start;
      return a.worker < b.worker;
    });
    std::stable_sort(tr_.memory.begin(), tr_.memory.end(), [](const MemorySample& a, const MemorySample& b) {
      if (a.time != b.time) return a.time < b.time;
      return a.worker < b.worker;
    });
    return std::move(tr_);
  }

  const Assignment& plan_;
  const WorkflowGraph& g_;
  const TokenTable& tok_;
  const LatencyProfile& prof_;
  const CostCoefficients coef_;
  const SimulationConfig& cfg_;
  ClusterState& state_;
  const std::size_t n_;
  const std::size_t m_;

  ExecutionTrace tr_;
  std::vector<Nanos> cursor_;
  std::vector<Tokens> decode_used_;
  std::vector<Nanos> mem_time_;
  std::vector<std::optional<std::pair<OpIndex, Range>>> prev_;
  std::vector<std::optional<Nanos>> finish_;
  std::vector<std::vector<Discounts>> discounts_;
};

}  // namespace

ExecutionTrace simulate(const Assignment& plan, const WorkflowGraph& g, const TokenTable& tokens,
                        const LatencyProfile& prof, const CostCoefficients& coef, const SimulationConfig& cfg,
                        ClusterState* state, Nanos start) {
  cfg.batching.validate();
  coef.validate();
  if (plan.ops() != g.size() || tokens.ops() != g.size())
    throw ValidationError("plan, token table and workflow graph disagree on the operator count");
  if (!plan.complete()) throw ValidationError("plan does not assign every operator");
  if (plan.workers() == 0) throw ValidationError("plan has no workers");
  validate_assignment(g, plan);
  for (const auto& op : g.operators()) prof.model(op.model);

  ClusterState local;
  if (!state) {
    local = ClusterState::fresh(plan.workers(), cfg.batching);
    state = &local;
  } else if (state->workers.size() != plan.workers()) {
    throw ValidationError("cluster state and plan disagree on the worker count");
  }
  Engine engine(plan, g, tokens, prof, coef, cfg, *state, start);
  return engine.run();
}

Metrics collect_metrics(const ExecutionTrace& trace) {
  Metrics m;
  m.wall_clock_s = to_seconds(trace.wall_clock);
  m.completed_queries = trace.completed_queries;
  m.prefix_hits = trace.prefix_hits;
  m.prefix_misses = trace.prefix_misses;
  m.busy_fraction.assign(trace.workers, 0.0);
  if (trace.wall_clock.count() <= 0 || trace.workers == 0) return m;
  double busy_sum = 0.0, mem_sum = 0.0;
  for (WorkerIndex d = 0; d < trace.workers; ++d) {
    m.busy_fraction[d] = to_seconds(trace.busy[d]) / m.wall_clock_s;
    busy_sum += m.busy_fraction[d];
    mem_sum += trace.memory_integral[d];
  }
  const double cap = static_cast<double>(trace.memory_capacity_tokens);
  m.utilization_auc = busy_sum / static_cast<double>(trace.workers);
  m.memory_auc = mem_sum / (cap * m.wall_clock_s * static_cast<double>(trace.workers));
  m.peak_memory_fraction = static_cast<double>(trace.peak_memory_tokens) / cap;
  m.throughput_qps = static_cast<double>(trace.completed_queries) / m.wall_clock_s;
  return m;
}

std::string trace_to_ndjson(const ExecutionTrace& trace, const WorkflowGraph& g) {
  std::ostringstream out;
  json header = {{"schema_version", kSchemaVersion},
                 {"record", "header"},
                 {"workers", trace.workers},
                 {"queries", trace.queries},
                 {"origin_ns", trace.origin.count()},
                 {"wall_clock_ns", trace.wall_clock.count()},
                 {"memory_capacity_tokens", trace.memory_capacity_tokens}};
  out << header.dump() << '\n';
  for (const auto& e : trace.events) {
    json j = {{"schema_version", kSchemaVersion},
              {"record", "event"},
              {"start_ns", e.start.count()},
              {"duration_ns", e.duration.count()},
              {"worker", worker_name(e.worker)},
              {"kind", to_string(e.kind)},
              {"op", e.op == kNoOp ? json(nullptr) : json(g.op(e.op).id)},
              {"iteration", e.iteration},
              {"queries", e.queries}};
    out << j.dump() << '\n';
  }
  return out.str();
}

std::string metrics_to_json(const Metrics& m) {
  json j = {{"schema_version", kSchemaVersion},
            {"wall_clock_s", m.wall_clock_s},
            {"per_worker_busy_fraction", m.busy_fraction},
            {"memory_auc", m.memory_auc},
            {"utilization_auc", m.utilization_auc},
            {"throughput_qps", m.throughput_qps},
            {"completed_queries", m.completed_queries},
            {"prefix_hits", m.prefix_hits},
            {"prefix_misses", m.prefix_misses},
            {"peak_memory_fraction", m.peak_memory_fraction}};
  return j.dump(2) + "\n";
}

std::string memory_curve_csv(const ExecutionTrace& trace) {
  std::ostringstream out;
  out.precision(12);
  out << "# schema_version=" << kSchemaVersion << "\n";
  out << "time_s,worker,used_tokens,used_fraction\n";
  const double cap = static_cast<double>(trace.memory_capacity_tokens);
  for (const auto& s : trace.memory)
    out << to_seconds(s.time - trace.origin) << ',' << worker_name(s.worker) << ',' << s.used << ','
        << static_cast<double>(s.used) / cap << '\n';
  return out.str();
}

std::string utilization_curve_csv(const ExecutionTrace& trace, std::size_t bins) {
  std::ostringstream out;
  out.precision(9);
  out << "# schema_version=" << kSchemaVersion << "\n";
  out << "normalized_time,utilization,memory_fraction\n";
  if (bins == 0 || trace.wall_clock.count() <= 0 || trace.workers == 0) return out.str();
  const double total = static_cast<double>(trace.wall_clock.count());
  const double width = total / static_cast<double>(bins);
  std::vector<double> busy(bins, 0.0), mem(bins, 0.0);
  auto spread = [&](double a, double b, double weight, std::vector<double>& acc) {
    for (std::size_t i = static_cast<std::size_t>(a / width); i < bins && static_cast<double>(i) * width < b; ++i) {
      const double lo = std::max(a, static_cast<double>(i) * width);
      const double hi = std::min(b, static_cast<double>(i + 1) * width);
      if (hi > lo) acc[i] += weight * (hi - lo);
    }
  };
  for (const auto& e : trace.events) {
    if (e.kind == EventKind::kIdle) continue;
    spread(static_cast<double>((e.start - trace.origin).count()), static_cast<double>((e.end() - trace.origin).count()),
           1.0, busy);
  }
  // Memory is a step function per worker between samples.
  std::vector<std::pair<double, Tokens>> last(trace.workers, {0.0, 0});
  const double cap = static_cast<double>(trace.memory_capacity_tokens);
  for (const auto& s : trace.memory) {
    auto& [t0, used] = last[s.worker];
    const double t = static_cast<double>((s.time - trace.origin).count());
    spread(t0, t, static_cast<double>(used) / cap, mem);
    t0 = t;
    used = s.used;
  }
  for (const auto& [t0, used] : last) spread(t0, total, static_cast<double>(used) / cap, mem);
  const double norm = width * static_cast<double>(trace.workers);
  for (std::size_t i = 0; i < bins; ++i)
    out << (static_cast<double>(i) + 0.5) / static_cast<double>(bins) << ',' << busy[i] / norm << ','
        << mem[i] / norm << '\n';
  return out.str();
}

std::optional<std::string> check_trace_invariants(const ExecutionTrace& trace, const WorkflowGraph& g,
                                                  const Assignment& plan) {
  std::vector<Nanos> worker_end(trace.workers, Nanos::min());
  Nanos last_end = trace.origin;
  for (const auto& e : trace.events) {
    if (e.duration.count() < 0) return "negative event duration";
    if (e.worker >= trace.workers) return "event on unknown worker";
    if (worker_end[e.worker] != Nanos::min() && e.start < worker_end[e.worker])
      return "overlapping events on " + worker_name(e.worker);
    worker_end[e.worker] = e.end();
    last_end = std::max(last_end, e.end());
  }
  if (!trace.events.empty() && last_end - trace.origin != trace.wall_clock)
    return "wall_clock differs from the last event end";

  const std::size_t n = trace.queries;
  std::vector<std::vector<const ReplicaSpan*>> by_op(g.size());
  for (const auto& s : trace.spans) by_op.at(s.op).push_back(&s);
  std::vector<Nanos> first_start(g.size() * trace.workers, Nanos::max());
  for (const auto& e : trace.events)
    if (e.op != kNoOp) {
      auto& f = first_start[e.op * trace.workers + e.worker];
      f = std::min(f, e.start);
    }
  for (const auto& s : trace.spans) {
    const Nanos begins = std::min(s.start, first_start[s.op * trace.workers + s.worker]);
    for (OpIndex p : g.parents(s.op)) {
      for (const ReplicaSpan* ps : by_op[p]) {
        const bool overlap = ps->shard_begin < s.shard_end && s.shard_begin < ps->shard_end;
        if (overlap && ps->end > begins)
          return "operator " + g.op(s.op).id + " on " + worker_name(s.worker) + " starts before parent " +
                 g.op(p).id + " on " + worker_name(ps->worker) + " ends";
      }
    }
  }
  for (OpIndex v = 0; v < g.size() && n > 0; ++v) {
    std::size_t covered = 0;
    for (const ReplicaSpan* s : by_op[v]) covered += s->shard_end - s->shard_begin;
    if (covered != n) return "operator " + g.op(v).id + " did not process every query exactly once";
  }
  for (const auto& s : trace.spans) {
    const auto& reps = plan.replicas(s.op);
    if (!std::binary_search(reps.begin(), reps.end(), s.worker))
      return "operator " + g.op(s.op).id + " ran outside its replica set";
  }
  for (const auto& s : trace.memory)
    if (s.used > trace.memory_capacity_tokens) return "memory above capacity on " + worker_name(s.worker);
  if (trace.peak_memory_tokens > trace.memory_capacity_tokens) return "peak memory above capacity";
  return std::nullopt;
}

}  // namespace agentplan
