#include "agentplan/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "agentplan/errors.hpp"

namespace agentplan {

namespace {

bool in_unit_interval(double x) { return x > 0.0 && x <= 1.0; }

std::size_t replica_index(const std::vector<WorkerIndex>& reps, WorkerIndex d) {
  return static_cast<std::size_t>(std::lower_bound(reps.begin(), reps.end(), d) - reps.begin());
}

Nanos divide(Nanos d, double factor) { return factor == 1.0 ? d : scale(d, 1.0 / factor); }

}  // namespace

void CostCoefficients::validate() const {
  if (!in_unit_interval(gamma) || !in_unit_interval(sigma) || !in_unit_interval(lambda) ||
      !in_unit_interval(beta))
    throw ValidationError("cost coefficients must lie in (0, 1]");
}

const ModelProfile& LatencyProfile::model(std::string_view id) const {
  auto it = models.find(id);
  if (it == models.end()) throw ProfileError("no latency profile for model '" + std::string(id) + "'");
  return it->second;
}

void LatencyProfile::validate() const {
  if (context_prep_per_token.count() <= 0) throw ProfileError("context_prep rate must be > 0");
  if (handoff_per_token.count() < 0) throw ProfileError("handoff rate must be >= 0");
  for (const auto& [name, m] : models) {
    if (m.load.count() <= 0 || m.prefill_per_token.count() <= 0 || m.decode_per_token.count() <= 0 ||
        m.transfer_per_token.count() <= 0)
      throw ProfileError("model '" + name + "': all rates must be > 0");
    if (m.transfer_per_token >= m.prefill_per_token)
      throw ProfileError("model '" + name + "': KV transfer must be cheaper than prefill");
  }
}

LatencyProfile LatencyProfile::defaults() {
  LatencyProfile p;
  p.models["small"] = {from_seconds(8.0), from_seconds(2.0e-5), from_seconds(8.0e-3), from_seconds(2.0e-6)};
  p.models["medium"] = {from_seconds(14.0), from_seconds(4.0e-5), from_seconds(1.2e-2), from_seconds(4.0e-6)};
  p.models["large"] = {from_seconds(40.0), from_seconds(1.5e-4), from_seconds(3.0e-2), from_seconds(1.5e-5)};
  p.context_prep_per_token = from_seconds(2.0e-5);
  p.handoff_per_token = from_seconds(5.0e-6);
  return p;
}

InferenceCost inference_cost(const WorkflowGraph& g, OpIndex v, const TokenTable& tokens,
                             std::span<const QueryIndex> queries, const LatencyProfile& prof,
                             ThroughputFactor factor) {
  const auto& spec = g.op(v);
  const auto& m = prof.model(spec.model);
  Tokens in = 0, out = 0;
  for (QueryIndex q : queries) {
    in += tokens.input(q, v);
    out += tokens.output(q, v);
  }
  InferenceCost c;
  c.prefill = divide(per_tokens(m.prefill_per_token, in) * spec.repeat, factor.prefill);
  c.decode = divide(per_tokens(m.decode_per_token, out) * spec.repeat, factor.decode);
  return c;
}

InferenceCost inference_cost(const WorkflowGraph& g, OpIndex v, const TokenTable& tokens,
                             const LatencyProfile& prof, ThroughputFactor factor) {
  std::vector<QueryIndex> all(tokens.queries());
  std::iota(all.begin(), all.end(), QueryIndex{0});
  return inference_cost(g, v, tokens, all, prof, factor);
}

Nanos prep_cost(const OperatorSpec& op, std::span<const OpIndex> /*worker_history*/,
                const LatencyProfile& prof) {
  return prof.model(op.model).load + per_tokens(prof.context_prep_per_token, op.context_tokens) +
         from_seconds(op.tool_seconds);
}

std::vector<Discounts> resolve_discounts(std::span<const OpIndex> seq, const WorkflowGraph& g,
                                         const CostCoefficients& coef) {
  std::vector<Discounts> out(seq.size());
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const OpIndex prev = seq[i - 1];
    const OpIndex v = seq[i];
    const auto& pv = g.op(prev);
    const auto& cv = g.op(v);
    const bool same_model = pv.model == cv.model;
    if (same_model) {
      out[i].sigma = coef.sigma;
      bool shares_prefix = g.has_edge(prev, v);
      for (OpIndex p : g.parents(v))
        shares_prefix = shares_prefix || g.has_edge(p, prev);
      shares_prefix = shares_prefix || (!cv.context_source.empty() && cv.context_source == pv.context_source);
      if (shares_prefix) out[i].gamma = coef.gamma;
    }
    if (!cv.context_source.empty()) {
      for (std::size_t j = 0; j < i; ++j) {
        if (g.op(seq[j]).context_source == cv.context_source) {
          out[i].lambda = coef.lambda;
          break;
        }
      }
    }
  }
  return out;
}

std::pair<QueryIndex, QueryIndex> shard_range(std::size_t n, std::span<const WorkerIndex> replicas,
                                              WorkerIndex worker) {
  const std::size_t k = replicas.size();
  auto it = std::find(replicas.begin(), replicas.end(), worker);
  if (k == 0 || it == replicas.end()) return {0, 0};
  const std::size_t i = static_cast<std::size_t>(it - replicas.begin());
  const std::size_t base = n / k, extra = n % k;
  const std::size_t begin = i * base + std::min(i, extra);
  return {begin, begin + base + (i < extra ? 1 : 0)};
}

PartialAssignment::PartialAssignment(std::size_t workers, std::size_t ops)
    : sequences_(workers), replicas_(ops) {}

void PartialAssignment::assign(OpIndex op, std::vector<WorkerIndex> replicas) {
  if (replicas.empty()) throw ValidationError("replica set must be nonempty");
  if (assigned(op)) throw ValidationError("operator already assigned");
  std::sort(replicas.begin(), replicas.end());
  replicas.erase(std::unique(replicas.begin(), replicas.end()), replicas.end());
  for (WorkerIndex d : replicas) {
    if (d >= sequences_.size()) throw ValidationError("worker index out of range");
    sequences_[d].push_back(op);
  }
  replicas_[op] = std::move(replicas);
  ++assigned_;
}

std::vector<bool> PartialAssignment::assigned_mask() const {
  std::vector<bool> mask(replicas_.size());
  for (OpIndex v = 0; v < replicas_.size(); ++v) mask[v] = !replicas_[v].empty();
  return mask;
}

std::vector<long> PartialAssignment::encoding() const {
  std::vector<long> enc;
  for (const auto& seq : sequences_) {
    for (OpIndex v : seq) enc.push_back(static_cast<long>(v));
    enc.push_back(-1);
  }
  return enc;
}

void validate_assignment(const WorkflowGraph& g, const PartialAssignment& f) {
  if (f.ops() != g.size()) throw ValidationError("assignment does not match the workflow graph");
  for (WorkerIndex d = 0; d < f.workers(); ++d) {
    std::vector<bool> seen(g.size(), false);
    for (OpIndex v : f.sequence(d)) {
      if (seen[v]) throw ValidationError("operator " + g.op(v).id + " appears twice on one worker");
      const auto& reps = f.replicas(v);
      if (!std::binary_search(reps.begin(), reps.end(), d))
        throw ValidationError("operator " + g.op(v).id + " sequenced on a worker outside its replica set");
      for (OpIndex p : g.parents(v)) {
        const auto& pr = f.replicas(p);
        bool on_this_worker = std::binary_search(pr.begin(), pr.end(), d);
        if (on_this_worker && !seen[p])
          throw ValidationError("operator " + g.op(v).id + " runs before its parent " + g.op(p).id +
                                " on worker " + std::to_string(d));
      }
      seen[v] = true;
    }
  }
}

CostModel::CostModel(const WorkflowGraph& g, const TokenTable& tokens, const LatencyProfile& prof,
                     CostCoefficients coef, std::size_t workers, ThroughputEstimator estimator)
    : g_(&g), coef_(coef), workers_(workers), queries_(tokens.queries()) {
  coef_.validate();
  if (workers_ == 0) throw ValidationError("at least one worker is required");
  const std::size_t n = tokens.queries();
  std::vector<WorkerIndex> reps;
  std::vector<QueryIndex> ids;
  shards_.resize(g.size());
  prep_.resize(g.size());
  for (OpIndex v = 0; v < g.size(); ++v) {
    prep_[v] = prep_cost(g.op(v), {}, prof);
    shards_[v].resize(workers_);
    for (std::size_t k = 1; k <= workers_; ++k) {
      reps.resize(k);
      std::iota(reps.begin(), reps.end(), WorkerIndex{0});
      auto& row = shards_[v][k - 1];
      row.resize(k);
      for (std::size_t i = 0; i < k; ++i) {
        auto [b, e] = shard_range(n, reps, i);
        ids.resize(e - b);
        std::iota(ids.begin(), ids.end(), b);
        ThroughputFactor factor = estimator && e > b ? estimator(g.op(v), e - b) : ThroughputFactor{};
        row[i] = inference_cost(g, v, tokens, ids, prof, factor);
      }
    }
  }
}

const InferenceCost& CostModel::shard(OpIndex v, std::size_t k, std::size_t shard_index) const {
  return shards_.at(v).at(k - 1).at(shard_index);
}

Nanos CostModel::inference_term(OpIndex v, std::size_t k, std::size_t shard_index, double gamma) const {
  const auto& e = shard(v, k, shard_index);
  const double par = std::pow(static_cast<double>(k), 1.0 - coef_.beta);
  if (coef_.gamma_prefill_only) return scale(e.prefill, gamma * par) + scale(e.decode, par);
  return scale(e.total(), gamma * par);
}

WorkerCosts CostModel::assigned(const PartialAssignment& f) const {
  WorkerCosts out;
  out.per_worker.assign(f.workers(), Nanos{0});
  for (WorkerIndex d = 0; d < f.workers(); ++d) {
    const auto seq = active_sequence(f, d);
    const auto disc = resolve_discounts(seq, *g_, coef_);
    Nanos sum{0};
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const OpIndex v = seq[i];
      const auto& reps = f.replicas(v);
      const std::size_t k = reps.size();
      sum += inference_term(v, k, replica_index(reps, d), disc[i].gamma);
      sum += scale(prep_[v], disc[i].sigma * disc[i].lambda);
    }
    out.per_worker[d] = sum;
    out.max = std::max(out.max, sum);
  }
  return out;
}

std::vector<OpIndex> CostModel::active_sequence(const PartialAssignment& f, WorkerIndex d) const {
  std::vector<OpIndex> seq;
  for (OpIndex v : f.sequence(d))
    if (f.replicas(v).size() <= queries_ || replica_index(f.replicas(v), d) < queries_) seq.push_back(v);
  return seq;
}

Nanos CostModel::remaining(const PartialAssignment& f) const {
  Nanos sum{0};
  for (OpIndex v = 0; v < g_->size(); ++v)
    if (!f.assigned(v)) sum += inference(v);
  return scale(sum, 1.0 / std::pow(static_cast<double>(workers_), coef_.beta));
}

std::string CostModel::dump_csv(const PartialAssignment& f) const {
  std::ostringstream out;
  out << "worker,position,op,model,replicas,shard,e_prefill_s,e_decode_s,p_s,gamma,sigma,lambda,"
         "inference_term_s,prep_term_s\n";
  out.precision(9);
  for (WorkerIndex d = 0; d < f.workers(); ++d) {
    const auto seq = active_sequence(f, d);
    const auto disc = resolve_discounts(seq, *g_, coef_);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const OpIndex v = seq[i];
      const auto& reps = f.replicas(v);
      const std::size_t idx = replica_index(reps, d);
      const auto& e = shard(v, reps.size(), idx);
      out << "d" << d + 1 << ',' << i << ',' << g_->op(v).id << ',' << g_->op(v).model << ',' << reps.size()
          << ',' << idx << ',' << to_seconds(e.prefill) << ',' << to_seconds(e.decode) << ','
          << to_seconds(prep_[v]) << ',' << disc[i].gamma << ',' << disc[i].sigma << ',' << disc[i].lambda
          << ',' << to_seconds(inference_term(v, reps.size(), idx, disc[i].gamma)) << ','
          << to_seconds(scale(prep_[v], disc[i].sigma * disc[i].lambda)) << '\n';
    }
  }
  return out.str();
}

}  // namespace agentplan
