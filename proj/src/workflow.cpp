#include "agentplan/workflow.hpp"

#include <algorithm>
#include <functional>
#include <queue>
#include <set>

#include "agentplan/errors.hpp"

namespace agentplan {

namespace {

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

CycleError::CycleError(std::vector<std::string> cycle)
    : ValidationError("workflow graph has a cycle: " + join(cycle, " -> ") + " -> " +
                      (cycle.empty() ? std::string() : cycle.front())),
      cycle_(std::move(cycle)) {}

OverflowError::OverflowError(const std::string& op, const std::string& worker, long long used,
                             long long capacity)
    : Error("memory overflow on worker " + worker + " running " + op + ": " +
            std::to_string(used) + " tokens > capacity " + std::to_string(capacity)),
      op_(op),
      worker_(worker) {}

const char* to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::kSequential: return "sequential";
    case PrimitiveKind::kFanOut: return "fan_out";
    case PrimitiveKind::kFanIn: return "fan_in";
    case PrimitiveKind::kSelfLoop: return "self_loop";
  }
  return "?";
}

const char* to_string(Aggregation agg) {
  switch (agg) {
    case Aggregation::kNone: return "none";
    case Aggregation::kConcat: return "concat";
    case Aggregation::kVote: return "vote";
  }
  return "?";
}

const char* to_string(DemandClass demand) {
  return demand == DemandClass::kLarge ? "large" : "small";
}

void OperatorSpec::validate() const {
  if (id.empty()) throw ValidationError("operator id must not be empty");
  if (model.empty()) throw ValidationError("operator " + id + ": model must not be empty");
  if (prompt_tokens < 0 || context_tokens < 0 || prefix_tokens < 0)
    throw ValidationError("operator " + id + ": token counts must be nonnegative");
  if (prefix_tokens > prompt_tokens)
    throw ValidationError("operator " + id + ": prefix_tokens exceeds prompt_tokens");
  if (output_tokens < 1) throw ValidationError("operator " + id + ": output_tokens must be >= 1");
  if (repeat < 1) throw ValidationError("operator " + id + ": repeat must be >= 1");
  if (!(tool_seconds >= 0.0)) throw ValidationError("operator " + id + ": tool_seconds must be >= 0");
}

OpIndex WorkflowGraph::add_operator(OperatorSpec spec) {
  spec.validate();
  if (by_id_.count(spec.id)) throw ValidationError("duplicate operator id: " + spec.id);
  const OpIndex idx = ops_.size();
  by_id_.emplace(spec.id, idx);
  ops_.push_back(std::move(spec));
  parents_.emplace_back();
  children_.emplace_back();
  return idx;
}

std::optional<OpIndex> WorkflowGraph::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

OpIndex WorkflowGraph::index_of(std::string_view id) const {
  if (auto idx = find(id)) return *idx;
  throw ValidationError("unknown operator: " + std::string(id));
}

void WorkflowGraph::add_edge(std::string_view from, std::string_view to) {
  auto u = find(from);
  auto v = find(to);
  if (!u || !v) {
    throw ValidationError("dangling edge " + std::string(from) + "->" + std::string(to) +
                          ": unknown operator " + std::string(!u ? from : to));
  }
  if (has_edge(*u, *v)) return;
  edges_.emplace_back(*u, *v);
  auto by_id = [this](OpIndex a, OpIndex b) { return id_less(a, b); };
  auto& ch = children_[*u];
  ch.insert(std::upper_bound(ch.begin(), ch.end(), *v, by_id), *v);
  auto& pa = parents_[*v];
  pa.insert(std::upper_bound(pa.begin(), pa.end(), *u, by_id), *u);
}

bool WorkflowGraph::has_edge(OpIndex from, OpIndex to) const {
  const auto& ch = children_.at(from);
  return std::find(ch.begin(), ch.end(), to) != ch.end();
}

std::vector<OpIndex> WorkflowGraph::topological_order() const {
  std::vector<std::size_t> indeg(size());
  for (OpIndex v = 0; v < size(); ++v) indeg[v] = in_degree(v);
  auto later = [this](OpIndex a, OpIndex b) { return id_less(b, a); };
  std::priority_queue<OpIndex, std::vector<OpIndex>, decltype(later)> ready(later);
  for (OpIndex v = 0; v < size(); ++v)
    if (indeg[v] == 0) ready.push(v);
  std::vector<OpIndex> order;
  order.reserve(size());
  while (!ready.empty()) {
    OpIndex u = ready.top();
    ready.pop();
    order.push_back(u);
    for (OpIndex v : children_[u])
      if (--indeg[v] == 0) ready.push(v);
  }
  if (order.size() != size()) throw CycleError(*validate_dag(*this));
  return order;
}

std::optional<std::vector<std::string>> validate_dag(const WorkflowGraph& g) {
  enum class Color { kWhite, kGray, kBlack };
  std::vector<Color> color(g.size(), Color::kWhite);
  std::vector<OpIndex> stack;

  // Roots visited in id order so the witness is deterministic.
  std::vector<OpIndex> roots(g.size());
  for (OpIndex v = 0; v < g.size(); ++v) roots[v] = v;
  std::sort(roots.begin(), roots.end(), [&](OpIndex a, OpIndex b) { return g.id_less(a, b); });

  std::optional<std::vector<std::string>> witness;
  std::function<bool(OpIndex)> visit = [&](OpIndex u) {
    color[u] = Color::kGray;
    stack.push_back(u);
    for (OpIndex v : g.children(u)) {
      if (color[v] == Color::kGray) {
        auto it = std::find(stack.begin(), stack.end(), v);
        std::vector<std::string> cycle;
        for (; it != stack.end(); ++it) cycle.push_back(g.op(*it).id);
        witness = std::move(cycle);
        return true;
      }
      if (color[v] == Color::kWhite && visit(v)) return true;
    }
    stack.pop_back();
    color[u] = Color::kBlack;
    return false;
  };
  for (OpIndex r : roots)
    if (color[r] == Color::kWhite && visit(r)) break;
  return witness;
}

std::vector<PrimitiveTag> detect_primitives(const WorkflowGraph& g) {
  std::vector<PrimitiveTag> tags;
  std::vector<bool> covered(g.size(), false);
  std::vector<OpIndex> by_id(g.size());
  for (OpIndex v = 0; v < g.size(); ++v) by_id[v] = v;
  std::sort(by_id.begin(), by_id.end(), [&](OpIndex a, OpIndex b) { return g.id_less(a, b); });

  for (OpIndex v : by_id) {
    if (g.out_degree(v) > 1) {
      PrimitiveTag tag{PrimitiveKind::kFanOut, {g.op(v).id}};
      covered[v] = true;
      for (OpIndex c : g.children(v)) {
        tag.members.push_back(g.op(c).id);
        covered[c] = true;
      }
      tags.push_back(std::move(tag));
    }
  }
  for (OpIndex v : by_id) {
    if (g.in_degree(v) > 1) {
      PrimitiveTag tag{PrimitiveKind::kFanIn, {g.op(v).id}};
      covered[v] = true;
      for (OpIndex p : g.parents(v)) {
        tag.members.push_back(g.op(p).id);
        covered[p] = true;
      }
      tags.push_back(std::move(tag));
    }
  }

  // Chain edges link u -> v when u has a single child and v a single parent.
  auto chain_next = [&](OpIndex u) -> std::optional<OpIndex> {
    if (g.out_degree(u) != 1) return std::nullopt;
    OpIndex v = g.children(u).front();
    if (g.in_degree(v) != 1) return std::nullopt;
    return v;
  };
  auto has_chain_prev = [&](OpIndex v) {
    return g.in_degree(v) == 1 && chain_next(g.parents(v).front()).has_value();
  };
  for (OpIndex v : by_id) {
    if (has_chain_prev(v)) continue;
    std::vector<OpIndex> chain{v};
    while (auto next = chain_next(chain.back())) chain.push_back(*next);
    if (chain.size() < 2 && covered[v]) continue;
    PrimitiveTag tag{PrimitiveKind::kSequential, {}};
    for (OpIndex c : chain) {
      tag.members.push_back(g.op(c).id);
      covered[c] = true;
    }
    tags.push_back(std::move(tag));
  }

  for (OpIndex v : by_id)
    if (g.op(v).repeat > 1) tags.push_back({PrimitiveKind::kSelfLoop, {g.op(v).id}});
  return tags;
}

std::vector<OpIndex> ready_set(const WorkflowGraph& g, const std::vector<bool>& done) {
  if (done.size() != g.size()) throw DependencyError("done-set size does not match graph");
  std::vector<OpIndex> ready;
  for (OpIndex v = 0; v < g.size(); ++v) {
    bool parents_done = true;
    for (OpIndex p : g.parents(v)) parents_done = parents_done && done[p];
    if (done[v]) {
      if (!parents_done)
        throw DependencyError("operator " + g.op(v).id + " marked done before its parents");
      continue;
    }
    if (parents_done) ready.push_back(v);
  }
  return ready;
}

std::vector<std::string> ready_set(const WorkflowGraph& g, const std::vector<std::string>& done) {
  std::vector<bool> mask(g.size(), false);
  for (const auto& id : done) mask[g.index_of(id)] = true;
  std::vector<std::string> out;
  for (OpIndex v : ready_set(g, mask)) out.push_back(g.op(v).id);
  std::sort(out.begin(), out.end());
  return out;
}

TokenTable::TokenTable(const WorkflowGraph& g, const QueryBatch& batch)
    : queries_(batch.size()), ops_(g.size()) {
  const std::size_t cells = queries_ * ops_;
  prompt_.resize(cells);
  context_.resize(cells);
  output_.resize(cells);
  input_.resize(cells);
  total_.assign(queries_, 0);
  priority_.resize(queries_);
  const auto order = g.topological_order();

  for (QueryIndex q = 0; q < queries_; ++q) {
    const auto& inst = batch.queries[q];
    priority_[q] = inst.priority;
    for (OpIndex v = 0; v < ops_; ++v) {
      const auto& spec = g.op(v);
      std::size_t c = q * ops_ + v;
      prompt_[c] = spec.prompt_tokens;
      context_[c] = spec.context_tokens;
      output_[c] = spec.output_tokens;
      if (auto it = inst.overrides.find(spec.id); it != inst.overrides.end()) {
        if (it->second.prompt_tokens) prompt_[c] = *it->second.prompt_tokens;
        if (it->second.context_tokens) context_[c] = *it->second.context_tokens;
        if (it->second.output_tokens) output_[c] = *it->second.output_tokens;
      }
    }
    for (OpIndex v : order) {
      std::size_t c = q * ops_ + v;
      Tokens folded = 0;
      for (OpIndex p : g.parents(v)) {
        Tokens out = output_[q * ops_ + p];
        folded = g.op(v).aggregation == Aggregation::kVote ? std::max(folded, out) : folded + out;
      }
      input_[c] = prompt_[c] + context_[c] + folded;
      total_[q] += prompt_[c] + context_[c] + output_[c];
    }
  }
}

TokenTable TokenTable::subset(std::span<const QueryIndex> queries) const {
  TokenTable t;
  t.queries_ = queries.size();
  t.ops_ = ops_;
  auto copy_rows = [&](const std::vector<Tokens>& src, std::vector<Tokens>& dst) {
    dst.resize(t.queries_ * ops_);
    for (std::size_t i = 0; i < queries.size(); ++i)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(queries[i] * ops_), ops_,
                  dst.begin() + static_cast<std::ptrdiff_t>(i * ops_));
  };
  copy_rows(prompt_, t.prompt_);
  copy_rows(context_, t.context_);
  copy_rows(output_, t.output_);
  copy_rows(input_, t.input_);
  for (QueryIndex q : queries) {
    t.total_.push_back(total_[q]);
    t.priority_.push_back(priority_[q]);
  }
  return t;
}

QueryBatch expand_queries(const QueryBatch& base, std::size_t n) {
  QueryBatch out;
  out.queries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    QueryInstance q;
    if (base.empty()) {
      q.id = "q" + std::to_string(i);
    } else {
      q = base.queries[i % base.size()];
      if (i >= base.size()) q.id += "#" + std::to_string(i / base.size());
    }
    out.queries.push_back(std::move(q));
  }
  return out;
}

}  // namespace agentplan
