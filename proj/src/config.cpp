#include "agentplan/config.hpp"

#include <fstream>
#include <sstream>

#include "agentplan/errors.hpp"
#include "config_yaml.hpp"
#include "yaml_util.hpp"

namespace agentplan {

namespace detail {

namespace {

template <typename T>
void read(const YAML::Node& map, const char* key, T& out) {
  if (auto n = map[key]) out = scalar_as<T>(n, key);
}

void read_seconds(const YAML::Node& map, const char* key, Nanos& out) {
  if (auto n = map[key]) out = from_seconds(scalar_as<double>(n, key));
}

void require_map(const YAML::Node& n, const std::string& where) {
  if (!n.IsMap()) throw ParseError("'" + where + "' must be a mapping", line_of(n), where);
}

}  // namespace

void apply_config(const YAML::Node& root, RunConfig& cfg) {
  if (!root || root.IsNull()) return;
  require_map(root, "config");
  require_keys(root, {"coefficients", "profile", "batching", "ordering", "cache_reuse", "search"}, "config");

  if (auto c = root["coefficients"]) {
    require_map(c, "coefficients");
    require_keys(c, {"gamma", "sigma", "lambda", "beta", "gamma_prefill_only"}, "coefficients");
    read(c, "gamma", cfg.coefficients.gamma);
    read(c, "sigma", cfg.coefficients.sigma);
    read(c, "lambda", cfg.coefficients.lambda);
    read(c, "beta", cfg.coefficients.beta);
    read(c, "gamma_prefill_only", cfg.coefficients.gamma_prefill_only);
  }
  if (auto p = root["profile"]) {
    require_map(p, "profile");
    require_keys(p, {"context_prep_seconds_per_token", "handoff_seconds_per_token", "models"}, "profile");
    read_seconds(p, "context_prep_seconds_per_token", cfg.profile.context_prep_per_token);
    read_seconds(p, "handoff_seconds_per_token", cfg.profile.handoff_per_token);
    if (auto models = p["models"]) {
      require_map(models, "models");
      for (const auto& kv : models) {
        const auto name = kv.first.as<std::string>();
        const auto& m = kv.second;
        require_map(m, name);
        require_keys(m,
                     {"load_seconds", "prefill_seconds_per_token", "decode_seconds_per_token",
                      "transfer_seconds_per_token"},
                     "model '" + name + "'");
        auto& mp = cfg.profile.models[name];
        read_seconds(m, "load_seconds", mp.load);
        read_seconds(m, "prefill_seconds_per_token", mp.prefill_per_token);
        read_seconds(m, "decode_seconds_per_token", mp.decode_per_token);
        read_seconds(m, "transfer_seconds_per_token", mp.transfer_per_token);
      }
    }
  }
  if (auto b = root["batching"]) {
    require_map(b, "batching");
    require_keys(b,
                 {"mode", "fixed_batch", "prefill_batch", "decode_saturation_batch", "memory_capacity_tokens",
                  "prefix_cache_tokens"},
                 "batching");
    auto& pol = cfg.simulation.batching;
    if (auto mode = b["mode"]) {
      try {
        pol.mode = parse_batching_mode(scalar_as<std::string>(mode, "mode"));
      } catch (const ValidationError& e) {
        throw ParseError(e.what(), line_of(mode), "mode");
      }
    }
    read(b, "fixed_batch", pol.fixed_batch);
    read(b, "prefill_batch", pol.prefill_batch);
    read(b, "decode_saturation_batch", pol.decode_saturation_batch);
    read(b, "memory_capacity_tokens", pol.memory_capacity_tokens);
    read(b, "prefix_cache_tokens", pol.prefix_cache_tokens);
  }
  if (auto o = root["ordering"]) {
    try {
      cfg.simulation.order = parse_query_order(scalar_as<std::string>(o, "ordering"));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_of(o), "ordering");
    }
  }
  read(root, "cache_reuse", cfg.simulation.cache_reuse);
  if (auto s = root["search"]) {
    require_map(s, "search");
    require_keys(s, {"beam_width", "workers", "dp_threshold_seconds", "rank_weights"}, "search");
    read(s, "beam_width", cfg.search.beam_width);
    read(s, "workers", cfg.search.workers);
    if (auto t = s["dp_threshold_seconds"]) cfg.search.dp_threshold_seconds = scalar_as<double>(t, "dp_threshold_seconds");
    if (auto w = s["rank_weights"]) {
      require_map(w, "rank_weights");
      require_keys(w, {"out_degree", "context_affinity"}, "rank_weights");
      read(w, "out_degree", cfg.search.rank_weights.out_degree);
      read(w, "context_affinity", cfg.search.rank_weights.context_affinity);
    }
  }
}

}  // namespace detail

void RunConfig::validate() const {
  coefficients.validate();
  profile.validate();
  search.validate();
  simulation.batching.validate();
}

RunConfig parse_config(std::string_view doc, RunConfig base) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(doc));
  } catch (const YAML::ParserException& e) {
    throw ParseError(e.msg, e.mark.line + 1);
  }
  detail::apply_config(root, base);
  base.validate();
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

nlohmann::json config_to_json(const RunConfig& cfg) {
  using nlohmann::json;
  json models = json::object();
  for (const auto& [name, m] : cfg.profile.models)
    models[name] = {{"load_seconds", to_seconds(m.load)},
                    {"prefill_seconds_per_token", to_seconds(m.prefill_per_token)},
                    {"decode_seconds_per_token", to_seconds(m.decode_per_token)},
                    {"transfer_seconds_per_token", to_seconds(m.transfer_per_token)}};
  const auto& b = cfg.simulation.batching;
  const auto& s = cfg.search;
  return {{"coefficients",
           {{"gamma", cfg.coefficients.gamma},
            {"sigma", cfg.coefficients.sigma},
            {"lambda", cfg.coefficients.lambda},
            {"beta", cfg.coefficients.beta},
            {"gamma_prefill_only", cfg.coefficients.gamma_prefill_only}}},
          {"profile",
           {{"context_prep_seconds_per_token", to_seconds(cfg.profile.context_prep_per_token)},
            {"handoff_seconds_per_token", to_seconds(cfg.profile.handoff_per_token)},
            {"models", models}}},
          {"batching",
           {{"mode", to_string(b.mode)},
            {"fixed_batch", b.fixed_batch},
            {"prefill_batch", b.prefill_batch},
            {"decode_saturation_batch", b.decode_saturation_batch},
            {"memory_capacity_tokens", b.memory_capacity_tokens},
            {"prefix_cache_tokens", b.prefix_cache_tokens}}},
          {"ordering", to_string(cfg.simulation.order)},
          {"cache_reuse", cfg.simulation.cache_reuse},
          {"search",
           {{"beam_width", s.beam_width},
            {"workers", s.workers},
            {"dp_threshold_seconds", s.dp_threshold_seconds ? json(*s.dp_threshold_seconds) : json(nullptr)},
            {"rank_weights",
             {{"out_degree", s.rank_weights.out_degree}, {"context_affinity", s.rank_weights.context_affinity}}}}}};
}

CostModel make_cost_model(const WorkflowGraph& g, const TokenTable& tokens, const RunConfig& cfg) {
  const bool reuse = cfg.simulation.cache_reuse;
  return CostModel(g, tokens, cfg.profile, effective_coefficients(cfg.coefficients, reuse), cfg.search.workers,
                   make_throughput_estimator(cfg.simulation.batching, cfg.profile, reuse));
}

PlanResult make_plan(Scheduler s, const WorkflowGraph& g, const TokenTable& tokens, const RunConfig& cfg) {
  const CostModel cost = make_cost_model(g, tokens, cfg);
  const std::size_t m = cfg.search.workers;
  PlanResult r;
  switch (s) {
    case Scheduler::kHalo: {
      auto res = beam_search(cost, cfg.search);
      r.assignment = std::move(res.assignment);
      r.stats = std::move(res.stats);
      break;
    }
    case Scheduler::kRoundRobin: r.assignment = schedule_round_robin(g, m); break;
    case Scheduler::kCoLoc: r.assignment = schedule_coloc(g, m); break;
    case Scheduler::kDataParallel: r.assignment = schedule_data_parallel(g, m); break;
    case Scheduler::kTopological: r.assignment = schedule_naive_topological(g, m); break;
  }
  r.estimated_cost = cost.total(r.assignment);
  return r;
}

}  // namespace agentplan
