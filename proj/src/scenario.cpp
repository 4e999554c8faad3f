#include "agentplan/scenario.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "agentplan/errors.hpp"
#include "agentplan/plan_io.hpp"
#include "config_yaml.hpp"
#include "yaml_util.hpp"

namespace agentplan {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Toggle t) {
  switch (t) {
    case Toggle::kParallelism: return "parallelism";
    case Toggle::kOptimization: return "optimization";
    case Toggle::kCacheReuse: return "cache_reuse";
    case Toggle::kAdaptiveBatching: return "adaptive_batching";
    case Toggle::kOrdering: return "ordering";
  }
  return "?";
}

Toggle parse_toggle(std::string_view s) {
  for (auto t : {Toggle::kParallelism, Toggle::kOptimization, Toggle::kCacheReuse, Toggle::kAdaptiveBatching,
                 Toggle::kOrdering})
    if (s == to_string(t)) return t;
  throw ValidationError("unknown ablation toggle '" + std::string(s) + "'");
}

Variant full_variant(Scheduler s, const RunConfig& cfg) { return {"full", s, cfg}; }

Variant toggle_off(Toggle t, Scheduler s, const RunConfig& cfg) {
  Variant v{std::string("no_") + to_string(t), s, cfg};
  switch (t) {
    case Toggle::kParallelism: v.config.search.workers = 1; break;
    case Toggle::kOptimization: v.scheduler = Scheduler::kDataParallel; break;
    case Toggle::kCacheReuse: v.config.simulation.cache_reuse = false; break;
    case Toggle::kAdaptiveBatching: v.config.simulation.batching.mode = BatchingMode::kFixed; break;
    case Toggle::kOrdering: v.config.simulation.order = QueryOrder::kFifo; break;
  }
  return v;
}

namespace {

using detail::line_of;
using detail::require_keys;
using detail::scalar_as;

template <typename T, typename F>
std::vector<T> read_list(const YAML::Node& root, const char* key, F convert) {
  std::vector<T> out;
  const auto node = root[key];
  if (!node) return out;
  if (!node.IsSequence()) throw ParseError(std::string("'") + key + "' must be a list", line_of(node), key);
  for (const auto& item : node) {
    try {
      out.push_back(convert(item));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_of(item), key);
    }
  }
  return out;
}

std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

}  // namespace

Scenario parse_scenario(std::string_view doc, const std::string& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(doc));
  } catch (const YAML::ParserException& e) {
    throw ParseError(e.msg, e.mark.line + 1);
  }
  if (!root.IsMap()) throw ParseError("scenario document must be a mapping");
  require_keys(root, {"name", "workflows", "queries", "schedulers", "ablations", "config", "seed", "traces", "online"},
               "scenario");
  Scenario s;
  s.name = root["name"] ? scalar_as<std::string>(root["name"], "name") : "scenario";
  s.workflows = read_list<std::string>(root, "workflows", [&](const YAML::Node& n) {
    fs::path p(scalar_as<std::string>(n, "workflows"));
    if (p.is_relative()) p = fs::path(base_dir) / p;
    if (!fs::exists(p)) throw ValidationError("workflow file '" + p.string() + "' does not exist");
    return p.lexically_normal().string();
  });
  if (s.workflows.empty()) throw ParseError("scenario needs at least one workflow", line_of(root), "workflows");
  s.queries = read_list<std::size_t>(root, "queries", [](const YAML::Node& n) {
    auto q = scalar_as<std::size_t>(n, "queries");
    if (q == 0) throw ValidationError("query counts must be >= 1");
    return q;
  });
  if (s.queries.empty()) s.queries = {10};
  auto sched = [](const YAML::Node& n) { return parse_scheduler(scalar_as<std::string>(n, "schedulers")); };
  s.schedulers = read_list<Scheduler>(root, "schedulers", sched);
  if (s.schedulers.empty()) s.schedulers = {Scheduler::kHalo};
  s.ablations = read_list<Toggle>(root, "ablations",
                                  [](const YAML::Node& n) { return parse_toggle(scalar_as<std::string>(n, "ablations")); });
  detail::apply_config(root["config"], s.config);
  s.config.validate();
  if (root["seed"]) s.seed = scalar_as<std::uint64_t>(root["seed"], "seed");
  if (root["traces"]) s.traces = scalar_as<bool>(root["traces"], "traces");
  if (auto on = root["online"]) {
    if (!on.IsMap()) throw ParseError("'online' must be a mapping", line_of(on), "online");
    require_keys(on, {"schedulers", "rates", "interval_s", "duration_s"}, "online");
    OnlineSpec o;
    o.schedulers = read_list<Scheduler>(on, "schedulers", sched);
    if (o.schedulers.empty()) o.schedulers = {Scheduler::kHalo, Scheduler::kTopological};
    auto rates = read_list<double>(on, "rates", [](const YAML::Node& n) {
      auto r = scalar_as<double>(n, "rates");
      if (!(r > 0)) throw ValidationError("rates must be > 0");
      return r;
    });
    if (!rates.empty()) o.rates = rates;
    if (on["interval_s"]) o.interval_s = scalar_as<double>(on["interval_s"], "interval_s");
    if (on["duration_s"]) o.duration_s = scalar_as<double>(on["duration_s"], "duration_s");
    if (!(o.interval_s > 0) || !(o.duration_s > 0))
      throw ParseError("online interval_s and duration_s must be > 0", line_of(on), "online");
    s.online = o;
  }
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scenario file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), fs::path(path).parent_path().string());
}

CellResult run_cell(const Workflow& wf, const std::string& workflow_name, std::size_t n, const Variant& v,
                    bool keep_trace) {
  CellResult c;
  c.workflow = workflow_name;
  c.queries = n;
  c.scheduler = v.scheduler;
  c.variant = v.name;
  const QueryBatch batch = expand_queries(wf.batch, n);
  const TokenTable tokens(wf.graph, batch);
  const auto plan = make_plan(v.scheduler, wf.graph, tokens, v.config);
  const CostModel cost = make_cost_model(wf.graph, tokens, v.config);
  c.estimated_cost_s = to_seconds(plan.estimated_cost);
  SimulationConfig sim = v.config.simulation;
  sim.record_events = keep_trace;
  const auto trace = simulate(plan.assignment, wf.graph, tokens, v.config.profile, v.config.coefficients, sim);
  c.metrics = collect_metrics(trace);
  c.plan = plan_to_json(plan.assignment, wf.graph, n);
  c.dot = plan_to_dot(plan.assignment, wf.graph, &cost);
  if (keep_trace) c.trace_ndjson = trace_to_ndjson(trace, wf.graph);
  return c;
}

void write_file(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << content;
}

ScenarioReport run_scenario(const Scenario& s, const std::string& out_dir) {
  ScenarioReport rep;
  rep.name = s.name;

  struct Job {
    std::size_t workflow;
    std::size_t n;
    Variant variant;
  };
  std::vector<Workflow> workflows;
  std::vector<std::string> names;
  for (const auto& path : s.workflows) {
    workflows.push_back(load_workflow(path));
    names.push_back(stem(path));
  }
  std::vector<Job> jobs;
  for (std::size_t w = 0; w < workflows.size(); ++w)
    for (std::size_t n : s.queries) {
      for (Scheduler sch : s.schedulers) jobs.push_back({w, n, full_variant(sch, s.config)});
      for (Toggle t : s.ablations) jobs.push_back({w, n, toggle_off(t, Scheduler::kHalo, s.config)});
    }

  rep.cells.resize(jobs.size());
  std::vector<std::string> errors(jobs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < static_cast<long>(jobs.size()); ++i) {
    const auto& j = jobs[static_cast<std::size_t>(i)];
    try {
      rep.cells[static_cast<std::size_t>(i)] = run_cell(workflows[j.workflow], names[j.workflow], j.n, j.variant, s.traces);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (std::size_t i = 0; i < jobs.size(); ++i)
    if (!errors[i].empty())
      throw Error("cell " + names[jobs[i].workflow] + "/n=" + std::to_string(jobs[i].n) + "/" +
                  to_string(jobs[i].variant.scheduler) + "/" + jobs[i].variant.name + " failed: " + errors[i]);

  if (s.online) {
    for (std::size_t w = 0; w < workflows.size(); ++w)
      for (Scheduler sch : s.online->schedulers) {
        ArrivalProcess a;
        a.seed = s.seed;
        a.minibatch_interval_s = s.online->interval_s;
        rep.online.push_back({names[w], sch,
                              saturation_sweep(sch, workflows[w].graph, workflows[w].batch, s.config, a,
                                               s.online->duration_s, s.online->rates)});
      }
  }

  if (!out_dir.empty()) {
    const fs::path out(out_dir);
    write_file((out / "table.csv").string(), report_table_csv(rep));
    write_file((out / "metrics.json").string(), report_metrics_json(rep).dump(2) + "\n");
    if (!rep.online.empty()) write_file((out / "online.csv").string(), report_online_csv(rep));
    for (const auto& c : rep.cells) {
      const std::string cell = c.workflow + "_n" + std::to_string(c.queries) + "_" + to_string(c.scheduler) + "_" + c.variant;
      write_file((out / "plans" / (cell + ".dot")).string(), c.dot);
      write_file((out / "plans" / (cell + ".json")).string(), c.plan.dump(2) + "\n");
      if (s.traces) write_file((out / "traces" / (cell + ".ndjson")).string(), c.trace_ndjson);
    }
    json extra = {{"scenario", s.name}, {"workflows", s.workflows}, {"queries", s.queries}, {"seed", s.seed}};
    json sch = json::array();
    for (auto x : s.schedulers) sch.push_back(to_string(x));
    json abl = json::array();
    for (auto x : s.ablations) abl.push_back(to_string(x));
    extra["schedulers"] = sch;
    extra["ablations"] = abl;
    write_file((out / "manifest.json").string(), make_manifest("bench", s.config, extra).dump(2) + "\n");
  }
  return rep;
}

std::string report_table_csv(const ScenarioReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "workflow,queries,scheduler,variant,latency_s,estimated_cost_s,throughput_qps,utilization_auc,memory_auc\n";
  for (const auto& c : r.cells)
    out << c.workflow << ',' << c.queries << ',' << to_string(c.scheduler) << ',' << c.variant << ','
        << c.metrics.wall_clock_s << ',' << c.estimated_cost_s << ',' << c.metrics.throughput_qps << ','
        << c.metrics.utilization_auc << ',' << c.metrics.memory_auc << '\n';
  return out.str();
}

std::string report_online_csv(const ScenarioReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "workflow,scheduler,offered_qps,throughput_qps,p50_latency_s,p95_latency_s,arrived,batches,max_batch\n";
  for (const auto& row : r.online)
    for (const auto& p : row.report.points)
      out << row.workflow << ',' << to_string(row.scheduler) << ',' << p.offered_qps << ',' << p.throughput_qps << ','
          << p.p50_latency_s << ',' << p.p95_latency_s << ',' << p.arrived << ',' << p.batches << ',' << p.max_batch
          << '\n';
  return out.str();
}

json report_metrics_json(const ScenarioReport& r) {
  json cells = json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"workflow", c.workflow},
                     {"queries", c.queries},
                     {"scheduler", to_string(c.scheduler)},
                     {"variant", c.variant},
                     {"estimated_cost_s", c.estimated_cost_s},
                     {"metrics", json::parse(metrics_to_json(c.metrics))}});
  json online = json::array();
  for (const auto& row : r.online) {
    json pts = json::array();
    for (const auto& p : row.report.points)
      pts.push_back({{"offered_qps", p.offered_qps},
                     {"throughput_qps", p.throughput_qps},
                     {"p50_latency_s", p.p50_latency_s},
                     {"p95_latency_s", p.p95_latency_s},
                     {"arrived", p.arrived},
                     {"completed", p.completed}});
    online.push_back({{"workflow", row.workflow},
                      {"scheduler", to_string(row.scheduler)},
                      {"saturation_throughput_qps", row.report.saturation_throughput_qps},
                      {"sustained_rate_qps", row.report.sustained_rate_qps},
                      {"points", pts}});
  }
  return {{"schema_version", kSchemaVersion}, {"scenario", r.name}, {"cells", cells}, {"online", online}};
}

json make_manifest(const std::string& command, const RunConfig& cfg, const json& extra) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream ts;
  ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  return {{"schema_version", kSchemaVersion},
          {"tool", "agentplan"},
          {"command", command},
          {"config", config_to_json(cfg)},
          {"run", extra},
          {"created_at", ts.str()}};
}

const char* to_string(WorkloadShape s) {
  switch (s) {
    case WorkloadShape::kChain: return "chain";
    case WorkloadShape::kFanoutFanin: return "fanout_fanin";
    case WorkloadShape::kMultiturn: return "multiturn";
    case WorkloadShape::kVoting: return "voting";
  }
  return "?";
}

WorkloadShape parse_shape(std::string_view s) {
  for (auto x : {WorkloadShape::kChain, WorkloadShape::kFanoutFanin, WorkloadShape::kMultiturn, WorkloadShape::kVoting})
    if (s == to_string(x)) return x;
  throw ValidationError("unknown workload shape '" + std::string(s) + "' (expected chain|fanout_fanin|multiturn|voting)");
}

Workflow generate_workload(WorkloadShape shape, std::size_t k_ops, std::size_t n_queries, std::uint64_t seed) {
  if (k_ops < 1) throw ValidationError("k_ops must be >= 1");
  Workflow wf;
  auto& g = wf.graph;
  auto add = [&](std::string id, std::string model, Tokens prompt, Tokens prefix, Tokens out) {
    OperatorSpec op;
    op.id = std::move(id);
    op.model = std::move(model);
    op.prompt_tokens = prompt;
    op.prefix_tokens = prefix;
    op.output_tokens = out;
    g.add_operator(op);
    return g.size() - 1;
  };
  auto name = [](const char* stem, std::size_t i, std::size_t width) {
    std::ostringstream s;
    s << stem << std::setw(static_cast<int>(width)) << std::setfill('0') << i;
    return s.str();
  };
  const std::size_t width = std::to_string(k_ops).size();
  std::vector<std::string> sources, sinks;

  switch (shape) {
    case WorkloadShape::kChain:
    case WorkloadShape::kMultiturn: {
      const bool turns = shape == WorkloadShape::kMultiturn;
      for (std::size_t i = 0; i < k_ops; ++i) {
        OperatorSpec op;
        op.id = name(turns ? "turn" : "step", i + 1, width);
        op.model = turns ? "small" : (i % 3 == 2 ? "medium" : "small");
        op.prompt_tokens = 400;
        op.prefix_tokens = 200;
        op.output_tokens = 120;
        if (turns) {
          op.context_tokens = 300;
          op.context_source = "dialogue";
          op.repeat = 2;
        }
        g.add_operator(op);
        if (i > 0) g.add_edge(g.op(i - 1).id, op.id);
      }
      sources = {g.op(0).id};
      sinks = {g.op(k_ops - 1).id};
      break;
    }
    case WorkloadShape::kFanoutFanin: {
      if (k_ops < 3) return generate_workload(WorkloadShape::kChain, k_ops, n_queries, seed);
      add("dispatch", "small", 300, 150, 80);
      for (std::size_t i = 1; i + 1 < k_ops; ++i) {
        add(name("branch", i, width), i % 2 ? "small" : "medium", 250, 200, 100);
        g.add_edge("dispatch", g.op(i).id);
      }
      OperatorSpec agg;
      agg.id = "aggregate";
      agg.model = "large";
      agg.prompt_tokens = 300;
      agg.prefix_tokens = 200;
      agg.output_tokens = 150;
      agg.aggregation = Aggregation::kConcat;
      g.add_operator(agg);
      for (std::size_t i = 1; i + 1 < k_ops; ++i) g.add_edge(g.op(i).id, "aggregate");
      sources = {"dispatch"};
      sinks = {"aggregate"};
      break;
    }
    case WorkloadShape::kVoting: {
      for (std::size_t i = 0; i + 1 < k_ops; ++i) {
        OperatorSpec op;
        op.id = name("voter", i + 1, width);
        op.model = "small";
        op.prompt_tokens = 600;
        op.prefix_tokens = 300;
        op.context_tokens = 400;
        op.context_source = "article";
        op.output_tokens = 100;
        g.add_operator(op);
        sources.push_back(op.id);
      }
      OperatorSpec agg;
      agg.id = "decide";
      agg.model = "large";
      agg.prompt_tokens = 200;
      agg.prefix_tokens = 100;
      agg.output_tokens = 60;
      agg.aggregation = Aggregation::kVote;
      g.add_operator(agg);
      for (const auto& s : sources) g.add_edge(s, "decide");
      if (sources.empty()) sources = {"decide"};
      sinks = {"decide"};
      break;
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.5, 1.5);
  wf.batch.queries.reserve(n_queries);
  for (std::size_t q = 0; q < n_queries; ++q) {
    QueryInstance qi;
    qi.id = name("q", q, std::to_string(std::max<std::size_t>(n_queries, 1)).size());
    const double a = jitter(rng), b = jitter(rng);
    for (const auto& s : sources) {
      const auto& op = g.op(g.index_of(s));
      const Tokens var = op.prompt_tokens - op.prefix_tokens;
      qi.overrides[s].prompt_tokens = op.prefix_tokens + static_cast<Tokens>(std::llround(static_cast<double>(var) * a));
    }
    for (const auto& s : sinks) {
      const auto& op = g.op(g.index_of(s));
      qi.overrides[s].output_tokens =
          std::max<Tokens>(1, static_cast<Tokens>(std::llround(static_cast<double>(op.output_tokens) * b)));
    }
    qi.priority = static_cast<int>(rng() % 3);
    wf.batch.queries.push_back(std::move(qi));
  }
  return wf;
}

}  // namespace agentplan
