// agentplan: plan, simulate and benchmark batch agentic workflows.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "agentplan/config.hpp"
#include "agentplan/errors.hpp"
#include "agentplan/online.hpp"
#include "agentplan/plan_io.hpp"
#include "agentplan/scenario.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace agentplan;

namespace {

struct Common {
  std::string workflow;
  std::optional<std::size_t> queries;
  std::string scheduler = "halo";
  std::optional<std::size_t> beam_width;
  std::optional<std::size_t> workers;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string config;
};

void add_common(CLI::App* app, Common& c, bool needs_workflow = true) {
  auto* wf = app->add_option("--workflow", c.workflow, "Workflow YAML document")->check(CLI::ExistingFile);
  if (needs_workflow) wf->required();
  app->add_option("--queries", c.queries, "Number of queries (default: the document's query list)")
      ->check(CLI::PositiveNumber);
  app->add_option("--scheduler", c.scheduler, "halo|rr|coloc|dp|topo")
      ->check(CLI::IsMember({"halo", "rr", "coloc", "dp", "topo"}));
  app->add_option("--beam-width", c.beam_width, "Beam width w")->check(CLI::PositiveNumber);
  app->add_option("--workers", c.workers, "Number of workers m")->check(CLI::PositiveNumber);
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--config", c.config, "Config YAML (overrides flags)")->check(CLI::ExistingFile);
}

// defaults < flags < config file
RunConfig resolve_config(const Common& c) {
  RunConfig cfg;
  if (c.beam_width) cfg.search.beam_width = *c.beam_width;
  if (c.workers) cfg.search.workers = *c.workers;
  if (!c.config.empty()) cfg = load_config(c.config, cfg);
  cfg.validate();
  return cfg;
}

json run_info(const Common& c, const Workflow& wf, std::size_t n) {
  return {{"workflow", c.workflow},
          {"operators", wf.graph.size()},
          {"queries", n},
          {"scheduler", c.scheduler},
          {"seed", c.seed},
          {"out", c.out}};
}

QueryBatch batch_for(const Common& c, const Workflow& wf) {
  if (!c.queries) return wf.batch.empty() ? expand_queries(wf.batch, 1) : wf.batch;
  return expand_queries(wf.batch, *c.queries);
}

fs::path out_path(const Common& c, const char* file) { return fs::path(c.out) / file; }

int cmd_plan(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  const Workflow wf = load_workflow(c.workflow);
  const QueryBatch batch = batch_for(c, wf);
  const TokenTable tokens(wf.graph, batch);
  const auto plan = make_plan(parse_scheduler(c.scheduler), wf.graph, tokens, cfg);
  const CostModel cost = make_cost_model(wf.graph, tokens, cfg);

  write_file(out_path(c, "plan.json").string(), plan_to_json(plan.assignment, wf.graph, batch.size()).dump(2) + "\n");
  write_file(out_path(c, "plan.dot").string(), plan_to_dot(plan.assignment, wf.graph, &cost));
  write_file(out_path(c, "costs.csv").string(), cost.dump_csv(plan.assignment));
  json info = run_info(c, wf, batch.size());
  info["estimated_cost_s"] = to_seconds(plan.estimated_cost);
  if (plan.stats) {
    info["search"] = {{"rounds", plan.stats->rounds},
                      {"total_expansions", plan.stats->total_expansions},
                      {"max_expansions_per_round", plan.stats->max_expansions_per_round},
                      {"bound_per_round", candidates_per_round_bound(cfg.search)}};
  }
  write_file(out_path(c, "manifest.json").string(), make_manifest("plan", cfg, info).dump(2) + "\n");
  std::cout << "estimated cost " << to_seconds(plan.estimated_cost) << " s; plan written to " << c.out << "\n";
  return 0;
}

int cmd_simulate(const Common& c, const std::string& plan_file) {
  const RunConfig cfg = resolve_config(c);
  const Workflow wf = load_workflow(c.workflow);
  const QueryBatch batch = batch_for(c, wf);
  const TokenTable tokens(wf.graph, batch);
  const CostModel cost = make_cost_model(wf.graph, tokens, cfg);

  Assignment plan;
  if (!plan_file.empty()) {
    std::ifstream in(plan_file);
    if (!in) throw Error("cannot open plan file '" + plan_file + "'");
    json doc;
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ParseError(std::string("plan file is not JSON: ") + e.what());
    }
    plan = plan_from_json(doc, wf.graph);
  } else {
    plan = make_plan(parse_scheduler(c.scheduler), wf.graph, tokens, cfg).assignment;
  }
  const auto trace = simulate(plan, wf.graph, tokens, cfg.profile, cfg.coefficients, cfg.simulation);
  const Metrics m = collect_metrics(trace);

  write_file(out_path(c, "metrics.json").string(), metrics_to_json(m));
  write_file(out_path(c, "trace.ndjson").string(), trace_to_ndjson(trace, wf.graph));
  write_file(out_path(c, "memory.csv").string(), memory_curve_csv(trace));
  write_file(out_path(c, "utilization.csv").string(), utilization_curve_csv(trace));
  write_file(out_path(c, "plan.json").string(), plan_to_json(plan, wf.graph, batch.size()).dump(2) + "\n");
  write_file(out_path(c, "plan.dot").string(), plan_to_dot(plan, wf.graph, &cost));
  std::ostringstream table;
  table.precision(10);
  table << "workflow,queries,scheduler,latency_s,estimated_cost_s,throughput_qps,utilization_auc,memory_auc\n"
        << fs::path(c.workflow).stem().string() << ',' << batch.size() << ','
        << (plan_file.empty() ? c.scheduler : "file") << ',' << m.wall_clock_s << ',' << to_seconds(cost.total(plan))
        << ',' << m.throughput_qps << ',' << m.utilization_auc << ',' << m.memory_auc << '\n';
  write_file(out_path(c, "table.csv").string(), table.str());
  json info = run_info(c, wf, batch.size());
  if (!plan_file.empty()) info["plan_file"] = plan_file;
  write_file(out_path(c, "manifest.json").string(), make_manifest("simulate", cfg, info).dump(2) + "\n");
  std::cout << "wall clock " << m.wall_clock_s << " s, throughput " << m.throughput_qps << " q/s; outputs in "
            << c.out << "\n";
  return 0;
}

int cmd_bench(const std::string& scenario, const std::string& out) {
  const Scenario s = load_scenario(scenario);
  const auto rep = run_scenario(s, out);
  std::cout << report_table_csv(rep);
  if (!rep.online.empty()) std::cout << report_online_csv(rep);
  return 0;
}

int cmd_online(const Common& c, double rate, bool sweep, double interval, double duration) {
  const RunConfig cfg = resolve_config(c);
  const Workflow wf = load_workflow(c.workflow);
  const QueryBatch base = c.queries ? expand_queries(wf.batch, *c.queries) : wf.batch;
  ArrivalProcess a;
  a.rate_qps = rate;
  a.seed = c.seed;
  a.minibatch_interval_s = interval;
  const auto rates = sweep ? default_rate_sweep() : std::vector<double>{rate};
  const auto rep = saturation_sweep(parse_scheduler(c.scheduler), wf.graph, base, cfg, a, duration, rates);

  ScenarioReport r;
  r.name = "online";
  r.online.push_back({fs::path(c.workflow).stem().string(), parse_scheduler(c.scheduler), rep});
  write_file(out_path(c, "table.csv").string(), report_online_csv(r));
  write_file(out_path(c, "metrics.json").string(), report_metrics_json(r).dump(2) + "\n");
  json info = run_info(c, wf, base.size());
  info["rate_qps"] = rates;
  info["interval_s"] = interval;
  info["duration_s"] = duration;
  write_file(out_path(c, "manifest.json").string(), make_manifest("online", cfg, info).dump(2) + "\n");
  std::cout << report_online_csv(r);
  return 0;
}

int cmd_generate(const std::string& shape, std::size_t ops, std::size_t queries, std::uint64_t seed,
                 const std::string& out) {
  const auto wf = generate_workload(parse_shape(shape), ops, queries, seed);
  const auto doc = serialize_workflow(wf);
  if (out.empty() || out == "-") {
    std::cout << doc;
  } else {
    write_file(out, doc);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Plan and simulate batch agentic-LLM workflows on virtual GPU workers"};
  app.require_subcommand(1);

  Common plan_opts, sim_opts, online_opts;
  auto* plan = app.add_subcommand("plan", "Plan a workflow and write plan.json / plan.dot");
  add_common(plan, plan_opts);

  auto* sim = app.add_subcommand("simulate", "Plan (or load a plan) and replay it on the simulator");
  add_common(sim, sim_opts);
  std::string plan_file;
  sim->add_option("--plan", plan_file, "Plan JSON to replay instead of planning")->check(CLI::ExistingFile);

  auto* bench = app.add_subcommand("bench", "Run a scenario (schedulers x query counts x ablations)");
  std::string scenario, bench_out = "out";
  bench->add_option("--scenario", scenario, "Scenario YAML")->required()->check(CLI::ExistingFile);
  bench->add_option("--out", bench_out, "Output directory");

  auto* online = app.add_subcommand("online", "Poisson arrivals with mini-batch planning");
  add_common(online, online_opts);
  double rate = 1.0, interval = 1.0, duration = 300.0;
  bool sweep = false;
  online->add_option("--rate", rate, "Offered rate (queries/s)")->check(CLI::PositiveNumber);
  online->add_option("--interval", interval, "Mini-batch interval (s)")->check(CLI::PositiveNumber);
  online->add_option("--duration", duration, "Arrival window (s)")->check(CLI::PositiveNumber);
  online->add_flag("--sweep", sweep, "Sweep offered rates 0.1..100 instead of --rate");

  auto* gen = app.add_subcommand("generate", "Write a synthetic workflow document");
  std::string shape = "chain", gen_out;
  std::size_t ops = 3, queries = 10;
  std::uint64_t seed = 0;
  gen->add_option("--shape", shape, "chain|fanout_fanin|multiturn|voting")
      ->check(CLI::IsMember({"chain", "fanout_fanin", "multiturn", "voting"}));
  gen->add_option("--ops", ops, "Number of operators")->check(CLI::PositiveNumber);
  gen->add_option("--queries", queries, "Number of queries");
  gen->add_option("--seed", seed, "Random seed");
  gen->add_option("--out", gen_out, "Output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*plan) return cmd_plan(plan_opts);
    if (*sim) return cmd_simulate(sim_opts, plan_file);
    if (*bench) return cmd_bench(scenario, bench_out);
    if (*online) return cmd_online(online_opts, rate, sweep, interval, duration);
    if (*gen) return cmd_generate(shape, ops, queries, seed, gen_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
