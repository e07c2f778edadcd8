#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sprag/sprag.h"

using json = nlohmann::json;

namespace {

// 2 for input/usage problems (bad schema, bad config, bad arguments), 1 otherwise.
int exit_code_for(sprag_status status) {
  switch (status) {
    case SPRAG_OK: return 0;
    case SPRAG_E_SCHEMA:
    case SPRAG_E_CONFIG:
    case SPRAG_E_INVALID_ARGUMENT: return 2;
    default: return 1;
  }
}

int report_failure(sprag_status status) {
  std::cerr << "error (" << sprag_status_name(status) << "): " << sprag_last_error() << "\n";
  return exit_code_for(status);
}

using Command = sprag_status (*)(sprag_engine_t*, const char*, char**);

int run_json(sprag_engine_t* engine, Command command, const json& request) {
  char* out = nullptr;
  const auto status = command(engine, request.dump().c_str(), &out);
  if (status != SPRAG_OK) return report_failure(status);
  std::cout << out << "\n";
  sprag_free_string(out);
  return 0;
}

int serve(sprag_engine_t* engine, const std::string& host, int port) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  sprag_service_t* service = nullptr;
  auto status = sprag_service_create(engine, &service);
  if (status != SPRAG_OK) return report_failure(status);
  int bound = 0;
  status = sprag_service_start(service, host.c_str(), port, &bound);
  if (status != SPRAG_OK) {
    sprag_service_free(service);
    return report_failure(status);
  }
  std::cout << "listening on http://" << host << ":" << bound << "/api/v1" << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  sprag_service_stop(service);
  sprag_service_free(service);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented story-point estimation"};
  app.require_subcommand(1);

  std::string config_path;
  bool stub_embeddings = false;
  bool stub_generator = false;
  std::optional<std::size_t> parallelism;
  std::string results_dir;
  std::string model;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_flag("--stub-embeddings", stub_embeddings, "use the offline hash embedding backend");
  app.add_flag("--stub-generator", stub_generator, "use the offline median generator");
  app.add_option("--parallelism", parallelism, "concurrent backend calls")->check(CLI::PositiveNumber);
  app.add_option("--results", results_dir, "results directory");
  app.add_option("--model", model, "embedding model id");

  auto* ingest = app.add_subcommand("ingest", "parse, clean and filter issue exports");
  std::vector<std::string> files;
  std::string ingest_project;
  ingest->add_option("files", files, "CSV exports (project id = file stem)")->required();
  ingest->add_option("--project", ingest_project, "project id for a single file");

  auto* split = app.add_subcommand("split", "chronological train/test split");
  std::string split_project;
  std::optional<double> ratio;
  split->add_option("project", split_project)->required();
  split->add_option("--ratio", ratio, "train fraction (default 0.8)");

  auto* index = app.add_subcommand("index", "embed the training split");
  std::string index_project;
  index->add_option("project", index_project)->required();

  auto* estimate = app.add_subcommand("estimate", "estimate one task");
  std::string est_project, title, description, issue;
  std::optional<std::size_t> top_k;
  std::optional<double> temperature;
  estimate->add_option("project", est_project)->required();
  auto* title_opt = estimate->add_option("--title", title, "new task title");
  estimate->add_option("--description", description, "new task description");
  auto* issue_opt = estimate->add_option("--issue", issue, "issue key from the test split");
  title_opt->excludes(issue_opt);
  estimate->add_option("-k,--top-k", top_k)->check(CLI::PositiveNumber);
  estimate->add_option("-t,--temperature", temperature)->check(CLI::Range(0.0, 2.0));

  auto* sweep = app.add_subcommand("sweep", "score the top_k x temperature grid for a project");
  std::string sweep_project;
  std::vector<std::string> sweep_grid;
  sweep->add_option("project", sweep_project)->required();
  sweep->add_option("--grid", sweep_grid, "restrict the grid, e.g. --grid k=3 temp=0")->expected(1, -1);

  auto* evaluate = app.add_subcommand("evaluate", "select the best grid cell per size group");
  std::vector<std::string> eval_grid;
  evaluate->add_option("--grid", eval_grid, "grid every project must cover")->expected(1, -1);

  app.add_subcommand("stats", "Kruskal-Wallis and Wilcoxon tests over the score fixture");

  auto* report = app.add_subcommand("report", "write the report bundle");
  std::string out_dir = "report";
  bool fixture_only = false;
  report->add_option("--out", out_dir, "output directory");
  report->add_flag("--fixture-only", fixture_only, "use the bundled score table only");

  auto* serve_cmd = app.add_subcommand("serve", "run the planning-assistant API");
  std::optional<std::string> host;
  std::optional<int> port;
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--port", port)->check(CLI::Range(0, 65535));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (estimate->parsed() && title.empty() && issue.empty()) {
    std::cerr << "error: estimate needs --title or --issue\n";
    return 2;
  }

  json overrides = json::object();
  if (stub_embeddings) overrides["embedding"]["stub"] = true;
  if (stub_generator) overrides["generator"]["stub"] = true;
  if (!model.empty()) overrides["embedding"]["model"] = model;
  if (parallelism) overrides["parallelism"] = *parallelism;
  if (!results_dir.empty()) overrides["results_dir"] = results_dir;

  sprag_engine_t* engine = nullptr;
  const auto status = sprag_engine_create(config_path.empty() ? nullptr : config_path.c_str(),
                                          overrides.dump().c_str(), &engine);
  if (status != SPRAG_OK) return report_failure(status);

  int rc = 0;
  if (ingest->parsed()) {
    json req = {{"files", files}};
    if (!ingest_project.empty()) req["project"] = ingest_project;
    rc = run_json(engine, sprag_ingest, req);
  } else if (split->parsed()) {
    json req = {{"project", split_project}};
    if (ratio) req["ratio"] = *ratio;
    rc = run_json(engine, sprag_split, req);
  } else if (index->parsed()) {
    rc = run_json(engine, sprag_index_project, {{"project", index_project}});
  } else if (estimate->parsed()) {
    json req = {{"project", est_project}};
    if (!issue.empty()) {
      req["issue_key"] = issue;
    } else {
      req["title"] = title;
      req["description"] = description;
    }
    if (top_k) req["top_k"] = *top_k;
    if (temperature) req["temperature"] = *temperature;
    rc = run_json(engine, sprag_estimate, req);
  } else if (sweep->parsed()) {
    json req = {{"project", sweep_project}};
    if (!sweep_grid.empty()) req["grid"] = sweep_grid;
    rc = run_json(engine, sprag_sweep, req);
  } else if (evaluate->parsed()) {
    json req = json::object();
    if (!eval_grid.empty()) req["grid"] = eval_grid;
    rc = run_json(engine, sprag_evaluate, req);
  } else if (app.got_subcommand("stats")) {
    rc = run_json(engine, sprag_stats, json::object());
  } else if (report->parsed()) {
    rc = run_json(engine, sprag_report, {{"out_dir", out_dir}, {"fixture_only", fixture_only}});
  } else if (serve_cmd->parsed()) {
    char* cfg = nullptr;
    sprag_engine_config(engine, &cfg);
    const auto config = json::parse(cfg);
    sprag_free_string(cfg);
    rc = serve(engine, host.value_or(config["service"]["host"].get<std::string>()),
               port.value_or(config["service"]["port"].get<int>()));
  }
  sprag_engine_free(engine);
  return rc;
}
