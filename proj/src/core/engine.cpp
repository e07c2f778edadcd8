#include "engine.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "error.hpp"

namespace sprag {

Engine::Engine(RunConfig config) : config_(std::move(config)) { validate_config(config_); }

Embedder& Engine::embedder() {
  std::lock_guard lock(mutex_);
  return embedder_locked();
}

Embedder& Engine::embedder_locked() {
  if (embedder_) return *embedder_;
  std::shared_ptr<EmbeddingBackend> backend;
  if (config_.embedding.stub) {
    backend = std::make_shared<HashEmbedBackend>(config_.embedding.stub_dims);
  } else {
    if (config_.embedding.url.empty()) {
      fail(ErrorCode::Config, "no embedding endpoint: set embedding.url or SPRAG_EMBED_URL, or use stub embeddings");
    }
    backend = std::make_shared<HttpEmbeddingBackend>(
        config_.embedding.url, config_.embedding.api_key,
        std::chrono::milliseconds(static_cast<std::int64_t>(config_.embedding.timeout_s * 1000)));
  }
  auto cache = std::make_shared<EmbeddingCache>(config_.cache_dir);
  embedder_ = std::make_shared<Embedder>(backend, cache, config_.parallelism, config_.embedding.batch_size);
  return *embedder_;
}

Pipeline& Engine::pipeline() {
  std::lock_guard lock(mutex_);
  if (pipeline_) return *pipeline_;
  embedder_locked();

  std::shared_ptr<ChatBackend> chat;
  if (config_.generator.stub) {
    chat = std::make_shared<MedianStubBackend>();
  } else {
    if (config_.generator.url.empty()) {
      fail(ErrorCode::Config, "no generator endpoint: set generator.url or SPRAG_GEN_URL, or use the stub generator");
    }
    chat = std::make_shared<HttpChatBackend>(
        config_.generator.url, config_.generator.api_key,
        std::chrono::milliseconds(static_cast<std::int64_t>(config_.generator.timeout_s * 1000)));
  }
  RetryPolicy retry;
  retry.max_attempts = config_.generator.max_attempts;
  retry.initial_backoff = std::chrono::milliseconds(config_.generator.backoff_ms);
  std::shared_ptr<AuditLog> audit;
  if (!config_.generator.stub) {
    std::filesystem::create_directories(config_.state_dir);
    audit = std::make_shared<AuditLog>(config_.state_dir / "generator_audit.jsonl");
  }
  auto generator = std::make_shared<Generator>(chat, retry, audit);
  pipeline_ = std::make_unique<Pipeline>(embedder_, generator, config_.parallelism);
  return *pipeline_;
}

std::filesystem::path Engine::project_dir(const std::string& project_id) const {
  return config_.data_dir / safe_path_component(project_id);
}

namespace {

std::optional<ProjectInfo> read_project(const std::filesystem::path& dir) {
  const auto meta_path = dir / "project.json";
  if (!std::filesystem::exists(meta_path)) return std::nullopt;
  const auto meta = json::parse(read_file(meta_path));
  ProjectInfo info;
  info.id = meta.at("project_id").get<std::string>();
  info.dir = dir;
  info.corpus_size = meta.at("corpus_size").get<std::size_t>();
  if (std::filesystem::exists(dir / "split.json")) {
    const auto split = json::parse(read_file(dir / "split.json"));
    info.train_size = split.at("train").get<std::size_t>();
    info.test_size = split.at("test").get<std::size_t>();
  }
  return info;
}

}  // namespace

std::vector<ProjectInfo> Engine::list_projects() const {
  std::vector<ProjectInfo> out;
  if (!std::filesystem::is_directory(config_.data_dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(config_.data_dir)) {
    if (!entry.is_directory()) continue;
    if (auto info = read_project(entry.path())) out.push_back(std::move(*info));
  }
  std::sort(out.begin(), out.end(), [](const ProjectInfo& a, const ProjectInfo& b) { return a.id < b.id; });
  return out;
}

std::optional<ProjectInfo> Engine::find_project(const std::string& project_id) const {
  auto info = read_project(project_dir(project_id));
  if (info && info->id == project_id) return info;
  return std::nullopt;
}

ProjectInfo Engine::require_project(const std::string& project_id) const {
  auto info = find_project(project_id);
  if (!info) fail(ErrorCode::NotFound, fmt::format("unknown project '{}'", project_id));
  return *info;
}

ProjectGrouping Engine::grouping() const {
  std::map<std::string, std::size_t> sizes;
  if (std::filesystem::exists(config_.project_sizes)) sizes = load_project_sizes(config_.project_sizes);
  for (const auto& p : list_projects()) sizes.emplace(p.id, p.corpus_size);
  return grouping_from_sizes(std::move(sizes), config_.size_groups);
}

json Engine::ingest(const std::vector<std::filesystem::path>& files, const std::optional<std::string>& project_id) {
  if (files.empty()) fail(ErrorCode::InvalidArgument, "no input files");
  if (project_id && files.size() > 1) fail(ErrorCode::InvalidArgument, "a project id applies to a single input file");
  IngestOptions options;
  options.filter = config_.filter;
  options.extra_log_patterns = config_.extra_log_patterns;

  json out = json::array();
  for (const auto& file : files) {
    const std::string id = project_id ? *project_id : file.stem().string();
    IngestResult result;
    try {
      result = sprag::ingest(read_file(file), id, ScaleDef::fibonacci(), options);
    } catch (const Error& e) {
      throw Error(e.code(), fmt::format("{}: {}", file.string(), e.what()));
    }
    const auto dir = project_dir(id);
    std::filesystem::create_directories(dir);
    write_tasks(dir / "corpus.jsonl", result.corpus.tasks);
    std::vector<json> rejects;
    for (const auto& r : result.rejects) rejects.push_back(reject_to_json(r));
    write_jsonl(dir / "rejects.jsonl", rejects);
    const json meta = {{"project_id", id},
                       {"source", file.filename().string()},
                       {"parsed_rows", result.parsed_rows},
                       {"corpus_size", result.corpus.tasks.size()},
                       {"rejected", result.rejects.size()}};
    write_file_atomic(dir / "project.json", meta.dump(2) + "\n");
    json row = meta;
    row["dir"] = dir.string();
    out.push_back(std::move(row));
  }
  return {{"projects", out}};
}

json Engine::split(const std::string& project_id, std::optional<double> ratio) {
  const auto info = require_project(project_id);
  ProjectDataset dataset;
  dataset.project_id = project_id;
  dataset.tasks = read_tasks(info.dir / "corpus.jsonl");
  const double r = ratio.value_or(config_.split_ratio);
  const auto split = chronological_split(dataset, r);
  write_tasks(info.dir / "train.jsonl", split.train);
  write_tasks(info.dir / "test.jsonl", split.test);
  const json meta = {{"project_id", project_id},
                     {"ratio", r},
                     {"train", split.train.size()},
                     {"test", split.test.size()},
                     {"train_last_created", format_iso8601(split.train.back().created)},
                     {"test_first_created", format_iso8601(split.test.front().created)}};
  write_file_atomic(info.dir / "split.json", meta.dump(2) + "\n");
  {
    std::lock_guard lock(mutex_);
    indexes_.erase(project_id);
  }
  return meta;
}

SplitDataset Engine::load_split(const std::string& project_id) const {
  const auto info = require_project(project_id);
  if (!info.train_size) fail(ErrorCode::NotFound, fmt::format("project '{}' has not been split", project_id));
  SplitDataset split;
  split.train = read_tasks(info.dir / "train.jsonl");
  split.test = read_tasks(info.dir / "test.jsonl");
  split.ratio = json::parse(read_file(info.dir / "split.json")).at("ratio").get<double>();
  return split;
}

std::shared_ptr<const VectorIndex> Engine::project_index(const std::string& project_id) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = indexes_.find(project_id); it != indexes_.end()) return it->second;
  }
  const auto info = require_project(project_id);
  const auto source = info.train_size ? info.dir / "train.jsonl" : info.dir / "corpus.jsonl";
  const auto train = read_tasks(source);
  auto index = std::make_shared<const VectorIndex>(build_index(train, embedder(), config_.embedding.model));
  std::lock_guard lock(mutex_);
  return indexes_.emplace(project_id, std::move(index)).first->second;
}

json Engine::index(const std::string& project_id) {
  auto& emb = embedder();
  const auto calls_before = emb.backend_calls();
  const auto hits_before = emb.cache_hits();
  {
    std::lock_guard lock(mutex_);
    indexes_.erase(project_id);
  }
  const auto idx = project_index(project_id);
  json keys = json::array();
  for (std::size_t i = 0; i < idx->size(); ++i) keys.push_back(idx->task(i).issue_key);
  const json meta = {{"project_id", project_id},
                     {"model", idx->model_id()},
                     {"dims", idx->dims()},
                     {"entries", idx->size()},
                     {"issue_keys", keys}};
  write_file_atomic(project_dir(project_id) / ("index-" + safe_path_component(idx->model_id()) + ".json"),
                    meta.dump(2) + "\n");
  return {{"project_id", project_id},
          {"model", idx->model_id()},
          {"dims", idx->dims()},
          {"entries", idx->size()},
          {"backend_calls", emb.backend_calls() - calls_before},
          {"cache_hits", emb.cache_hits() - hits_before}};
}

std::pair<GridCell, std::string> Engine::default_cell(const std::string& project_id) const {
  const auto path = config_.results_dir / "best_config.json";
  if (std::filesystem::exists(path)) {
    const auto table = best_config_from_json(json::parse(read_file(path)));
    if (auto m = table.find(config_.embedding.model); m != table.end()) {
      try {
        const auto group = grouping()(project_id);
        if (auto g = m->second.find(group); g != m->second.end()) return {g->second.cell, "best_config"};
      } catch (const Error&) {
        // project without a size group: use the fallback
      }
    }
  }
  return {GridCell{3, 0.0}, "default"};
}

json Engine::run_estimate(const Task& task, std::optional<std::size_t> top_k, std::optional<double> temperature) {
  auto [cell, source] = default_cell(task.project_id);
  if (top_k) cell.top_k = *top_k;
  if (temperature) cell.temperature = *temperature;
  if (top_k || temperature) source = "request";

  const auto idx = project_index(task.project_id);
  EstimationConfig config;
  config.embedding_model = config_.embedding.model;
  config.top_k = cell.top_k;
  config.temperature = cell.temperature;
  config.generator = generation_config(config_);
  const auto record = estimate_task(task, *idx, config, pipeline());

  json evidence = json::array();
  for (std::size_t i = 0; i < record.evidence.size(); ++i) {
    const auto& e = record.evidence[i];
    evidence.push_back({{"rank", record.retrieved[i].rank},
                        {"issue_key", e.issue_key},
                        {"title", e.title},
                        {"description", e.description},
                        {"story_point", e.story_point},
                        {"similarity", e.similarity}});
  }
  json out = {{"project_id", task.project_id},
              {"suggested", record.final_sp},
              {"evidence", std::move(evidence)},
              {"config",
               {{"embedding_model", config.embedding_model},
                {"top_k", config.top_k},
                {"temperature", config.temperature},
                {"generator_model", config.generator.model_id},
                {"source", source}}},
              {"parse_status", to_string(record.estimate.status)},
              {"resolution", to_string(record.resolution)},
              {"raw_reply", record.raw_reply},
              {"attempts", record.attempts}};
  if (!task.issue_key.empty()) out["issue_key"] = task.issue_key;
  if (record.truth) {
    out["truth"] = *record.truth;
    out["abs_error"] = *record.abs_error;
  }
  return out;
}

json Engine::estimate(const EstimateRequest& request) {
  require_project(request.project_id);
  Task task;
  task.project_id = request.project_id;
  task.title = clean_text(request.title);
  task.description = clean_text(request.description);
  if (task.title.empty()) fail(ErrorCode::Validation, "title is empty");
  if (request.top_k && *request.top_k == 0) fail(ErrorCode::Validation, "top_k must be positive");
  if (request.temperature && !(*request.temperature >= 0 && *request.temperature <= 2)) {
    fail(ErrorCode::Validation, "temperature must be in [0, 2]");
  }
  return run_estimate(task, request.top_k, request.temperature);
}

json Engine::estimate_issue(const std::string& project_id, const std::string& issue_key,
                            std::optional<std::size_t> top_k, std::optional<double> temperature) {
  const auto split = load_split(project_id);
  for (const auto& t : split.test) {
    if (t.issue_key == issue_key) return run_estimate(t, top_k, temperature);
  }
  fail(ErrorCode::NotFound, fmt::format("issue '{}' is not in the test split of '{}'", issue_key, project_id));
}

json Engine::sweep(const std::string& project_id, const Grid& grid) {
  const auto info = require_project(project_id);
  ResultsLock lock(config_.results_dir);
  SweepRequest request;
  request.project_id = project_id;
  request.split = load_split(project_id);
  request.corpus_size = info.corpus_size;
  request.base.embedding_model = config_.embedding.model;
  request.base.generator = generation_config(config_);
  request.grid = grid;
  ResultsStore store(config_.results_dir);
  const auto outcomes = sprag::sweep(request, pipeline(), store);

  json cells = json::array();
  for (const auto& o : outcomes) {
    json c = {{"top_k", o.cell.top_k},
              {"temperature", o.cell.temperature},
              {"status", to_string(o.status)},
              {"dir", o.dir.string()}};
    if (o.score) {
      c["mae"] = o.score->mae;
      c["mdae"] = o.score->mdae;
      c["n"] = o.score->n;
    }
    if (!o.error.empty()) c["error"] = o.error;
    cells.push_back(std::move(c));
  }
  return {{"project_id", project_id}, {"model", config_.embedding.model}, {"cells", cells}};
}

namespace {

Grid grid_of(std::span<const SweepScore> scores) {
  std::set<std::size_t> ks;
  std::set<double> ts;
  for (const auto& s : scores) {
    ks.insert(s.cell.top_k);
    ts.insert(s.cell.temperature);
  }
  return Grid{{ks.begin(), ks.end()}, {ts.begin(), ts.end()}};
}

}  // namespace

json Engine::evaluate(const std::optional<Grid>& grid) {
  ResultsLock lock(config_.results_dir);
  ResultsStore store(config_.results_dir);
  const auto scores = store.completed_scores();
  if (scores.empty()) {
    fail(ErrorCode::NotFound,
         fmt::format("results directory '{}' holds no completed sweep cells", config_.results_dir.string()));
  }
  const auto group_of = grouping();
  const auto best = select_best_config(scores, group_of, grid ? *grid : grid_of(scores));
  const json best_json = best_config_to_json(best);
  write_file_atomic(config_.results_dir / "best_config.json", best_json.dump(2) + "\n");

  ScoreTable fixture;
  if (std::filesystem::exists(config_.fixture)) fixture = ScoreTable::load_csv(config_.fixture);
  const auto table = table_from_results(scores, best, group_of, fixture);
  write_file_atomic(config_.results_dir / "scores.csv", table.to_csv());
  return {{"best_config", best_json}, {"scores", (config_.results_dir / "scores.csv").string()}};
}

json Engine::stats() {
  const auto table = ScoreTable::load_csv(config_.fixture);
  const auto group_of = grouping();
  return {{"fixture", config_.fixture.string()},
          {"kruskal_wallis", stats_rows_to_json(kruskal_rows(table, group_of))},
          {"wilcoxon", stats_rows_to_json(wilcoxon_rows(table, group_of))}};
}

json Engine::report(const std::filesystem::path& out_dir, bool fixture_only) {
  const auto group_of = grouping();
  ScoreTable table;
  std::string source;
  if (fixture_only) {
    table = ScoreTable::load_csv(config_.fixture);
    source = fmt::format("fixture {}", config_.fixture.filename().string());
  } else {
    if (!std::filesystem::is_directory(config_.results_dir)) {
      fail(ErrorCode::NotFound, fmt::format("results directory '{}' does not exist", config_.results_dir.string()));
    }
    ResultsStore store(config_.results_dir);
    const auto scores = store.completed_scores();
    if (scores.empty()) {
      fail(ErrorCode::NotFound,
           fmt::format("results directory '{}' holds no completed sweep cells", config_.results_dir.string()));
    }
    const auto best = select_best_config(scores, group_of, grid_of(scores));
    ScoreTable fixture;
    if (std::filesystem::exists(config_.fixture)) fixture = ScoreTable::load_csv(config_.fixture);
    table = table_from_results(scores, best, group_of, fixture);
    source = "sweep results (best cell per size group)";
  }
  const auto bundle = build_report(table, group_of, source);
  write_report(bundle, out_dir);
  json files = json::array();
  for (const auto& [name, content] : bundle.files) files.push_back((out_dir / name).string());
  return {{"out_dir", out_dir.string()}, {"files", files}};
}

}  // namespace sprag
