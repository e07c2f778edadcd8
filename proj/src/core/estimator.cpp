#include "estimator.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <set>

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <fmt/format.h>

#include "error.hpp"
#include "hashing.hpp"
#include "parallel.hpp"
#include "timeutil.hpp"

namespace sprag {

json config_to_json(const EstimationConfig& config) {
  json j = {
      {"embedding_model", config.embedding_model},
      {"top_k", config.top_k},
      {"temperature", config.temperature},
      {"generator_model", config.generator.model_id},
      {"max_tokens", config.generator.max_tokens},
  };
  j["seed"] = config.generator.seed ? json(*config.generator.seed) : json(nullptr);
  return j;
}

const char* to_string(Resolution resolution) {
  switch (resolution) {
    case Resolution::Parsed: return "parsed";
    case Resolution::Regenerated: return "regenerated";
    case Resolution::EvidenceMedian: return "evidence_median";
  }
  return "?";
}

json record_to_json(const EstimationRecord& record) {
  json retrieved = json::array();
  for (std::size_t i = 0; i < record.retrieved.size(); ++i) {
    const auto& r = record.retrieved[i];
    const auto& e = record.evidence[i];
    retrieved.push_back({{"rank", r.rank},
                         {"issue_key", r.issue_key},
                         {"similarity", r.similarity},
                         {"story_point", e.story_point}});
  }
  json j = {
      {"project_id", record.project_id},
      {"issue_key", record.issue_key},
      {"retrieved", std::move(retrieved)},
      {"prompt", {{"system", record.prompt.system}, {"user", record.prompt.user}}},
      {"raw_reply", record.raw_reply},
      {"parse_status", to_string(record.estimate.status)},
      {"final_sp", record.final_sp},
      {"resolution", to_string(record.resolution)},
      {"attempts", record.attempts},
  };
  j["raw_value"] = record.estimate.raw_value ? json(*record.estimate.raw_value) : json(nullptr);
  j["truth"] = record.truth ? json(*record.truth) : json(nullptr);
  j["abs_error"] = record.abs_error ? json(*record.abs_error) : json(nullptr);
  return j;
}

Pipeline::Pipeline(std::shared_ptr<Embedder> embedder, std::shared_ptr<Generator> generator,
                   std::size_t parallelism, ScaleDef scale)
    : embedder_(std::move(embedder)),
      generator_(std::move(generator)),
      parallelism_(std::max<std::size_t>(parallelism, 1)),
      scale_(std::move(scale)) {
  if (!embedder_ || !generator_) fail(ErrorCode::InvalidArgument, "pipeline needs an embedder and a generator");
}

namespace {

EstimationRecord estimate_unwrapped(const Task& task, const VectorIndex& index, const EstimationConfig& config,
                                    Pipeline& pipeline) {
  if (config.top_k == 0) fail(ErrorCode::InvalidArgument, "top_k must be positive");
  if (index.model_id() != config.embedding_model) {
    fail(ErrorCode::InvalidArgument, fmt::format("index was built with '{}' but the estimate uses '{}'",
                                                 index.model_id(), config.embedding_model));
  }
  EstimationRecord rec;
  rec.project_id = task.project_id;
  rec.issue_key = task.issue_key;

  const auto query = pipeline.embedder().embed(config.embedding_model, compose_embed_text(task));
  rec.retrieved = retrieve_top_k(index, query, config.top_k);
  std::vector<double> evidence_sps;
  for (const auto& r : rec.retrieved) {
    const Task& ref = index.task(r.entry);
    if (!ref.story_point) {
      fail(ErrorCode::Validation, fmt::format("reference issue {} has no story point", ref.issue_key));
    }
    rec.evidence.push_back({ref.issue_key, ref.title, ref.description, *ref.story_point, r.similarity});
    evidence_sps.push_back(*ref.story_point);
  }

  rec.prompt = build_prompt(format_similar_tasks(rec.evidence), task, rec.evidence.size());

  GenerationConfig gen = config.generator;
  gen.temperature = config.temperature;
  auto outcome = pipeline.generator().generate(rec.prompt, gen);
  rec.attempts = outcome.attempts;
  rec.raw_reply = std::move(outcome.text);
  rec.estimate = parse_story_point(rec.raw_reply, pipeline.scale());
  rec.resolution = Resolution::Parsed;

  if (rec.estimate.status == ParseStatus::Failed) {
    auto second = pipeline.generator().generate(rec.prompt, gen);
    rec.attempts += second.attempts;
    rec.raw_reply = std::move(second.text);
    rec.estimate = parse_story_point(rec.raw_reply, pipeline.scale());
    rec.resolution = Resolution::Regenerated;
  }

  if (rec.estimate.status == ParseStatus::Failed) {
    rec.final_sp = snap_to_scale(lower_median(evidence_sps), pipeline.scale());
    rec.resolution = Resolution::EvidenceMedian;
  } else {
    rec.final_sp = *rec.estimate.snapped;
  }

  rec.truth = task.story_point;
  if (rec.truth) rec.abs_error = std::abs(rec.final_sp - *rec.truth);
  return rec;
}

}  // namespace

EstimationRecord estimate_task(const Task& task, const VectorIndex& index, const EstimationConfig& config,
                               Pipeline& pipeline) {
  try {
    return estimate_unwrapped(task, index, config, pipeline);
  } catch (const Error& e) {
    const std::string who = task.issue_key.empty() ? std::string("new task") : task.issue_key;
    throw Error(e.code(), fmt::format("{}: {}", who, e.what()));
  }
}

ProjectRun run_project(const SplitDataset& split, const VectorIndex& index, const EstimationConfig& config,
                       Pipeline& pipeline) {
  if (split.test.empty()) fail(ErrorCode::InsufficientData, "test split is empty");
  const std::size_t n = split.test.size();
  std::vector<std::optional<EstimationRecord>> slots(n);
  std::vector<std::optional<TaskFailure>> failed(n);

  parallel_for(n, pipeline.parallelism(), [&](std::size_t i) {
    try {
      slots[i] = estimate_task(split.test[i], index, config, pipeline);
    } catch (const Error& e) {
      failed[i] = TaskFailure{split.test[i].issue_key, e.code(), e.what()};
    } catch (const std::exception& e) {
      failed[i] = TaskFailure{split.test[i].issue_key, ErrorCode::Internal, e.what()};
    }
  });

  ProjectRun run;
  run.test_size = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) run.records.push_back(std::move(*slots[i]));
    if (failed[i]) run.failures.push_back(std::move(*failed[i]));
  }
  run.valid = run.failures.size() * 10 <= n;

  std::vector<double> preds, truths;
  for (const auto& r : run.records) {
    if (!r.truth) continue;
    preds.push_back(r.final_sp);
    truths.push_back(*r.truth);
  }
  if (preds.empty()) {
    run.valid = false;
  } else {
    ProjectScore score;
    score.project_id = split.test.front().project_id;
    score.method = method_for_model(config.embedding_model);
    score.mae = mae(preds, truths);
    score.mdae = mdae(preds, truths);
    score.n = preds.size();
    run.score = score;
  }
  return run;
}

std::string method_for_model(const std::string& model_id) {
  if (model_id == "BAAI/bge-large-en-v1.5") return "RAG-BAAI";
  if (model_id == "sentence-transformers/all-mpnet-base-v2") return "RAG-SBERT";
  return "RAG-" + model_id;
}

std::string GridCell::key() const { return fmt::format("{}-{}", top_k, temperature); }

std::vector<GridCell> Grid::cells() const {
  std::vector<std::size_t> ks = top_k;
  std::vector<double> ts = temperature;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  std::vector<GridCell> out;
  for (auto k : ks) {
    for (auto t : ts) out.push_back({k, t});
  }
  return out;
}

namespace {

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(s.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

Grid parse_grid(std::span<const std::string> tokens) {
  Grid grid;
  for (const auto& token : tokens) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) fail(ErrorCode::InvalidArgument, fmt::format("grid token '{}' is not key=values", token));
    const std::string key = token.substr(0, eq);
    const auto values = split_commas(token.substr(eq + 1));
    try {
      if (key == "k" || key == "top_k") {
        grid.top_k.clear();
        for (const auto& v : values) {
          std::size_t pos = 0;
          const long k = std::stol(v, &pos);
          if (pos != v.size() || k < 1) throw std::invalid_argument(v);
          grid.top_k.push_back(static_cast<std::size_t>(k));
        }
      } else if (key == "temp" || key == "t" || key == "temperature") {
        grid.temperature.clear();
        for (const auto& v : values) {
          std::size_t pos = 0;
          const double t = std::stod(v, &pos);
          if (pos != v.size() || !(t >= 0 && t <= 2)) throw std::invalid_argument(v);
          grid.temperature.push_back(t);
        }
      } else {
        fail(ErrorCode::InvalidArgument, fmt::format("unknown grid key '{}'", key));
      }
    } catch (const std::logic_error&) {
      fail(ErrorCode::InvalidArgument, fmt::format("bad grid value in '{}'", token));
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------

ResultsLock::ResultsLock(const std::filesystem::path& results_dir) : path_(results_dir / ".lock") {
  std::filesystem::create_directories(results_dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const auto pid = std::to_string(::getpid());
      [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    if (errno != EEXIST) fail(ErrorCode::Io, fmt::format("cannot create lock '{}'", path_.string()));
    long holder = 0;
    try {
      holder = std::stol(read_file(path_));
    } catch (const std::exception&) {
      holder = 0;
    }
    const bool alive = holder > 0 && (::kill(static_cast<pid_t>(holder), 0) == 0 || errno == EPERM);
    if (alive) {
      fail(ErrorCode::Locked, fmt::format("results directory '{}' is in use by process {}",
                                          results_dir.string(), holder));
    }
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  fail(ErrorCode::Locked, fmt::format("could not acquire '{}'", path_.string()));
}

ResultsLock::~ResultsLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

const char* to_string(CellStatus status) {
  switch (status) {
    case CellStatus::Completed: return "completed";
    case CellStatus::Skipped: return "skipped";
    case CellStatus::Failed: return "failed";
    case CellStatus::Invalid: return "invalid";
  }
  return "?";
}

ResultsStore::ResultsStore(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path ResultsStore::cell_dir(const std::string& project_id, const std::string& model_id,
                                             const GridCell& cell) const {
  return root_ / safe_path_component(project_id) / safe_path_component(model_id) / cell.key();
}

namespace {

json score_to_json(const ProjectScore& s) {
  return {{"project_id", s.project_id}, {"method", s.method}, {"mae", s.mae}, {"mdae", s.mdae}, {"n", s.n}};
}

ProjectScore score_from_json(const json& j) {
  ProjectScore s;
  s.project_id = j.at("project_id").get<std::string>();
  s.method = j.at("method").get<std::string>();
  s.mae = j.at("mae").get<double>();
  s.mdae = j.at("mdae").get<double>();
  s.n = j.at("n").get<std::size_t>();
  return s;
}

std::string dataset_hash(const SplitDataset& split) {
  std::string body;
  for (const auto& t : split.train) body += to_jsonl_line(task_to_json(t)) + "\n";
  body += "--\n";
  for (const auto& t : split.test) body += to_jsonl_line(task_to_json(t)) + "\n";
  return sha256_hex(body);
}

}  // namespace

std::vector<SweepScore> ResultsStore::completed_scores() const {
  std::vector<SweepScore> out;
  if (!std::filesystem::exists(root_)) return out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root_)) {
    if (!entry.is_regular_file() || entry.path().filename() != "manifest.json") continue;
    const auto manifest = json::parse(read_file(entry.path()));
    if (manifest.value("status", "") != "completed") continue;
    const auto score_json = json::parse(read_file(entry.path().parent_path() / "score.json"));
    SweepScore s;
    s.project_id = manifest.at("project_id").get<std::string>();
    s.embedding_model = manifest.at("config").at("embedding_model").get<std::string>();
    s.cell.top_k = manifest.at("config").at("top_k").get<std::size_t>();
    s.cell.temperature = manifest.at("config").at("temperature").get<double>();
    s.corpus_size = manifest.value("corpus_size", std::size_t{0});
    s.score = score_from_json(score_json);
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const SweepScore& a, const SweepScore& b) {
    return std::tie(a.project_id, a.embedding_model, a.cell) < std::tie(b.project_id, b.embedding_model, b.cell);
  });
  return out;
}

std::vector<CellOutcome> sweep(const SweepRequest& request, Pipeline& pipeline, ResultsStore& store) {
  if (request.split.train.empty()) fail(ErrorCode::InsufficientData, "train split is empty");
  const auto cells = request.grid.cells();
  if (cells.empty()) fail(ErrorCode::InvalidArgument, "grid has no cells");

  const std::string data_hash = dataset_hash(request.split);
  const auto index = build_index(request.split.train, pipeline.embedder(), request.base.embedding_model);

  std::vector<CellOutcome> outcomes;
  for (const auto& cell : cells) {
    EstimationConfig config = request.base;
    config.top_k = cell.top_k;
    config.temperature = cell.temperature;
    const json config_json = config_to_json(config);
    const std::string cell_key =
        sha256_hex(json{{"project_id", request.project_id}, {"config", config_json}, {"dataset", data_hash}}.dump());

    CellOutcome outcome;
    outcome.cell = cell;
    outcome.dir = store.cell_dir(request.project_id, config.embedding_model, cell);
    const auto manifest_path = outcome.dir / "manifest.json";

    if (std::filesystem::exists(manifest_path)) {
      try {
        const auto old = json::parse(read_file(manifest_path));
        if (old.value("status", "") == "completed" && old.value("cell_key", "") == cell_key) {
          outcome.status = CellStatus::Skipped;
          outcome.score = score_from_json(json::parse(read_file(outcome.dir / "score.json")));
          outcomes.push_back(std::move(outcome));
          continue;
        }
      } catch (const std::exception&) {
        // unreadable manifest: recompute the cell
      }
    }

    std::filesystem::create_directories(outcome.dir);
    json manifest = {
        {"cell_key", cell_key},
        {"project_id", request.project_id},
        {"config", config_json},
        {"dataset_hash", data_hash},
        {"corpus_size", request.corpus_size},
        {"train_size", request.split.train.size()},
        {"test_size", request.split.test.size()},
        {"started_at", utc_now_iso8601()},
    };
    try {
      auto run = run_project(request.split, index, config, pipeline);
      std::vector<json> lines;
      for (const auto& r : run.records) lines.push_back(record_to_json(r));
      write_jsonl(outcome.dir / "records.jsonl", lines);

      json failures = json::array();
      for (const auto& f : run.failures) {
        failures.push_back({{"issue_key", f.issue_key}, {"code", error_code_name(f.code)}, {"message", f.message}});
      }
      json score = run.score ? score_to_json(*run.score) : json::object();
      score["failures"] = run.failures.size();
      score["valid"] = run.valid;
      write_file_atomic(outcome.dir / "score.json", score.dump(2) + "\n");

      outcome.status = run.valid ? CellStatus::Completed : CellStatus::Invalid;
      outcome.score = run.score;
      if (!run.valid) {
        outcome.error = fmt::format("{} of {} tasks failed", run.failures.size(), run.test_size);
      }
      manifest["failures"] = std::move(failures);
    } catch (const std::exception& e) {
      outcome.status = CellStatus::Failed;
      outcome.error = e.what();
    }
    manifest["status"] = to_string(outcome.status);
    if (!outcome.error.empty()) manifest["error"] = outcome.error;
    manifest["finished_at"] = utc_now_iso8601();
    write_file_atomic(manifest_path, manifest.dump(2) + "\n");
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

// ---------------------------------------------------------------------------

BestConfigTable select_best_config(std::span<const SweepScore> scores, const ProjectGrouping& grouping,
                                   const Grid& grid) {
  const auto cells = grid.cells();
  if (cells.empty()) fail(ErrorCode::InvalidArgument, "grid has no cells");

  // model -> project -> cell -> mae
  std::map<std::string, std::map<std::string, std::map<GridCell, double>>> by_model;
  for (const auto& s : scores) by_model[s.embedding_model][s.project_id][s.cell] = s.score.mae;

  BestConfigTable table;
  std::vector<std::string> missing;
  for (const auto& [model, projects] : by_model) {
    std::map<SizeLabel, std::vector<const std::map<GridCell, double>*>> groups;
    for (const auto& [project, cell_scores] : projects) {
      for (const auto& cell : cells) {
        if (!cell_scores.count(cell)) missing.push_back(fmt::format("{} / {} / {}", model, project, cell.key()));
      }
      groups[grouping(project)].push_back(&cell_scores);
    }
    if (!missing.empty()) continue;
    for (const auto& [group, members] : groups) {
      std::optional<BestCell> best;
      for (const auto& cell : cells) {
        double sum = 0;
        for (const auto* m : members) sum += m->at(cell);
        const double mean = sum / static_cast<double>(members.size());
        if (!best || mean < best->mean_mae) best = BestCell{cell, mean, members.size()};
      }
      table[model][group] = *best;
    }
  }
  if (!missing.empty()) {
    std::string list;
    const std::size_t shown = std::min<std::size_t>(missing.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) list += (i ? ", " : "") + missing[i];
    if (shown < missing.size()) list += fmt::format(", ... ({} more)", missing.size() - shown);
    fail(ErrorCode::IncompleteGrid, fmt::format("incomplete grid; missing cells: {}", list));
  }
  return table;
}

json best_config_to_json(const BestConfigTable& table) {
  json models = json::object();
  for (const auto& [model, groups] : table) {
    json g = json::object();
    for (const auto& [label, best] : groups) {
      g[to_string(label)] = {{"top_k", best.cell.top_k},
                             {"temperature", best.cell.temperature},
                             {"mean_mae", best.mean_mae},
                             {"projects", best.projects}};
    }
    models[model] = std::move(g);
  }
  return {{"models", std::move(models)}};
}

BestConfigTable best_config_from_json(const json& j) {
  BestConfigTable table;
  try {
    for (const auto& [model, groups] : j.at("models").items()) {
      for (const auto& [label, cell] : groups.items()) {
        BestCell best;
        best.cell.top_k = cell.at("top_k").get<std::size_t>();
        best.cell.temperature = cell.at("temperature").get<double>();
        best.mean_mae = cell.value("mean_mae", 0.0);
        best.projects = cell.value("projects", std::size_t{0});
        table[model][parse_size_label(label)] = best;
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::Schema, fmt::format("bad best-config document: {}", e.what()));
  }
  return table;
}

}  // namespace sprag
