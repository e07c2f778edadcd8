#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "estimator.hpp"
#include "report.hpp"

namespace sprag {

// A project as laid out under data_dir/<safe id>/:
//   corpus.jsonl, rejects.jsonl, project.json, and after `split` train.jsonl,
//   test.jsonl, split.json.
struct ProjectInfo {
  std::string id;
  std::filesystem::path dir;
  std::size_t corpus_size = 0;
  std::optional<std::size_t> train_size;
  std::optional<std::size_t> test_size;
};

struct EstimateRequest {
  std::string project_id;
  std::string title;
  std::string description;
  std::optional<std::size_t> top_k;
  std::optional<double> temperature;
};

// Command-level operations over a RunConfig. Backends are created on first use,
// so commands that need no model never touch one.
class Engine {
 public:
  explicit Engine(RunConfig config);

  const RunConfig& config() const { return config_; }

  Embedder& embedder();
  Pipeline& pipeline();

  std::filesystem::path project_dir(const std::string& project_id) const;
  std::vector<ProjectInfo> list_projects() const;
  std::optional<ProjectInfo> find_project(const std::string& project_id) const;

  // Size group from the project-size table when it lists the project, else from
  // the ingested corpus size. Unknown project -> NotFound.
  ProjectGrouping grouping() const;

  json ingest(const std::vector<std::filesystem::path>& files, const std::optional<std::string>& project_id);
  json split(const std::string& project_id, std::optional<double> ratio);
  json index(const std::string& project_id);

  // Index over train.jsonl (corpus.jsonl when the project was never split);
  // built once per process and shared.
  std::shared_ptr<const VectorIndex> project_index(const std::string& project_id);

  // Ad-hoc task. Omitted k/t come from best_config.json for the project's size
  // group, else (3, 0).
  json estimate(const EstimateRequest& request);
  // A task of the project's test split; the record carries the true SP.
  json estimate_issue(const std::string& project_id, const std::string& issue_key,
                      std::optional<std::size_t> top_k, std::optional<double> temperature);

  json sweep(const std::string& project_id, const Grid& grid);
  // Best cells from the results directory -> results/best_config.json and
  // results/scores.csv. Without a grid, the swept cells define it.
  json evaluate(const std::optional<Grid>& grid);
  json stats();
  // Fixture-only, or RAG rows from the results directory.
  json report(const std::filesystem::path& out_dir, bool fixture_only);

  SplitDataset load_split(const std::string& project_id) const;

 private:
  ProjectInfo require_project(const std::string& project_id) const;
  std::pair<GridCell, std::string> default_cell(const std::string& project_id) const;
  json run_estimate(const Task& task, std::optional<std::size_t> top_k, std::optional<double> temperature);

  Embedder& embedder_locked();

  RunConfig config_;
  std::mutex mutex_;
  std::shared_ptr<Embedder> embedder_;
  std::unique_ptr<Pipeline> pipeline_;
  std::map<std::string, std::shared_ptr<const VectorIndex>> indexes_;
};

}  // namespace sprag
