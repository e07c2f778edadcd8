#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "evaluation.hpp"
#include "generator.hpp"
#include "retriever.hpp"

namespace sprag {

struct EstimationConfig {
  std::string embedding_model = "BAAI/bge-large-en-v1.5";
  std::size_t top_k = 3;
  double temperature = 0.0;
  GenerationConfig generator;
};

json config_to_json(const EstimationConfig& config);

// How the final story point was obtained.
enum class Resolution { Parsed, Regenerated, EvidenceMedian };

const char* to_string(Resolution resolution);

struct EstimationRecord {
  std::string project_id;
  std::string issue_key;
  std::vector<RetrievalResult> retrieved;
  std::vector<Evidence> evidence;  // parallel to retrieved
  PromptBundle prompt;
  std::string raw_reply;  // reply the estimate came from (last one on fallback)
  ParsedEstimate estimate;
  double final_sp = 0;
  Resolution resolution = Resolution::Parsed;
  int attempts = 0;  // generator calls including transport retries
  std::optional<double> truth;
  std::optional<double> abs_error;
};

json record_to_json(const EstimationRecord& record);

// Embedding and generation backends shared by every estimate of a run.
class Pipeline {
 public:
  Pipeline(std::shared_ptr<Embedder> embedder, std::shared_ptr<Generator> generator,
           std::size_t parallelism = 4, ScaleDef scale = ScaleDef::fibonacci());

  Embedder& embedder() { return *embedder_; }
  Generator& generator() { return *generator_; }
  std::size_t parallelism() const { return parallelism_; }
  const ScaleDef& scale() const { return scale_; }

 private:
  std::shared_ptr<Embedder> embedder_;
  std::shared_ptr<Generator> generator_;
  std::size_t parallelism_;
  ScaleDef scale_;
};

// retrieve -> prompt -> generate -> parse. An unparseable reply is regenerated
// once; if that also fails the lower median of the retrieved story points is
// used. Errors carry the task's issue key.
EstimationRecord estimate_task(const Task& task, const VectorIndex& index, const EstimationConfig& config,
                               Pipeline& pipeline);

struct TaskFailure {
  std::string issue_key;
  ErrorCode code = ErrorCode::Internal;
  std::string message;
};

struct ProjectRun {
  std::vector<EstimationRecord> records;  // test order, failed tasks omitted
  std::vector<TaskFailure> failures;
  std::size_t test_size = 0;
  bool valid = true;  // false when more than 10% of tasks failed
  std::optional<ProjectScore> score;
};

ProjectRun run_project(const SplitDataset& split, const VectorIndex& index, const EstimationConfig& config,
                       Pipeline& pipeline);

// "RAG-BAAI" for the bge model, "RAG-SBERT" for all-mpnet-base-v2, "RAG-<model>" otherwise.
std::string method_for_model(const std::string& model_id);

struct GridCell {
  std::size_t top_k = 3;
  double temperature = 0.0;

  friend auto operator<=>(const GridCell&, const GridCell&) = default;
  std::string key() const;  // "3-0.1"
};

struct Grid {
  std::vector<std::size_t> top_k{2, 3, 4};
  std::vector<double> temperature{0.0, 0.1, 0.2, 0.3};

  std::vector<GridCell> cells() const;  // k-major, ascending
};

// Parses "k=3", "temp=0,0.1", "k=2,3,4" style tokens over the default grid.
Grid parse_grid(std::span<const std::string> tokens);

// Holds <results>/.lock for its lifetime. A lock left by a dead process is taken over.
class ResultsLock {
 public:
  explicit ResultsLock(const std::filesystem::path& results_dir);
  ~ResultsLock();
  ResultsLock(const ResultsLock&) = delete;
  ResultsLock& operator=(const ResultsLock&) = delete;

 private:
  std::filesystem::path path_;
};

enum class CellStatus { Completed, Skipped, Failed, Invalid };

const char* to_string(CellStatus status);

struct CellOutcome {
  GridCell cell;
  CellStatus status = CellStatus::Completed;
  std::optional<ProjectScore> score;
  std::string error;
  std::filesystem::path dir;
};

// A persisted, completed cell.
struct SweepScore {
  std::string project_id;
  std::string embedding_model;
  GridCell cell;
  ProjectScore score;
  std::size_t corpus_size = 0;
};

// results/{project}/{embedding}/{k}-{t}/ with records.jsonl, score.json and
// manifest.json. Cells are keyed by a hash of (project, config, dataset).
class ResultsStore {
 public:
  explicit ResultsStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path cell_dir(const std::string& project_id, const std::string& model_id,
                                 const GridCell& cell) const;
  std::vector<SweepScore> completed_scores() const;

 private:
  std::filesystem::path root_;
};

struct SweepRequest {
  std::string project_id;
  SplitDataset split;
  std::size_t corpus_size = 0;
  EstimationConfig base;  // embedding model and generator settings; k/t come from the grid
  Grid grid;
};

// Runs every grid cell not already persisted with a matching key. Cells run in
// order; a failing cell is recorded and the sweep moves on. The caller holds the
// results lock.
std::vector<CellOutcome> sweep(const SweepRequest& request, Pipeline& pipeline, ResultsStore& store);

struct BestCell {
  GridCell cell;
  double mean_mae = 0;
  std::size_t projects = 0;
};

// model -> size group -> best cell.
using BestConfigTable = std::map<std::string, std::map<SizeLabel, BestCell>>;

// Per (model, group): the grid cell with the lowest unweighted mean of project
// MAEs; ties go to smaller k, then smaller temperature. Every project must have
// every cell of `grid`, else Error(IncompleteGrid) listing what is missing.
BestConfigTable select_best_config(std::span<const SweepScore> scores, const ProjectGrouping& grouping,
                                   const Grid& grid = {});

json best_config_to_json(const BestConfigTable& table);
BestConfigTable best_config_from_json(const json& j);

}  // namespace sprag
