#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "corpus.hpp"

namespace sprag {

// (1/n) sum |pred - truth|. Empty or mismatched lengths -> error.
double mae(std::span<const double> preds, std::span<const double> truths);

// Median of |pred - truth|; even n averages the two middle values.
double mdae(std::span<const double> preds, std::span<const double> truths);

struct ProjectScore {
  std::string project_id;
  std::string method;  // "RAG-SBERT", "RAG-BAAI", or a baseline name
  double mae = 0;
  double mdae = 0;
  std::size_t n = 0;
};

struct GroupSummary {
  SizeLabel group = SizeLabel::Small;
  double mean_mae = 0;
  double sd_mae = 0;  // sample SD (n - 1); 0 with sd_defined=false for one project
  bool sd_defined = true;
  std::size_t project_count = 0;
};

using ProjectGrouping = std::function<SizeLabel(const std::string& project_id)>;

// Unweighted mean and sample SD of project MAEs per group, Small/Mid/Large
// order. Groups listed in `required` must be non-empty.
std::vector<GroupSummary> group_summary(std::span<const ProjectScore> scores, const ProjectGrouping& grouping,
                                        std::span<const SizeLabel> required = {});

// (project, method) -> (MAE, MdAE). Backs both published baselines and RAG rows.
class ScoreTable {
 public:
  ScoreTable() = default;

  // Delimited table with header project,method,mae,mdae.
  static ScoreTable load_csv(const std::filesystem::path& path);
  static ScoreTable parse_csv(std::string_view text);
  std::string to_csv() const;

  void set(const ProjectScore& score);
  bool has(const std::string& project, const std::string& method) const;
  // Missing cell -> Error(NotFound) naming it.
  const ProjectScore& get(const std::string& project, const std::string& method) const;

  std::vector<std::string> projects() const;  // first-seen order
  std::vector<std::string> methods() const;   // first-seen order
  std::vector<ProjectScore> scores_for(const std::string& method) const;

 private:
  std::map<std::pair<std::string, std::string>, ProjectScore> cells_;
  std::vector<std::string> projects_;
  std::vector<std::string> methods_;
};

struct WinCount {
  std::string rag_method;
  std::string baseline;
  SizeLabel group = SizeLabel::Small;
  std::size_t wins = 0;      // projects with rag MAE strictly below baseline MAE
  std::size_t projects = 0;  // projects in the group
};

// Every (rag method, baseline, group) cell over the table's projects.
std::vector<WinCount> win_counts(const ScoreTable& table, std::span<const std::string> rag_methods,
                                 std::span<const std::string> baselines, const ProjectGrouping& grouping);

// project -> task count, as in the project-size table.
std::map<std::string, std::size_t> load_project_sizes(const std::filesystem::path& path);

// Grouping from task counts with thresholds and overrides. Unknown project -> NotFound.
ProjectGrouping grouping_from_sizes(std::map<std::string, std::size_t> sizes, SizeGrouping groups);

inline constexpr std::array<const char*, 4> kBaselineMethods = {"LHC-SE", "LHCtc-SE", "Deep-SE", "TF-IDF"};
inline constexpr std::array<const char*, 2> kRagMethods = {"RAG-SBERT", "RAG-BAAI"};

}  // namespace sprag
