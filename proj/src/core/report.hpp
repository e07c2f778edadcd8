#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "estimator.hpp"
#include "evaluation.hpp"
#include "stats.hpp"

namespace sprag {

// One hypothesis test in a report. `ok` is false when the test could not run
// (no signal, too few pairs); `note` then says why.
struct StatsRow {
  std::string x_method;
  std::string y_method;  // empty for Kruskal-Wallis
  std::string group;     // "Small" / "Mid" / "Large" / "All"
  TestResult result;
  bool ok = true;
  std::string note;
};

// Each RAG method vs each baseline per size group ("less": RAG MAE lower),
// then RAG methods against each other per group and overall (two-sided).
std::vector<StatsRow> wilcoxon_rows(const ScoreTable& table, const ProjectGrouping& grouping);

// Per RAG method, project MAEs split by size group.
std::vector<StatsRow> kruskal_rows(const ScoreTable& table, const ProjectGrouping& grouping);

json stats_rows_to_json(const std::vector<StatsRow>& rows);

struct ReportBundle {
  std::vector<std::pair<std::string, std::string>> files;  // name -> content, fixed order
};

// Deterministic: identical inputs give byte-identical files.
ReportBundle build_report(const ScoreTable& table, const ProjectGrouping& grouping, const std::string& source);

void write_report(const ReportBundle& bundle, const std::filesystem::path& dir);

// RAG rows from persisted sweep cells (each project scored at its group's best
// cell) plus the fixture's baseline rows for the same projects.
ScoreTable table_from_results(std::span<const SweepScore> scores, const BestConfigTable& best,
                              const ProjectGrouping& grouping, const ScoreTable& fixture);

}  // namespace sprag
