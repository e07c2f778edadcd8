#pragma once

#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "fileio.hpp"
#include "scale.hpp"
#include "timeutil.hpp"

namespace sprag {

// One issue: the atom of retrieval and estimation.
struct Task {
  std::string project_id;
  std::string issue_key;
  std::string title;
  std::string description;
  std::optional<double> story_point;  // nullopt: SP-missing
  Timestamp created;
  // Optional export columns; empty/false when the column is absent.
  std::string status;
  std::string resolution;
  bool changed_after_sp = false;

  friend bool operator==(const Task&, const Task&) = default;
};

// Strict weak order by (created, issue_key).
bool chronologically_before(const Task& a, const Task& b);

struct ProjectDataset {
  std::string project_id;
  std::vector<Task> tasks;  // sorted by (created, issue_key)

  friend bool operator==(const ProjectDataset&, const ProjectDataset&) = default;
};

struct SplitDataset {
  std::vector<Task> train;
  std::vector<Task> test;
  double ratio = 0.8;
};

// A dropped or malformed input row.
struct RejectRecord {
  std::size_t row = 0;   // 1-based data row index (header excluded); 0 for post-parse drops
  std::size_t line = 0;  // 1-based source line
  std::string issue_key;
  std::string reason;
};

struct ParseResult {
  ProjectDataset dataset;
  std::vector<RejectRecord> rejects;
};

// Header must contain issuekey, created, title, description, storypoint
// (case-insensitive, any order). Optional: status, resolution, changed_after_sp.
// Missing column -> Error(Schema). Bad rows land in rejects with their index.
ParseResult parse_dataset(std::string_view raw, const std::string& project_id);

// Inverse of parse_dataset for the canonical column set.
std::string serialize_dataset_csv(const ProjectDataset& dataset);

class TextCleaner {
 public:
  TextCleaner();
  explicit TextCleaner(const std::vector<std::string>& extra_log_patterns);

  // Removes code blocks, URLs and log-like lines, then collapses whitespace.
  // Idempotent.
  std::string clean(std::string_view text) const;

 private:
  std::string clean_once(std::string_view text) const;

  std::vector<std::regex> log_lines_;
};

std::string clean_text(std::string_view text);

struct FilterOptions {
  bool require_addressed = false;  // re-apply the status/resolution filter on raw exports
  bool drop_changed_after_sp = true;
};

struct FilterResult {
  std::vector<Task> kept;
  std::vector<RejectRecord> dropped;
};

FilterResult filter_with_reasons(const std::vector<Task>& tasks, const ScaleDef& scale,
                                 const FilterOptions& options = {});

// Keeps tasks with a non-empty cleaned title and description and an SP on the
// scale. Order-preserving.
std::vector<Task> filter_valid(const std::vector<Task>& tasks, const ScaleDef& scale);

// First floor(ratio * n) tasks train, the rest test. n < 5 -> InsufficientData.
SplitDataset chronological_split(const ProjectDataset& dataset, double ratio = 0.8);

enum class SizeLabel { Small, Mid, Large };

const char* to_string(SizeLabel label);
SizeLabel parse_size_label(std::string_view text);

struct SizeGrouping {
  std::size_t small_max = 500;
  std::size_t mid_max = 2000;
  std::map<std::string, SizeLabel> overrides;

  // Thresholds plus the two documented exceptions (Core Server, DotNetNuke Platform).
  static SizeGrouping defaults();

  SizeLabel assign(const std::string& project_id, std::size_t task_count) const;
};

inline SizeLabel assign_size_group(const std::string& project_id, std::size_t task_count,
                                   const SizeGrouping& groups) {
  return groups.assign(project_id, task_count);
}

struct IngestOptions {
  FilterOptions filter;
  std::vector<std::string> extra_log_patterns;
};

struct IngestResult {
  ProjectDataset corpus;  // cleaned and filtered
  std::vector<RejectRecord> rejects;
  std::size_t parsed_rows = 0;
};

// parse -> clean title/description -> filter.
IngestResult ingest(std::string_view raw, const std::string& project_id,
                    const ScaleDef& scale, const IngestOptions& options = {});

json task_to_json(const Task& task);
Task task_from_json(const json& j);
json reject_to_json(const RejectRecord& reject);

void write_tasks(const std::filesystem::path& path, const std::vector<Task>& tasks);
std::vector<Task> read_tasks(const std::filesystem::path& path);

}  // namespace sprag
