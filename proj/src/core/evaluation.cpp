#include "evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "csv.hpp"
#include "error.hpp"

namespace sprag {
namespace {

std::vector<double> abs_errors(std::span<const double> preds, std::span<const double> truths) {
  if (preds.size() != truths.size()) {
    fail(ErrorCode::LengthMismatch,
         fmt::format("{} predictions vs {} ground-truth values", preds.size(), truths.size()));
  }
  if (preds.empty()) fail(ErrorCode::InsufficientData, "no predictions to score");
  std::vector<double> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) out[i] = std::abs(preds[i] - truths[i]);
  return out;
}

double parse_double(std::string_view s, std::string_view what) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorCode::Schema, fmt::format("bad {} value '{}'", what, s));
  }
  return v;
}

}  // namespace

double mae(std::span<const double> preds, std::span<const double> truths) {
  const auto errors = abs_errors(preds, truths);
  double sum = 0;
  for (double e : errors) sum += e;
  return sum / static_cast<double>(errors.size());
}

double mdae(std::span<const double> preds, std::span<const double> truths) {
  auto errors = abs_errors(preds, truths);
  std::sort(errors.begin(), errors.end());
  const std::size_t n = errors.size();
  if (n % 2 == 1) return errors[n / 2];
  return (errors[n / 2 - 1] + errors[n / 2]) / 2.0;
}

std::vector<GroupSummary> group_summary(std::span<const ProjectScore> scores, const ProjectGrouping& grouping,
                                        std::span<const SizeLabel> required) {
  if (scores.empty()) fail(ErrorCode::InsufficientData, "no project scores to summarize");
  std::map<SizeLabel, std::vector<double>> by_group;
  for (const auto& s : scores) by_group[grouping(s.project_id)].push_back(s.mae);
  for (auto label : required) {
    if (by_group[label].empty()) fail(ErrorCode::InsufficientData, fmt::format("size group {} is empty", to_string(label)));
  }

  std::vector<GroupSummary> out;
  for (auto label : {SizeLabel::Small, SizeLabel::Mid, SizeLabel::Large}) {
    const auto& values = by_group[label];
    if (values.empty()) continue;
    GroupSummary g;
    g.group = label;
    g.project_count = values.size();
    double sum = 0;
    for (double v : values) sum += v;
    g.mean_mae = sum / static_cast<double>(values.size());
    if (values.size() < 2) {
      g.sd_defined = false;
    } else {
      double ss = 0;
      for (double v : values) ss += (v - g.mean_mae) * (v - g.mean_mae);
      g.sd_mae = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------

ScoreTable ScoreTable::load_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

ScoreTable ScoreTable::parse_csv(std::string_view text) {
  const auto records = csv::parse(text);
  if (records.empty()) fail(ErrorCode::Schema, "score table is empty");
  std::map<std::string, std::size_t> cols;
  for (std::size_t i = 0; i < records[0].fields.size(); ++i) cols[records[0].fields[i]] = i;
  for (const char* name : {"project", "method", "mae", "mdae"}) {
    if (!cols.count(name)) fail(ErrorCode::Schema, fmt::format("score table missing column '{}'", name));
  }
  ScoreTable table;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r].fields;
    if (f.size() != records[0].fields.size()) {
      fail(ErrorCode::Schema, fmt::format("score table line {}: wrong field count", records[r].line));
    }
    ProjectScore s;
    s.project_id = f[cols["project"]];
    s.method = f[cols["method"]];
    s.mae = parse_double(f[cols["mae"]], "mae");
    s.mdae = parse_double(f[cols["mdae"]], "mdae");
    if (auto it = cols.find("n"); it != cols.end() && !f[it->second].empty()) {
      s.n = static_cast<std::size_t>(parse_double(f[it->second], "n"));
    }
    table.set(s);
  }
  return table;
}

std::string ScoreTable::to_csv() const {
  std::string out = "project,method,mae,mdae\n";
  for (const auto& p : projects_) {
    for (const auto& m : methods_) {
      if (!has(p, m)) continue;
      const auto& s = get(p, m);
      out += csv::join_row({p, m, fmt::format("{:.4f}", s.mae), fmt::format("{:.4f}", s.mdae)});
      out += "\n";
    }
  }
  return out;
}

void ScoreTable::set(const ProjectScore& score) {
  if (std::find(projects_.begin(), projects_.end(), score.project_id) == projects_.end()) {
    projects_.push_back(score.project_id);
  }
  if (std::find(methods_.begin(), methods_.end(), score.method) == methods_.end()) {
    methods_.push_back(score.method);
  }
  cells_[{score.project_id, score.method}] = score;
}

bool ScoreTable::has(const std::string& project, const std::string& method) const {
  return cells_.count({project, method}) > 0;
}

const ProjectScore& ScoreTable::get(const std::string& project, const std::string& method) const {
  auto it = cells_.find({project, method});
  if (it == cells_.end()) fail(ErrorCode::NotFound, fmt::format("missing score cell ({}, {})", project, method));
  return it->second;
}

std::vector<std::string> ScoreTable::projects() const { return projects_; }
std::vector<std::string> ScoreTable::methods() const { return methods_; }

std::vector<ProjectScore> ScoreTable::scores_for(const std::string& method) const {
  std::vector<ProjectScore> out;
  for (const auto& p : projects_) {
    if (has(p, method)) out.push_back(get(p, method));
  }
  return out;
}

std::vector<WinCount> win_counts(const ScoreTable& table, std::span<const std::string> rag_methods,
                                 std::span<const std::string> baselines, const ProjectGrouping& grouping) {
  std::vector<WinCount> out;
  const auto projects = table.projects();
  for (const auto& rag : rag_methods) {
    for (auto label : {SizeLabel::Small, SizeLabel::Mid, SizeLabel::Large}) {
      for (const auto& base : baselines) {
        WinCount wc{rag, base, label, 0, 0};
        for (const auto& p : projects) {
          if (grouping(p) != label) continue;
          ++wc.projects;
          if (table.get(p, rag).mae < table.get(p, base).mae) ++wc.wins;
        }
        out.push_back(wc);
      }
    }
  }
  return out;
}

std::map<std::string, std::size_t> load_project_sizes(const std::filesystem::path& path) {
  const auto records = csv::parse(read_file(path));
  if (records.empty()) fail(ErrorCode::Schema, "project size table is empty");
  std::map<std::string, std::size_t> cols;
  for (std::size_t i = 0; i < records[0].fields.size(); ++i) cols[records[0].fields[i]] = i;
  if (!cols.count("project") || !cols.count("tasks")) {
    fail(ErrorCode::Schema, "project size table needs columns 'project' and 'tasks'");
  }
  std::map<std::string, std::size_t> out;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r].fields;
    out[f.at(cols["project"])] = static_cast<std::size_t>(parse_double(f.at(cols["tasks"]), "tasks"));
  }
  return out;
}

ProjectGrouping grouping_from_sizes(std::map<std::string, std::size_t> sizes, SizeGrouping groups) {
  return [sizes = std::move(sizes), groups = std::move(groups)](const std::string& project) {
    auto it = sizes.find(project);
    if (it == sizes.end()) {
      if (auto o = groups.overrides.find(project); o != groups.overrides.end()) return o->second;
      fail(ErrorCode::NotFound, fmt::format("no size known for project '{}'", project));
    }
    return groups.assign(project, it->second);
  };
}

}  // namespace sprag
