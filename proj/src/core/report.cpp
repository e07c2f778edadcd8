#include "report.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "csv.hpp"
#include "error.hpp"

namespace sprag {

namespace {

constexpr SizeLabel kGroups[] = {SizeLabel::Small, SizeLabel::Mid, SizeLabel::Large};

std::vector<std::string> rag_methods(const ScoreTable& table) {
  std::vector<std::string> out;
  for (const auto& m : table.methods()) {
    if (m.rfind("RAG-", 0) == 0) out.push_back(m);
  }
  return out;
}

std::vector<std::string> baseline_methods(const ScoreTable& table) {
  const auto present = table.methods();
  std::vector<std::string> out;
  for (const char* b : kBaselineMethods) {
    if (std::find(present.begin(), present.end(), b) != present.end()) out.emplace_back(b);
  }
  return out;
}

// Projects (table order) scored under both methods, optionally restricted to a group.
PairedSamples paired(const ScoreTable& table, const std::string& x, const std::string& y,
                     const ProjectGrouping& grouping, const SizeLabel* group) {
  PairedSamples s;
  for (const auto& p : table.projects()) {
    if (!table.has(p, x) || !table.has(p, y)) continue;
    if (group && grouping(p) != *group) continue;
    s.labels.push_back(p);
    s.x.push_back(table.get(p, x).mae);
    s.y.push_back(table.get(p, y).mae);
  }
  return s;
}

StatsRow run_wilcoxon(const PairedSamples& s, Alternative alt, StatsRow row) {
  row.result.alternative = alt;
  row.result.n_effective = s.x.size();
  try {
    row.result = wilcoxon_signed_rank(s, alt);
  } catch (const Error& e) {
    row.ok = false;
    row.note = e.what();
  }
  return row;
}

std::string fmt4(double v) { return fmt::format("{:.4f}", v); }

std::string p_cell(const StatsRow& r) { return r.ok ? fmt4(r.result.p_value) : ""; }
std::string stat_cell(const StatsRow& r) { return r.ok ? fmt4(r.result.statistic) : ""; }

}  // namespace

std::vector<StatsRow> wilcoxon_rows(const ScoreTable& table, const ProjectGrouping& grouping) {
  std::vector<StatsRow> rows;
  const auto rags = rag_methods(table);
  const auto baselines = baseline_methods(table);
  for (const auto& rag : rags) {
    for (const auto& group : kGroups) {
      for (const auto& base : baselines) {
        StatsRow row{rag, base, to_string(group), {}, true, {}};
        rows.push_back(run_wilcoxon(paired(table, rag, base, grouping, &group), Alternative::Less, row));
      }
    }
  }
  for (std::size_t i = 0; i < rags.size(); ++i) {
    for (std::size_t j = i + 1; j < rags.size(); ++j) {
      for (const auto& group : kGroups) {
        StatsRow row{rags[i], rags[j], to_string(group), {}, true, {}};
        rows.push_back(run_wilcoxon(paired(table, rags[i], rags[j], grouping, &group), Alternative::TwoSided, row));
      }
      StatsRow row{rags[i], rags[j], "All", {}, true, {}};
      rows.push_back(run_wilcoxon(paired(table, rags[i], rags[j], grouping, nullptr), Alternative::TwoSided, row));
    }
  }
  return rows;
}

std::vector<StatsRow> kruskal_rows(const ScoreTable& table, const ProjectGrouping& grouping) {
  std::vector<StatsRow> rows;
  for (const auto& rag : rag_methods(table)) {
    std::vector<std::vector<double>> groups;
    for (const auto& group : kGroups) {
      std::vector<double> values;
      for (const auto& s : table.scores_for(rag)) {
        if (grouping(s.project_id) == group) values.push_back(s.mae);
      }
      if (!values.empty()) groups.push_back(std::move(values));
    }
    StatsRow row{rag, "", "Small/Mid/Large", {}, true, {}};
    row.result.method = TestMethod::KruskalWallis;
    try {
      row.result = kruskal_wallis(groups);
    } catch (const Error& e) {
      row.ok = false;
      row.note = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

json stats_rows_to_json(const std::vector<StatsRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json j = {{"x_method", r.x_method},
              {"y_method", r.y_method},
              {"group", r.group},
              {"test", to_string(r.result.method)},
              {"alternative", to_string(r.result.alternative)},
              {"ok", r.ok}};
    if (r.ok) {
      j["statistic"] = r.result.statistic;
      j["p_value"] = r.result.p_value;
      j["n_effective"] = r.result.n_effective;
      j["exact"] = r.result.exact;
    } else {
      j["note"] = r.note;
    }
    out.push_back(std::move(j));
  }
  return out;
}

ReportBundle build_report(const ScoreTable& table, const ProjectGrouping& grouping, const std::string& source) {
  if (table.projects().empty()) fail(ErrorCode::InsufficientData, "score table is empty");
  const auto rags = rag_methods(table);
  const auto baselines = baseline_methods(table);
  const auto methods = table.methods();
  const auto projects = table.projects();

  ReportBundle bundle;
  std::string md;
  md += "# Story-point estimation report\n\n";
  md += fmt::format("Source: {}\n\n", source);

  // per-project
  bundle.files.emplace_back("per_project.csv", table.to_csv());
  md += "## Per-project MAE\n\n| Project | Group |";
  for (const auto& m : methods) md += fmt::format(" {} |", m);
  md += "\n|---|---|";
  for (std::size_t i = 0; i < methods.size(); ++i) md += "---|";
  md += "\n";
  for (const auto& p : projects) {
    md += fmt::format("| {} | {} |", p, to_string(grouping(p)));
    for (const auto& m : methods) md += table.has(p, m) ? fmt::format(" {:.2f} |", table.get(p, m).mae) : " |";
    md += "\n";
  }

  // group summaries
  std::string gs = "method,group,projects,mean_mae,sd_mae,sd_defined\n";
  md += "\n## Group summaries (MAE)\n\n| Method | Group | Projects | Mean | SD |\n|---|---|---|---|---|\n";
  for (const auto& m : methods) {
    const auto scores = table.scores_for(m);
    if (scores.empty()) continue;
    for (const auto& g : group_summary(scores, grouping)) {
      gs += csv::join_row({m, to_string(g.group), std::to_string(g.project_count), fmt4(g.mean_mae),
                           fmt4(g.sd_mae), g.sd_defined ? "true" : "false"});
      gs += "\n";
      md += fmt::format("| {} | {} | {} | {:.2f} | {} |\n", m, to_string(g.group), g.project_count, g.mean_mae,
                        g.sd_defined ? fmt::format("{:.2f}", g.sd_mae) : "n/a");
    }
  }
  bundle.files.emplace_back("group_summary.csv", gs);

  // win counts over projects that carry every compared method
  std::string wc = "rag_method,baseline,group,wins,projects\n";
  if (!rags.empty() && !baselines.empty()) {
    ScoreTable complete;
    for (const auto& p : projects) {
      bool all = true;
      for (const auto& m : rags) all = all && table.has(p, m);
      for (const auto& m : baselines) all = all && table.has(p, m);
      if (!all) continue;
      for (const auto& m : methods) {
        if (table.has(p, m)) complete.set(table.get(p, m));
      }
    }
    if (!complete.projects().empty()) {
      md += "\n## Win counts (RAG MAE strictly lower)\n\n| Method | Group |";
      for (const auto& b : baselines) md += fmt::format(" {} |", b);
      md += "\n|---|---|";
      for (std::size_t i = 0; i < baselines.size(); ++i) md += "---|";
      md += "\n";
      const auto counts = win_counts(complete, rags, baselines, grouping);
      std::string line;
      std::string current;
      for (const auto& c : counts) {
        wc += csv::join_row({c.rag_method, c.baseline, to_string(c.group), std::to_string(c.wins),
                             std::to_string(c.projects)});
        wc += "\n";
        const std::string key = c.rag_method + "|" + to_string(c.group);
        if (key != current) {
          if (!line.empty()) md += line + "\n";
          current = key;
          line = fmt::format("| {} | {} ({}) |", c.rag_method, to_string(c.group), c.projects);
        }
        line += fmt::format(" {} |", c.wins);
      }
      if (!line.empty()) md += line + "\n";
    }
  }
  bundle.files.emplace_back("win_counts.csv", wc);

  // Kruskal-Wallis
  std::string kw = "method,grouping,statistic,p_value,n,note\n";
  md += "\n## Kruskal-Wallis across size groups\n\n| Method | H | p |\n|---|---|---|\n";
  for (const auto& r : kruskal_rows(table, grouping)) {
    kw += csv::join_row({r.x_method, r.group, stat_cell(r), p_cell(r), std::to_string(r.result.n_effective), r.note});
    kw += "\n";
    md += r.ok ? fmt::format("| {} | {:.2f} | {:.2f} |\n", r.x_method, r.result.statistic, r.result.p_value)
               : fmt::format("| {} | n/a | n/a ({}) |\n", r.x_method, r.note);
  }
  bundle.files.emplace_back("stats_kruskal.csv", kw);

  // Wilcoxon
  std::string wx = "x_method,y_method,group,alternative,test,statistic,n,p_value,note\n";
  md += "\n## Wilcoxon signed-rank\n\n| X | Y | Group | Alternative | W | n | p |\n|---|---|---|---|---|---|---|\n";
  for (const auto& r : wilcoxon_rows(table, grouping)) {
    wx += csv::join_row({r.x_method, r.y_method, r.group, to_string(r.result.alternative),
                         r.ok ? to_string(r.result.method) : "", stat_cell(r), std::to_string(r.result.n_effective),
                         p_cell(r), r.note});
    wx += "\n";
    md += fmt::format("| {} | {} | {} | {} | {} | {} | {} |\n", r.x_method, r.y_method, r.group,
                      to_string(r.result.alternative), r.ok ? fmt::format("{:g}", r.result.statistic) : "n/a",
                      r.result.n_effective, r.ok ? fmt4(r.result.p_value) : "n/a (" + r.note + ")");
  }
  bundle.files.emplace_back("stats_wilcoxon.csv", wx);

  bundle.files.emplace_back("summary.md", md);
  return bundle;
}

void write_report(const ReportBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, content] : bundle.files) write_file_atomic(dir / name, content);
}

ScoreTable table_from_results(std::span<const SweepScore> scores, const BestConfigTable& best,
                              const ProjectGrouping& grouping, const ScoreTable& fixture) {
  if (scores.empty()) fail(ErrorCode::NotFound, "results directory holds no completed sweep cells");
  ScoreTable table;
  std::set<std::string> projects;
  for (const auto& s : scores) {
    const auto model_it = best.find(s.embedding_model);
    if (model_it == best.end()) continue;
    const auto group_it = model_it->second.find(grouping(s.project_id));
    if (group_it == model_it->second.end() || group_it->second.cell != s.cell) continue;
    ProjectScore row = s.score;
    row.project_id = s.project_id;
    row.method = method_for_model(s.embedding_model);
    table.set(row);
    projects.insert(s.project_id);
  }
  for (const auto& p : fixture.projects()) {
    if (!projects.count(p)) continue;
    for (const char* b : kBaselineMethods) {
      if (fixture.has(p, b)) table.set(fixture.get(p, b));
    }
  }
  return table;
}

}  // namespace sprag
