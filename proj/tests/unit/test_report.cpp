#include <doctest.h>

#include "report.hpp"
#include "fileio.hpp"
#include "support.hpp"

using namespace sprag;
using sprag::test::error_of;

namespace {

struct Fixture {
  ScoreTable table;
  ProjectGrouping grouping;
};

Fixture load_fixture() {
  const auto root = sprag::test::source_dir();
  return {ScoreTable::load_csv(root / "data/results_table.csv"),
          grouping_from_sizes(load_project_sizes(root / "data/project_sizes.csv"), SizeGrouping::defaults())};
}

const std::string* file_named(const ReportBundle& bundle, const std::string& name) {
  for (const auto& [n, content] : bundle.files) {
    if (n == name) return &content;
  }
  return nullptr;
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("wilcoxon rows cover every baseline and group") {
    const auto f = load_fixture();
    const auto rows = wilcoxon_rows(f.table, f.grouping);
    std::size_t baseline_rows = 0;
    for (const auto& r : rows) {
      if (r.result.alternative == Alternative::Less) ++baseline_rows;
    }
    CHECK(baseline_rows == 24);
    for (const auto& r : rows) {
      if (r.x_method == "RAG-BAAI" && r.y_method == "LHC-SE" && r.group == "Small") {
        CHECK(r.ok);
        CHECK(std::abs(r.result.p_value - 0.7402) <= 0.005);
      }
    }
    const auto kw = kruskal_rows(f.table, f.grouping);
    REQUIRE(kw.size() == 2);
    CHECK(stats_rows_to_json(kw).size() == 2);
  }

  TEST_CASE("fixture report is complete and byte-stable") {
    const auto f = load_fixture();
    const auto a = build_report(f.table, f.grouping, "fixture");
    const auto b = build_report(f.table, f.grouping, "fixture");
    REQUIRE(a.files.size() == b.files.size());
    for (std::size_t i = 0; i < a.files.size(); ++i) CHECK(a.files[i] == b.files[i]);
    for (const auto* name : {"per_project.csv", "group_summary.csv", "win_counts.csv", "stats_kruskal.csv",
                             "stats_wilcoxon.csv", "summary.md"}) {
      CHECK_MESSAGE(file_named(a, name) != nullptr, name);
    }
    const auto* summary = file_named(a, "group_summary.csv");
    REQUIRE(summary);
    CHECK(summary->find("RAG-BAAI,Small,12,1.9883,1.3595,true") != std::string::npos);

    sprag::test::TempDir dir;
    write_report(a, dir / "out");
    CHECK(read_file(dir / "out/summary.md") == *file_named(a, "summary.md"));
  }

  TEST_CASE("table from results uses each group's best cell") {
    std::vector<SweepScore> scores;
    auto add = [&](const std::string& p, GridCell cell, double m) {
      SweepScore s;
      s.project_id = p;
      s.embedding_model = "BAAI/bge-large-en-v1.5";
      s.cell = cell;
      s.score = ProjectScore{p, "RAG-BAAI", m, m / 2, 5};
      scores.push_back(s);
    };
    add("Alloy", {2, 0.0}, 3.0);
    add("Alloy", {3, 0.0}, 1.0);
    BestConfigTable best;
    best["BAAI/bge-large-en-v1.5"][SizeLabel::Small] = BestCell{{3, 0.0}, 1.0, 1};
    const auto f = load_fixture();
    const auto table = table_from_results(scores, best, f.grouping, f.table);
    CHECK(table.get("Alloy", "RAG-BAAI").mae == 1.0);
    CHECK(table.get("Alloy", "LHC-SE").mae == f.table.get("Alloy", "LHC-SE").mae);
    CHECK_FALSE(table.has("Daemon", "LHC-SE"));
    CHECK(error_of([&] { table_from_results({}, best, f.grouping, f.table); }) == ErrorCode::NotFound);
  }
}
