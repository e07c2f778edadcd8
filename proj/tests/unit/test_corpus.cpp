#include <doctest.h>

#include <random>

#include "corpus.hpp"
#include "csv.hpp"
#include "support.hpp"

using namespace sprag;
using sprag::test::error_of;
using sprag::test::make_task;

TEST_SUITE("corpus") {
  TEST_CASE("parse_dataset keeps well-formed rows in creation order") {
    const std::string raw =
        "issuekey,created,title,description,storypoint\n"
        "A-3,2020-01-03,Third,c,5\n"
        "A-1,2020-01-01,First,a,3\n"
        "A-2,2020-01-02,Second,b,8\n";
    const auto result = parse_dataset(raw, "A");
    REQUIRE(result.dataset.tasks.size() == 3);
    CHECK(result.rejects.empty());
    CHECK(result.dataset.tasks[0].issue_key == "A-1");
    CHECK(result.dataset.tasks[1].issue_key == "A-2");
    CHECK(result.dataset.tasks[2].issue_key == "A-3");
    CHECK(result.dataset.tasks[2].story_point == 5.0);
    CHECK(result.dataset.tasks[0].project_id == "A");
  }

  TEST_CASE("empty story point cell is kept as SP-missing") {
    const auto result = parse_dataset("issuekey,created,title,description,storypoint\nA-1,2020-01-01,T,D,\n", "A");
    REQUIRE(result.dataset.tasks.size() == 1);
    CHECK_FALSE(result.dataset.tasks[0].story_point.has_value());
  }

  TEST_CASE("equal timestamps order by issue key") {
    const auto result = parse_dataset(
        "issuekey,created,title,description,storypoint\n"
        "X-2,2020-05-05T10:00:00Z,b,b,1\n"
        "X-1,2020-05-05T10:00:00Z,a,a,1\n",
        "X");
    REQUIRE(result.dataset.tasks.size() == 2);
    CHECK(result.dataset.tasks[0].issue_key == "X-1");
    CHECK(result.dataset.tasks[1].issue_key == "X-2");
  }

  TEST_CASE("header is case-insensitive and column order is free") {
    const auto result = parse_dataset("StoryPoint,Title,IssueKey,Description,Created\n3,T,K-1,D,2021-02-03\n", "K");
    REQUIRE(result.dataset.tasks.size() == 1);
    CHECK(result.dataset.tasks[0].issue_key == "K-1");
    CHECK(result.dataset.tasks[0].story_point == 3.0);
  }

  TEST_CASE("missing column is a schema error naming the column") {
    try {
      parse_dataset("issuekey,created,title,description\nA-1,2020-01-01,T,D\n", "A");
      FAIL("expected schema error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Schema);
      CHECK(std::string(e.what()).find("storypoint") != std::string::npos);
    }
    CHECK(error_of([] { parse_dataset("", "A"); }) == ErrorCode::Schema);
  }

  TEST_CASE("bad rows are rejected with their row index") {
    const auto result = parse_dataset(
        "issuekey,created,title,description,storypoint\n"
        "A-1,2020-01-01,T,D,3\n"
        "A-2,not-a-date,T,D,3\n"
        "A-3,2020-01-03,T,D,three\n"
        "A-4,2020-01-04,T\n",
        "A");
    CHECK(result.dataset.tasks.size() == 1);
    REQUIRE(result.rejects.size() == 3);
    CHECK(result.rejects[0].row == 2);
    CHECK(result.rejects[0].issue_key == "A-2");
    CHECK(result.rejects[0].reason.find("timestamp") != std::string::npos);
    CHECK(result.rejects[1].row == 3);
    CHECK(result.rejects[2].row == 4);
  }

  TEST_CASE("clean_text removes URLs, code markup and logs") {
    CHECK(clean_text("see https://x.io/a for details") == "see for details");
    CHECK(clean_text("fix {code}int x=1;{code} bug") == "fix bug");
    CHECK(clean_text("plain description") == "plain description");
    CHECK(clean_text("") == "");
  }

  TEST_CASE("clean_text is idempotent") {
    const std::vector<std::string> pieces = {"word", " ", "\n", "http://a.b/c?d=1", "{code}", "{noformat}",
                                             "```", "x=1;", "\t", "ERROR something failed",
                                             "at org.foo.Bar(Bar.java:12)", "2020-01-01 12:00:00 INFO start",
                                             "ünïcode", "www.example.com", "<b>", "Exception"};
    std::mt19937 rng(11);
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
    std::uniform_int_distribution<int> len(0, 20);
    for (int trial = 0; trial < 300; ++trial) {
      std::string text;
      for (int i = len(rng); i > 0; --i) text += pieces[pick(rng)];
      const auto once = clean_text(text);
      CHECK_MESSAGE(clean_text(once) == once, "input: ", text);
    }
  }

  TEST_CASE("filter_valid keeps only on-scale tasks with text") {
    const auto& scale = ScaleDef::fibonacci();
    const std::vector<Task> tasks = {make_task("A-1", "t", "d", 4.0, 1), make_task("A-2", "t", "d", 5.0, 2),
                                     make_task("A-3", "t", "   ", 5.0, 3), make_task("A-4", "t", "d", std::nullopt, 4),
                                     make_task("A-5", "", "d", 3.0, 5)};
    const auto kept = filter_valid(tasks, scale);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].issue_key == "A-2");

    const auto detailed = filter_with_reasons(tasks, scale);
    CHECK(detailed.dropped.size() == 4);
  }

  TEST_CASE("chronological_split uses floor of the ratio") {
    auto dataset_of = [](std::size_t n) {
      ProjectDataset d;
      d.project_id = "P";
      for (std::size_t i = 0; i < n; ++i) {
        d.tasks.push_back(make_task("P-" + std::to_string(i + 1), "t", "d", 1.0, static_cast<std::int64_t>(i)));
      }
      return d;
    };
    auto sizes = [&](std::size_t n) {
      const auto s = chronological_split(dataset_of(n));
      return std::pair{s.train.size(), s.test.size()};
    };
    CHECK(sizes(10) == std::pair<std::size_t, std::size_t>{8, 2});
    CHECK(sizes(811) == std::pair<std::size_t, std::size_t>{648, 163});
    CHECK(sizes(5) == std::pair<std::size_t, std::size_t>{4, 1});
    CHECK(error_of([&] { chronological_split(dataset_of(4)); }) == ErrorCode::InsufficientData);

    const auto split = chronological_split(dataset_of(10));
    CHECK(split.train.back().issue_key == "P-8");
    CHECK(split.test.front().issue_key == "P-9");
  }

  TEST_CASE("size groups follow thresholds and overrides") {
    const auto groups = SizeGrouping::defaults();
    CHECK(assign_size_group("Confluence Server", 456, groups) == SizeLabel::Small);
    CHECK(assign_size_group("Core Server", 519, groups) == SizeLabel::Small);
    CHECK(assign_size_group("Data Management", 5381, groups) == SizeLabel::Large);
    CHECK(assign_size_group("Anything", 500, groups) == SizeLabel::Small);
    CHECK(assign_size_group("Anything", 501, groups) == SizeLabel::Mid);
    CHECK(assign_size_group("Anything", 2000, groups) == SizeLabel::Mid);
    CHECK(assign_size_group("Anything", 2001, groups) == SizeLabel::Large);
    CHECK(parse_size_label("mid") == SizeLabel::Mid);
    CHECK(error_of([] { parse_size_label("huge"); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("serialized dataset parses back to the same dataset") {
    std::mt19937 rng(5);
    const std::vector<std::string> words = {"alpha", "be,ta", "ga\"mma", "del\nta", "eps\r\nilon", " ", "ζ", ""};
    const auto& deck = ScaleDef::fibonacci().values();
    for (int trial = 0; trial < 50; ++trial) {
      ProjectDataset d;
      d.project_id = "R";
      const int n = std::uniform_int_distribution<int>(0, 12)(rng);
      for (int i = 0; i < n; ++i) {
        std::string title, desc;
        for (int w = 0; w < 4; ++w) title += words[rng() % words.size()];
        for (int w = 0; w < 6; ++w) desc += words[rng() % words.size()];
        std::optional<double> sp;
        if (rng() % 5) sp = deck[rng() % deck.size()];
        const std::int64_t created = 1'500'000'000'000 + static_cast<std::int64_t>(rng() % 1000) * 1001;
        d.tasks.push_back(make_task("R-" + std::to_string(i), title, desc, sp, created));
        d.tasks.back().project_id = "R";
      }
      std::stable_sort(d.tasks.begin(), d.tasks.end(), chronologically_before);
      const auto back = parse_dataset(serialize_dataset_csv(d), "R");
      CHECK(back.rejects.empty());
      CHECK(back.dataset == d);
    }
  }

  TEST_CASE("csv handles quoting and rejects an open quote") {
    const auto records = csv::parse("a,\"b,c\",\"d\"\"e\"\r\n\"multi\nline\",x,y\n");
    REQUIRE(records.size() == 2);
    CHECK(records[0].fields == std::vector<std::string>{"a", "b,c", "d\"e"});
    CHECK(records[1].fields[0] == "multi\nline");
    CHECK(records[1].line == 2);
    CHECK(error_of([] { csv::parse("a,\"open\n"); }) == ErrorCode::Row);
    CHECK(csv::escape("plain") == "plain");
    CHECK(csv::escape("a\"b") == "\"a\"\"b\"");
  }

  TEST_CASE("ingest cleans then filters") {
    const std::string raw =
        "issuekey,created,title,description,storypoint\n"
        "A-1,2020-01-01,Title,see https://x.io only,3\n"
        "A-2,2020-01-02,Title,https://x.io,3\n"
        "A-3,2020-01-03,Title,desc,4\n";
    const auto result = ingest(raw, "A", ScaleDef::fibonacci());
    CHECK(result.parsed_rows == 3);
    REQUIRE(result.corpus.tasks.size() == 1);
    CHECK(result.corpus.tasks[0].description == "see only");
    CHECK(result.rejects.size() == 2);
  }

  TEST_CASE("task json round trip") {
    auto t = make_task("A-9", "T", "D", 0.5, 1'600'000'000'123);
    t.status = "Closed";
    t.changed_after_sp = true;
    CHECK(task_from_json(task_to_json(t)) == t);
  }
}
