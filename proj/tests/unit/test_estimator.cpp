#include <doctest.h>

#include <unistd.h>

#include "estimator.hpp"
#include "fileio.hpp"
#include "support.hpp"

using namespace sprag;
using sprag::test::error_of;
using sprag::test::make_task;

namespace {

const std::string kModel = "hash-test";

// Median stub that fails on tasks titled POISON.
class PoisonBackend final : public ChatBackend {
 public:
  std::string complete(const PromptBundle& prompt, const GenerationConfig& config) override {
    if (prompt.user.find("### New Issue to Estimate:\nTitle: POISON") != std::string::npos) {
      fail(ErrorCode::Generation, "poisoned task");
    }
    return stub_.complete(prompt, config);
  }

 private:
  MedianStubBackend stub_;
};

std::shared_ptr<Embedder> hash_embedder() {
  return std::make_shared<Embedder>(std::make_shared<HashEmbedBackend>(64), std::make_shared<EmbeddingCache>());
}

Pipeline stub_pipeline(std::shared_ptr<ChatBackend> backend = std::make_shared<MedianStubBackend>(),
                       std::size_t parallelism = 2) {
  RetryPolicy policy;
  policy.initial_backoff = std::chrono::milliseconds(0);
  return Pipeline(hash_embedder(), std::make_shared<Generator>(std::move(backend), policy), parallelism);
}

EstimationConfig config_k(std::size_t k) {
  EstimationConfig c;
  c.embedding_model = kModel;
  c.top_k = k;
  return c;
}

std::vector<Task> train_with(const std::vector<double>& sps) {
  std::vector<Task> out;
  for (std::size_t i = 0; i < sps.size(); ++i) {
    out.push_back(make_task("T-" + std::to_string(i + 1), "reference " + std::to_string(i),
                            "some words " + std::to_string(i * 7), sps[i], static_cast<std::int64_t>(i)));
  }
  return out;
}

SplitDataset toy_split(std::size_t n_test) {
  const std::vector<std::string> words = {"login", "crash", "upload", "report", "cache", "timeout", "ui", "api"};
  std::vector<Task> all;
  const auto& deck = ScaleDef::fibonacci().values();
  for (std::size_t i = 0; i < 12 + n_test; ++i) {
    all.push_back(make_task("Y-" + std::to_string(i + 1), words[i % words.size()] + " issue",
                            words[(i * 3) % words.size()] + " " + words[(i * 5 + 1) % words.size()],
                            deck[2 + (i * 5) % 6], static_cast<std::int64_t>(i) * 1000));
  }
  SplitDataset split;
  split.train.assign(all.begin(), all.begin() + 12);
  split.test.assign(all.begin() + 12, all.end());
  return split;
}

std::vector<json> records_json(const ProjectRun& run) {
  std::vector<json> out;
  for (const auto& r : run.records) out.push_back(record_to_json(r));
  return out;
}

}  // namespace

TEST_SUITE("estimator") {
  TEST_CASE("median stub over retrieved story points") {
    auto pipeline = stub_pipeline();
    const auto index = build_index(train_with({8, 3, 1}), pipeline.embedder(), kModel);
    const auto task = make_task("N-1", "new", "work", 5.0, 99);
    const auto rec = estimate_task(task, index, config_k(3), pipeline);
    CHECK(rec.final_sp == 3);
    CHECK(rec.resolution == Resolution::Parsed);
    CHECK(rec.evidence.size() == 3);
    CHECK(rec.truth == 5.0);
    CHECK(rec.abs_error == 2.0);
    CHECK(rec.prompt.user.rfind("Below are three similar issues", 0) == 0);

    const auto pair_index = build_index(train_with({5, 5}), pipeline.embedder(), kModel);
    CHECK(estimate_task(task, pair_index, config_k(3), pipeline).final_sp == 5);
  }

  TEST_CASE("evidence is ordered by similarity and the count word uses the effective k") {
    auto pipeline = stub_pipeline();
    const auto index = build_index(train_with({1, 2, 3}), pipeline.embedder(), kModel);
    const auto rec = estimate_task(make_task("", "reference 2", "some words 14", std::nullopt, 0), index,
                                   config_k(4), pipeline);
    REQUIRE(rec.retrieved.size() == 3);
    CHECK(rec.retrieved[0].issue_key == "T-3");
    for (std::size_t i = 1; i < rec.retrieved.size(); ++i) {
      CHECK(rec.retrieved[i - 1].similarity >= rec.retrieved[i].similarity);
    }
    CHECK(rec.prompt.user.rfind("Below are three similar issues", 0) == 0);
    CHECK_FALSE(rec.truth.has_value());
  }

  TEST_CASE("unparseable reply is regenerated once") {
    auto backend = std::make_shared<ScriptedBackend>(
        std::vector<ScriptedBackend::Step>{{"hmm", {}}, {"Estimated Story Point: 8", {}}});
    auto pipeline = stub_pipeline(backend);
    const auto index = build_index(train_with({1, 1, 1}), pipeline.embedder(), kModel);
    const auto rec = estimate_task(make_task("N-1", "x", "y", 8.0, 0), index, config_k(3), pipeline);
    CHECK(rec.resolution == Resolution::Regenerated);
    CHECK(rec.final_sp == 8);
    CHECK(rec.attempts == 2);
  }

  TEST_CASE("two unparseable replies fall back to the evidence median") {
    auto backend = std::make_shared<ScriptedBackend>(std::vector<ScriptedBackend::Step>{{"no idea", {}}});
    auto pipeline = stub_pipeline(backend);
    const auto index = build_index(train_with({13, 2, 5, 8}), pipeline.embedder(), kModel);
    const auto rec = estimate_task(make_task("N-1", "x", "y", 8.0, 0), index, config_k(4), pipeline);
    CHECK(rec.resolution == Resolution::EvidenceMedian);
    CHECK(rec.final_sp == 5);
    CHECK(backend->calls() == 2);
  }

  TEST_CASE("errors carry the issue key") {
    auto backend = std::make_shared<ScriptedBackend>(std::vector<ScriptedBackend::Step>{{"nope", ErrorCode::Generation}});
    auto pipeline = stub_pipeline(backend);
    const auto index = build_index(train_with({1, 2, 3}), pipeline.embedder(), kModel);
    try {
      estimate_task(make_task("BAD-7", "x", "y", 1.0, 0), index, config_k(3), pipeline);
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Generation);
      CHECK(std::string(e.what()).find("BAD-7") != std::string::npos);
    }
    EstimationConfig wrong = config_k(3);
    wrong.embedding_model = "other";
    CHECK(error_of([&] { estimate_task(make_task("A", "x", "y", 1.0, 0), index, wrong, pipeline); }) ==
          ErrorCode::InvalidArgument);
  }

  TEST_CASE("run_project scores every test task deterministically") {
    auto pipeline = stub_pipeline();
    const auto split = toy_split(2);
    const auto index = build_index(split.train, pipeline.embedder(), kModel);
    const auto first = run_project(split, index, config_k(3), pipeline);
    CHECK(first.records.size() == 2);
    CHECK(first.valid);
    REQUIRE(first.score.has_value());
    CHECK(first.score->n == 2);
    CHECK(first.score->method == "RAG-" + kModel);

    auto other = stub_pipeline(std::make_shared<MedianStubBackend>(), 1);
    const auto second = run_project(split, index, config_k(3), other);
    CHECK(records_json(first) == records_json(second));
    CHECK(first.score->mae == second.score->mae);

    SplitDataset empty = split;
    empty.test.clear();
    CHECK(error_of([&] { run_project(empty, index, config_k(3), pipeline); }) == ErrorCode::InsufficientData);
  }

  TEST_CASE("more than 10% failed tasks mark the run invalid") {
    auto split = toy_split(10);
    auto pipeline = stub_pipeline(std::make_shared<PoisonBackend>());
    const auto index = build_index(split.train, pipeline.embedder(), kModel);

    split.test[3].title = "POISON";
    auto one_bad = run_project(split, index, config_k(3), pipeline);
    CHECK(one_bad.failures.size() == 1);
    CHECK(one_bad.valid);

    split.test[6].title = "POISON";
    auto two_bad = run_project(split, index, config_k(3), pipeline);
    CHECK(two_bad.failures.size() == 2);
    CHECK_FALSE(two_bad.valid);
    CHECK(two_bad.failures[0].issue_key == split.test[3].issue_key);
    CHECK(two_bad.failures[0].code == ErrorCode::Generation);
  }

  TEST_CASE("method names per embedding model") {
    CHECK(method_for_model("BAAI/bge-large-en-v1.5") == "RAG-BAAI");
    CHECK(method_for_model("sentence-transformers/all-mpnet-base-v2") == "RAG-SBERT");
    CHECK(method_for_model("x") == "RAG-x");
  }

  TEST_CASE("grid parsing and cell order") {
    const Grid full;
    const auto cells = full.cells();
    CHECK(cells.size() == 12);
    CHECK(cells.front().key() == "2-0");
    CHECK(cells[1].key() == "2-0.1");
    CHECK(cells.back().key() == "4-0.3");

    const std::vector<std::string> tokens = {"k=3", "temp=0"};
    const auto one = parse_grid(tokens).cells();
    REQUIRE(one.size() == 1);
    CHECK(one[0] == GridCell{3, 0.0});

    const std::vector<std::string> lists = {"top_k=4,2", "t=0.2"};
    CHECK(parse_grid(lists).cells().size() == 2);
    const std::vector<std::string> junk = {"size=3"};
    CHECK(error_of([&] { parse_grid(junk); }).has_value());
  }

  TEST_CASE("results lock excludes a second holder and takes over stale locks") {
    sprag::test::TempDir dir;
    {
      ResultsLock lock(dir.path());
      CHECK(std::filesystem::exists(dir / ".lock"));
      CHECK(error_of([&] { ResultsLock again(dir.path()); }) == ErrorCode::Locked);
    }
    CHECK_FALSE(std::filesystem::exists(dir / ".lock"));
    sprag::test::write_text(dir / ".lock", "999999999");
    ResultsLock taken(dir.path());
    CHECK(read_file(dir / ".lock") == std::to_string(::getpid()));
  }

  TEST_CASE("sweep persists cells and resumes") {
    sprag::test::TempDir dir;
    ResultsStore store(dir / "results");
    auto pipeline = stub_pipeline();
    SweepRequest request;
    request.project_id = "Toy Project";
    request.split = toy_split(4);
    request.corpus_size = 16;
    request.base = config_k(3);
    request.grid.top_k = {2, 3};
    request.grid.temperature = {0.0, 0.1};

    const auto first = sweep(request, pipeline, store);
    REQUIRE(first.size() == 4);
    for (const auto& c : first) {
      CHECK(c.status == CellStatus::Completed);
      CHECK(std::filesystem::exists(c.dir / "records.jsonl"));
      CHECK(std::filesystem::exists(c.dir / "score.json"));
      CHECK(std::filesystem::exists(c.dir / "manifest.json"));
    }
    CHECK(store.cell_dir("Toy Project", kModel, GridCell{2, 0.1}) == dir / "results/Toy_Project/hash-test/2-0.1");
    const auto records = read_file(first[0].dir / "records.jsonl");

    const auto second = sweep(request, pipeline, store);
    for (const auto& c : second) CHECK(c.status == CellStatus::Skipped);
    CHECK(read_file(first[0].dir / "records.jsonl") == records);

    const auto scores = store.completed_scores();
    REQUIRE(scores.size() == 4);
    CHECK(scores[0].project_id == "Toy Project");
    CHECK(scores[0].corpus_size == 16);

    request.split.test.back().story_point = 89.0;
    const auto changed = sweep(request, pipeline, store);
    for (const auto& c : changed) CHECK(c.status == CellStatus::Completed);
  }

  TEST_CASE("a failing cell is recorded and the sweep continues") {
    sprag::test::TempDir dir;
    ResultsStore store(dir / "results");
    auto pipeline = stub_pipeline();
    SweepRequest request;
    request.project_id = "P";
    request.split = toy_split(2);
    request.base = config_k(3);
    request.grid.top_k = {0, 3};
    request.grid.temperature = {0.0};
    const auto out = sweep(request, pipeline, store);
    REQUIRE(out.size() == 2);
    CHECK(out[0].status != CellStatus::Completed);
    CHECK(out[1].status == CellStatus::Completed);
    CHECK(store.completed_scores().size() == 1);
  }

  TEST_CASE("best config: lowest mean MAE, ties to smaller k then smaller t") {
    Grid grid;
    grid.top_k = {2, 3};
    grid.temperature = {0.0, 0.1};
    std::vector<SweepScore> scores;
    auto add = [&](const std::string& project, GridCell cell, double mae_value) {
      SweepScore s;
      s.project_id = project;
      s.embedding_model = "m";
      s.cell = cell;
      s.score = ProjectScore{project, "RAG-m", mae_value, mae_value, 10};
      scores.push_back(s);
    };
    for (const auto* p : {"a", "b"}) {
      add(p, {2, 0.0}, 2.0);
      add(p, {2, 0.1}, 1.5);
      add(p, {3, 0.0}, 1.5);
      add(p, {3, 0.1}, 1.7);
    }
    add("c", {2, 0.0}, 1.0);
    add("c", {2, 0.1}, 1.0);
    add("c", {3, 0.0}, 1.0);
    add("c", {3, 0.1}, 0.5);
    const ProjectGrouping grouping = [](const std::string& p) { return p == "c" ? SizeLabel::Large : SizeLabel::Small; };

    const auto best = select_best_config(scores, grouping, grid);
    const auto& small = best.at("m").at(SizeLabel::Small);
    CHECK(small.cell == GridCell{2, 0.1});
    CHECK(small.mean_mae == 1.5);
    CHECK(small.projects == 2);
    CHECK(best.at("m").at(SizeLabel::Large).cell == GridCell{3, 0.1});

    CHECK(best_config_from_json(best_config_to_json(best)).at("m").at(SizeLabel::Small).cell == small.cell);

    scores.pop_back();
    try {
      select_best_config(scores, grouping, grid);
      FAIL("expected incomplete grid");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::IncompleteGrid);
      CHECK(std::string(e.what()).find("3-0.1") != std::string::npos);
    }
  }
}
