#include <doctest.h>

#include <thread>

#include "engine.hpp"
#include "fileio.hpp"
#include "service.hpp"
#include "support.hpp"

using namespace sprag;
using sprag::test::error_of;

namespace {

RunConfig stub_config(const std::filesystem::path& root) {
  RunConfig c;
  c.data_dir = root / "data";
  c.results_dir = root / "results";
  c.cache_dir = root / "cache";
  c.state_dir = root / "state";
  c.fixture = sprag::test::source_dir() / "data/results_table.csv";
  c.project_sizes = sprag::test::source_dir() / "data/project_sizes.csv";
  c.embedding.stub = true;
  c.generator.stub = true;
  c.parallelism = 2;
  return c;
}

// Engine over the synthetic project, ingested and split.
struct ServiceFixture {
  sprag::test::TempDir dir;
  Engine engine{stub_config(dir.path())};

  ServiceFixture() {
    engine.ingest({sprag::test::source_dir() / "tests/data/synthetic_project.csv"}, std::string("SYN"));
    engine.split("SYN", std::nullopt);
  }
};

HttpReply call(AssistantService& service, const std::string& method, const std::string& path,
               const json& body = nullptr, std::map<std::string, std::string> query = {}) {
  HttpRequest r;
  r.method = method;
  r.path = path;
  r.query = std::move(query);
  if (!body.is_null()) r.body = body.dump();
  return service.handle(r);
}

json body_of(const HttpReply& r) { return json::parse(r.body); }

json decision(double suggested, double final_sp, const std::string& title = "Task") {
  return {{"title", title}, {"description", "d"}, {"suggested", suggested}, {"final", final_sp}};
}

}  // namespace

TEST_SUITE("engine") {
  TEST_CASE("ingest, split and index a project") {
    ServiceFixture f;
    const auto info = f.engine.find_project("SYN");
    REQUIRE(info.has_value());
    CHECK(info->corpus_size == 50);
    CHECK(info->train_size == 40);
    CHECK(info->test_size == 10);
    CHECK(read_jsonl(info->dir / "rejects.jsonl").size() == 4);

    const auto first = f.engine.index("SYN");
    CHECK(first["entries"] == 40);
    CHECK(first["dims"] == 256);
    CHECK(first["backend_calls"].get<int>() > 0);
    CHECK(f.engine.list_projects().size() == 1);
    CHECK(error_of([&] { f.engine.index("nope"); }) == ErrorCode::NotFound);
  }

  TEST_CASE("estimate defaults to k=3, t=0 without a sweep") {
    ServiceFixture f;
    EstimateRequest req;
    req.project_id = "SYN";
    req.title = "crash on save";
    req.description = "editor crashes when saving a file";
    const auto out = f.engine.estimate(req);
    CHECK(out["config"]["top_k"] == 3);
    CHECK(out["config"]["temperature"] == 0.0);
    CHECK(out["config"]["source"] == "default");
    CHECK(out["evidence"].size() == 3);
    CHECK(f.engine.estimate(req) == out);

    req.top_k = 2;
    const auto two = f.engine.estimate(req);
    CHECK(two["evidence"].size() == 2);
    CHECK(two["config"]["source"] == "request");

    req.title = "   ";
    CHECK(error_of([&] { f.engine.estimate(req); }) == ErrorCode::Validation);
  }

  TEST_CASE("estimate of a test-split issue carries its truth") {
    ServiceFixture f;
    const auto out = f.engine.estimate_issue("SYN", "SYN-41", std::nullopt, std::nullopt);
    CHECK(out["issue_key"] == "SYN-41");
    CHECK(out["truth"] == 5.0);
    CHECK(out["suggested"] == 8.0);
    CHECK(error_of([&] { f.engine.estimate_issue("SYN", "SYN-1", std::nullopt, std::nullopt); }) ==
          ErrorCode::NotFound);
  }

  TEST_CASE("sweep, evaluate and report from results") {
    ServiceFixture f;
    CHECK(error_of([&] { f.engine.report(f.dir / "r0", false); }) == ErrorCode::NotFound);
    const std::vector<std::string> tokens = {"k=2,3", "temp=0"};
    const auto swept = f.engine.sweep("SYN", parse_grid(tokens));
    CHECK(swept["cells"].size() == 2);
    const auto evaluated = f.engine.evaluate(std::nullopt);
    CHECK(evaluated["best_config"]["models"]["BAAI/bge-large-en-v1.5"].contains("Small"));

    EstimateRequest req;
    req.project_id = "SYN";
    req.title = "something";
    CHECK(f.engine.estimate(req)["config"]["source"] == "best_config");

    const auto rep = f.engine.report(f.dir / "r1", false);
    CHECK(rep["files"].size() == 6);
    const auto per_project = read_file(f.dir / "r1/per_project.csv");
    CHECK(per_project.find("SYN") != std::string::npos);
  }

  TEST_CASE("stub mode opens no network connections") {
    const auto before = network_connection_attempts();
    ServiceFixture f;
    f.engine.index("SYN");
    f.engine.sweep("SYN", Grid{{3}, {0.0}});
    f.engine.estimate_issue("SYN", "SYN-42", std::nullopt, std::nullopt);
    CHECK(network_connection_attempts() == before);
  }

  TEST_CASE("live backends need a url") {
    sprag::test::TempDir dir;
    auto c = stub_config(dir.path());
    c.embedding.stub = false;
    Engine engine(c);
    CHECK(error_of([&] { engine.embedder(); }) == ErrorCode::Config);
  }
}

TEST_SUITE("service") {
  TEST_CASE("estimate returns a suggestion with ranked evidence") {
    ServiceFixture f;
    AssistantService service(f.engine);
    const auto r = call(service, "POST", "/api/v1/projects/SYN/estimate",
                        {{"title", "crash on save"}, {"description", "editor crashes"}});
    CHECK(r.status == 200);
    CHECK(r.headers.at("Access-Control-Allow-Origin") == "*");
    const auto j = body_of(r);
    CHECK(ScaleDef::fibonacci().contains(j["suggested"].get<double>()));
    REQUIRE(j["evidence"].size() == 3);
    for (std::size_t i = 1; i < 3; ++i) {
      CHECK(j["evidence"][i - 1]["similarity"].get<double>() >= j["evidence"][i]["similarity"].get<double>());
      CHECK(j["evidence"][i].contains("title"));
      CHECK(j["evidence"][i].contains("story_point"));
    }
    const auto again = call(service, "POST", "/api/v1/projects/SYN/estimate",
                            {{"title", "crash on save"}, {"description", "editor crashes"}});
    CHECK(again.body == r.body);
  }

  TEST_CASE("k beyond a tiny training set saturates") {
    sprag::test::TempDir dir;
    Engine engine(stub_config(dir.path()));
    sprag::test::write_text(dir / "Tiny.csv",
                            "issuekey,created,title,description,storypoint\n"
                            "T-1,2020-01-01,alpha,one,1\nT-2,2020-01-02,beta,two,2\nT-3,2020-01-03,gamma,three,3\n");
    engine.ingest({dir / "Tiny.csv"}, std::nullopt);
    AssistantService service(engine);
    const auto r = call(service, "POST", "/api/v1/projects/Tiny/estimate", {{"title", "alpha"}, {"top_k", 4}});
    REQUIRE(r.status == 200);
    CHECK(body_of(r)["evidence"].size() == 3);
    CHECK(body_of(r)["config"]["top_k"] == 4);
  }

  TEST_CASE("request errors map to status codes") {
    ServiceFixture f;
    AssistantService service(f.engine);
    CHECK(call(service, "POST", "/api/v1/projects/SYN/estimate", {{"title", ""}}).status == 400);
    CHECK(call(service, "POST", "/api/v1/projects/SYN/estimate", {{"description", "x"}}).status == 400);
    CHECK(call(service, "POST", "/api/v1/projects/SYN/estimate", {{"title", "x"}, {"top_k", 0}}).status == 400);
    HttpRequest bad{"POST", "/api/v1/projects/SYN/estimate", {}, "{nope"};
    CHECK(service.handle(bad).status == 400);
    const auto missing = call(service, "POST", "/api/v1/projects/Nope/estimate", {{"title", "x"}});
    CHECK(missing.status == 404);
    CHECK(body_of(missing)["error"]["code"] == "not_found");
    CHECK(call(service, "GET", "/api/v1/projects/SYN/estimate").status == 405);
    CHECK(call(service, "GET", "/api/v1/unknown").status == 404);
    CHECK(call(service, "GET", "/elsewhere").status == 404);
    const auto options = call(service, "OPTIONS", "/api/v1/projects/SYN/estimate");
    CHECK(options.status == 204);
    CHECK(options.headers.count("Access-Control-Allow-Methods") == 1);
  }

  TEST_CASE("backend failure is a 503 with retry-after") {
    sprag::test::TempDir dir;
    auto c = stub_config(dir.path());
    {
      Engine setup(c);
      setup.ingest({sprag::test::source_dir() / "tests/data/synthetic_project.csv"}, std::string("SYN"));
    }
    c.embedding.stub = false;
    c.embedding.url = "http://127.0.0.1:9/embeddings";
    c.embedding.timeout_s = 2;
    Engine engine(c);
    AssistantService service(engine);
    const auto r = call(service, "POST", "/api/v1/projects/SYN/estimate", {{"title", "x"}});
    CHECK(r.status == 503);
    CHECK(r.headers.at("Retry-After") == "5");
  }

  TEST_CASE("scale, health and project listing") {
    ServiceFixture f;
    AssistantService service(f.engine);
    CHECK(body_of(call(service, "GET", "/api/v1/health"))["status"] == "ok");
    CHECK(body_of(call(service, "GET", "/api/v1/scale"))["values"].size() == 12);
    const auto projects = body_of(call(service, "GET", "/api/v1/projects"))["projects"];
    REQUIRE(projects.size() == 1);
    CHECK(projects[0]["id"] == "SYN");
    CHECK(projects[0]["tasks"] == 50);
    CHECK(projects[0]["size_group"] == "Small");
    CHECK(projects[0]["train"] == 40);
  }

  TEST_CASE("decisions: accept, override, off-scale") {
    ServiceFixture f;
    AssistantService service(f.engine);
    const auto accept = call(service, "POST", "/api/v1/projects/SYN/decisions", decision(5, 5));
    CHECK(accept.status == 201);
    CHECK(body_of(accept)["accepted"] == true);
    CHECK(body_of(accept)["id"] == 1);

    const auto override_ = call(service, "POST", "/api/v1/projects/SYN/decisions", decision(5, 8));
    CHECK(override_.status == 201);
    CHECK(body_of(override_)["accepted"] == false);
    CHECK(body_of(override_)["id"] == 2);

    CHECK(call(service, "POST", "/api/v1/projects/SYN/decisions", decision(5, 4)).status == 400);
    auto inconsistent = decision(5, 8);
    inconsistent["accepted"] = true;
    CHECK(call(service, "POST", "/api/v1/projects/SYN/decisions", inconsistent).status == 400);
    CHECK(call(service, "POST", "/api/v1/projects/Nope/decisions", decision(5, 5)).status == 404);
  }

  TEST_CASE("history is newest first with stable pages") {
    ServiceFixture f;
    AssistantService service(f.engine);
    const auto empty = body_of(call(service, "GET", "/api/v1/projects/SYN/history"));
    CHECK(empty["items"].empty());
    CHECK(empty["total"] == 0);

    call(service, "POST", "/api/v1/projects/SYN/decisions", decision(5, 5, "first"));
    call(service, "POST", "/api/v1/projects/SYN/decisions", decision(5, 8, "second"));
    const auto all = body_of(call(service, "GET", "/api/v1/projects/SYN/history"));
    REQUIRE(all["items"].size() == 2);
    CHECK(all["items"][0]["title"] == "second");
    CHECK(all["items"][1]["title"] == "first");

    const auto p1 = body_of(call(service, "GET", "/api/v1/projects/SYN/history", nullptr, {{"size", "1"}, {"page", "1"}}));
    const auto before = std::to_string(p1["items"][0]["id"].get<int>() + 1);
    call(service, "POST", "/api/v1/projects/SYN/decisions", decision(3, 3, "third"));
    const auto p2 = body_of(call(service, "GET", "/api/v1/projects/SYN/history", nullptr,
                                 {{"size", "1"}, {"page", "2"}, {"before", before}}));
    CHECK(p1["items"][0]["title"] == "second");
    REQUIRE(p2["items"].size() == 1);
    CHECK(p2["items"][0]["title"] == "first");
    CHECK(call(service, "GET", "/api/v1/projects/SYN/history", nullptr, {{"size", "0"}}).status == 400);
    CHECK(call(service, "GET", "/api/v1/projects/Nope/history").status == 404);
  }

  TEST_CASE("acknowledged decisions survive a restart") {
    ServiceFixture f;
    {
      AssistantService service(f.engine);
      call(service, "POST", "/api/v1/projects/SYN/decisions", decision(2, 2, "kept"));
      call(service, "POST", "/api/v1/projects/SYN/decisions", decision(2, 3, "also kept"));
    }
    const auto file = f.engine.config().state_dir / "decisions/SYN.jsonl";
    {
      std::ofstream torn(file, std::ios::app | std::ios::binary);
      torn << "{\"id\":3,\"project_id\":\"SY";
    }
    AssistantService restarted(f.engine);
    const auto items = body_of(call(restarted, "GET", "/api/v1/projects/SYN/history"))["items"];
    REQUIRE(items.size() == 2);
    CHECK(items[0]["title"] == "also kept");
    CHECK(items[1]["accepted"] == true);
    const auto next = call(restarted, "POST", "/api/v1/projects/SYN/decisions", decision(1, 1));
    CHECK(body_of(next)["id"] == 3);
  }

  TEST_CASE("concurrent estimates and decisions") {
    ServiceFixture f;
    AssistantService service(f.engine);
    std::vector<std::thread> workers;
    std::atomic<int> ok{0};
    for (int w = 0; w < 4; ++w) {
      workers.emplace_back([&, w] {
        for (int i = 0; i < 5; ++i) {
          if (call(service, "POST", "/api/v1/projects/SYN/estimate", {{"title", "task " + std::to_string(w)}}).status == 200) ++ok;
          if (call(service, "POST", "/api/v1/projects/SYN/decisions", decision(3, 5)).status == 201) ++ok;
        }
      });
    }
    for (auto& t : workers) t.join();
    CHECK(ok == 40);
    const auto items = body_of(call(service, "GET", "/api/v1/projects/SYN/history", nullptr, {{"size", "200"}}))["items"];
    REQUIRE(items.size() == 20);
    for (std::size_t i = 0; i < items.size(); ++i) CHECK(items[i]["id"] == 20 - i);
  }

  TEST_CASE("served over a real socket") {
    ServiceFixture f;
    AssistantService service(f.engine);
    HttpServer server([&](const HttpRequest& r) { return service.handle(r); });
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread loop([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    const auto base = "http://127.0.0.1:" + std::to_string(port);
    const auto r = post_json(base + "/api/v1/projects/SYN/estimate", json{{"title", "crash on save"}}.dump(), {},
                             std::chrono::seconds(10));
    CHECK(r.status == 200);
    CHECK(r.headers.at("Access-Control-Allow-Origin") == "*");
    CHECK(json::parse(r.body)["evidence"].size() == 3);
    const auto d = post_json(base + "/api/v1/projects/SYN/decisions", decision(3, 5).dump(), {},
                             std::chrono::seconds(10));
    CHECK(d.status == 201);
    const auto missing = post_json(base + "/api/v1/projects/Other%20Project/decisions", decision(3, 5).dump(), {},
                                   std::chrono::seconds(10));
    CHECK(missing.status == 404);
    CHECK(json::parse(missing.body)["error"]["message"].get<std::string>().find("Other Project") != std::string::npos);
    server.stop();
    loop.join();
  }
}
