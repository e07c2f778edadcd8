#include <doctest.h>

#include <stdlib.h>

#include "config.hpp"
#include "support.hpp"

using namespace sprag;
using sprag::test::error_of;

namespace {

std::string config_error(const json& doc) {
  try {
    apply_config(RunConfig{}, doc);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults validate") {
    const RunConfig c;
    CHECK_NOTHROW(validate_config(c));
    CHECK(c.grid.cells().size() == 12);
    CHECK(c.parallelism == 4);
    CHECK(c.embedding.model == "BAAI/bge-large-en-v1.5");
  }

  TEST_CASE("known keys apply at every level") {
    const auto c = apply_config(RunConfig{}, json::parse(R"({
      "data_dir": "d", "parallelism": 2,
      "embedding": {"stub": true, "model": "sentence-transformers/all-mpnet-base-v2"},
      "generator": {"stub": true, "seed": 7, "max_attempts": 5},
      "grid": {"top_k": [3], "temperature": [0, 0.1]},
      "size_groups": {"overrides": {"Core Server": "Small"}},
      "filter": {"extra_log_patterns": ["^DEBUG"]},
      "service": {"port": 9000}
    })"));
    CHECK(c.data_dir == "d");
    CHECK(c.parallelism == 2);
    CHECK(c.embedding.stub);
    CHECK(c.generator.seed == 7);
    CHECK(c.generator.max_attempts == 5);
    CHECK(c.grid.cells().size() == 2);
    CHECK(c.size_groups.overrides.at("Core Server") == SizeLabel::Small);
    CHECK(c.size_groups.small_max == 500);
    CHECK(c.extra_log_patterns == std::vector<std::string>{"^DEBUG"});
    CHECK(c.service.port == 9000);
  }

  TEST_CASE("unknown keys are rejected with their path") {
    CHECK(config_error(json{{"datadir", "x"}}).find("'datadir'") != std::string::npos);
    CHECK(config_error(json{{"embedding", {{"urll", "x"}}}}).find("'embedding.urll'") != std::string::npos);
    CHECK(config_error(json{{"grid", {{"k", {3}}}}}).find("'grid.k'") != std::string::npos);
    CHECK(config_error(json{{"service", {{"tls", true}}}}).find("'service.tls'") != std::string::npos);
  }

  TEST_CASE("wrong types are rejected") {
    CHECK(config_error(json{{"parallelism", "four"}}).find("parallelism") != std::string::npos);
    CHECK(config_error(json{{"embedding", "x"}}).find("embedding") != std::string::npos);
    CHECK(config_error(json{{"size_groups", {{"overrides", {{"A", "Huge"}}}}}}).find("size_groups.overrides.A") !=
          std::string::npos);
    CHECK(config_error(json::array()) != "");
  }

  TEST_CASE("cross-field validation") {
    RunConfig c;
    c.split_ratio = 1.5;
    CHECK(error_of([&] { validate_config(c); }) == ErrorCode::Config);
    c = RunConfig{};
    c.grid.top_k = {0};
    CHECK(error_of([&] { validate_config(c); }) == ErrorCode::Config);
    c = RunConfig{};
    c.extra_log_patterns = {"(unclosed"};
    CHECK(error_of([&] { validate_config(c); }) == ErrorCode::Config);
    c = RunConfig{};
    c.size_groups.small_max = 3000;
    CHECK(error_of([&] { validate_config(c); }) == ErrorCode::Config);
  }

  TEST_CASE("serialized config applies back to itself without secrets") {
    RunConfig c;
    c.embedding.api_key = "secret";
    c.generator.seed = 3;
    c.size_groups.overrides["X"] = SizeLabel::Large;
    const auto doc = config_to_json(c);
    CHECK(doc.dump().find("secret") == std::string::npos);
    CHECK(config_to_json(apply_config(RunConfig{}, doc)) == doc);
  }

  TEST_CASE("config file and environment overrides") {
    sprag::test::TempDir dir;
    sprag::test::write_text(dir / "c.json", R"({"generator": {"url": "http://file"}})");
    auto c = load_config(dir / "c.json");
    CHECK(c.generator.url == "http://file");

    ::setenv("SPRAG_GEN_URL", "http://env-gen", 1);
    ::setenv("SPRAG_EMBED_URL", "http://env-embed", 1);
    ::setenv("SPRAG_API_KEY", "k", 1);
    apply_env_overrides(c);
    ::unsetenv("SPRAG_GEN_URL");
    ::unsetenv("SPRAG_EMBED_URL");
    ::unsetenv("SPRAG_API_KEY");
    CHECK(c.generator.url == "http://env-gen");
    CHECK(c.embedding.url == "http://env-embed");
    CHECK(c.generator.api_key == "k");

    sprag::test::write_text(dir / "bad.json", "{not json");
    CHECK(error_of([&] { load_config(dir / "bad.json"); }) == ErrorCode::Config);
  }

  TEST_CASE("generation settings carry through") {
    RunConfig c;
    c.generator.max_tokens = 32;
    c.generator.seed = 11;
    const auto g = generation_config(c);
    CHECK(g.model_id == "Llama-3.2-3B-Instruct");
    CHECK(g.max_tokens == 32);
    CHECK(g.seed == 11);
  }
}
