#include "config.hpp"

#include <cstdlib>

#include <fmt/format.h>

#include "error.hpp"

namespace sprag {

namespace {

[[noreturn]] void wrong_type(const std::string& path, const char* expected) {
  fail(ErrorCode::Config, fmt::format("config key '{}' must be {}", path, expected));
}

void read(const json& v, const std::string& path, std::string& out) {
  if (!v.is_string()) wrong_type(path, "a string");
  out = v.get<std::string>();
}

void read(const json& v, const std::string& path, std::filesystem::path& out) {
  if (!v.is_string()) wrong_type(path, "a string");
  out = v.get<std::string>();
}

void read(const json& v, const std::string& path, bool& out) {
  if (!v.is_boolean()) wrong_type(path, "a boolean");
  out = v.get<bool>();
}

void read(const json& v, const std::string& path, double& out) {
  if (!v.is_number()) wrong_type(path, "a number");
  out = v.get<double>();
}

void read(const json& v, const std::string& path, int& out) {
  if (!v.is_number_integer()) wrong_type(path, "an integer");
  const auto x = v.get<std::int64_t>();
  if (x < INT32_MIN || x > INT32_MAX) wrong_type(path, "a 32-bit integer");
  out = static_cast<int>(x);
}

void read(const json& v, const std::string& path, std::size_t& out) {
  if (!v.is_number_unsigned()) wrong_type(path, "a non-negative integer");
  out = v.get<std::size_t>();
}

void read(const json& v, const std::string& path, std::optional<std::int64_t>& out) {
  if (v.is_null()) {
    out.reset();
    return;
  }
  if (!v.is_number_integer()) wrong_type(path, "an integer or null");
  out = v.get<std::int64_t>();
}

template <typename T>
void read(const json& v, const std::string& path, std::vector<T>& out) {
  if (!v.is_array()) wrong_type(path, "an array");
  out.clear();
  for (std::size_t i = 0; i < v.size(); ++i) {
    T item{};
    read(v[i], fmt::format("{}[{}]", path, i), item);
    out.push_back(std::move(item));
  }
}

void require_object(const json& v, const std::string& path) {
  if (!v.is_object()) wrong_type(path, "an object");
}

[[noreturn]] void unknown_key(const std::string& path) {
  fail(ErrorCode::Config, fmt::format("unknown config key '{}'", path));
}

void apply_embedding(EmbeddingSettings& e, const json& doc) {
  require_object(doc, "embedding");
  for (const auto& [key, v] : doc.items()) {
    const std::string path = "embedding." + key;
    if (key == "url") read(v, path, e.url);
    else if (key == "model") read(v, path, e.model);
    else if (key == "api_key") read(v, path, e.api_key);
    else if (key == "stub") read(v, path, e.stub);
    else if (key == "stub_dims") read(v, path, e.stub_dims);
    else if (key == "timeout_s") read(v, path, e.timeout_s);
    else if (key == "batch_size") read(v, path, e.batch_size);
    else unknown_key(path);
  }
}

void apply_generator(GeneratorSettings& g, const json& doc) {
  require_object(doc, "generator");
  for (const auto& [key, v] : doc.items()) {
    const std::string path = "generator." + key;
    if (key == "url") read(v, path, g.url);
    else if (key == "model") read(v, path, g.model);
    else if (key == "api_key") read(v, path, g.api_key);
    else if (key == "stub") read(v, path, g.stub);
    else if (key == "max_tokens") read(v, path, g.max_tokens);
    else if (key == "seed") read(v, path, g.seed);
    else if (key == "max_attempts") read(v, path, g.max_attempts);
    else if (key == "backoff_ms") read(v, path, g.backoff_ms);
    else if (key == "timeout_s") read(v, path, g.timeout_s);
    else unknown_key(path);
  }
}

void apply_size_groups(SizeGrouping& s, const json& doc) {
  require_object(doc, "size_groups");
  for (const auto& [key, v] : doc.items()) {
    const std::string path = "size_groups." + key;
    if (key == "small_max") {
      read(v, path, s.small_max);
    } else if (key == "mid_max") {
      read(v, path, s.mid_max);
    } else if (key == "overrides") {
      require_object(v, path);
      s.overrides.clear();
      for (const auto& [project, label] : v.items()) {
        std::string text;
        read(label, path + "." + project, text);
        try {
          s.overrides[project] = parse_size_label(text);
        } catch (const Error&) {
          fail(ErrorCode::Config, fmt::format("config key '{}.{}' must be Small, Mid or Large", path, project));
        }
      }
    } else {
      unknown_key(path);
    }
  }
}

}  // namespace

RunConfig apply_config(RunConfig c, const json& doc) {
  require_object(doc, "<root>");
  for (const auto& [key, v] : doc.items()) {
    if (key == "data_dir") read(v, key, c.data_dir);
    else if (key == "results_dir") read(v, key, c.results_dir);
    else if (key == "cache_dir") read(v, key, c.cache_dir);
    else if (key == "state_dir") read(v, key, c.state_dir);
    else if (key == "fixture") read(v, key, c.fixture);
    else if (key == "project_sizes") read(v, key, c.project_sizes);
    else if (key == "parallelism") read(v, key, c.parallelism);
    else if (key == "split_ratio") read(v, key, c.split_ratio);
    else if (key == "embedding") apply_embedding(c.embedding, v);
    else if (key == "generator") apply_generator(c.generator, v);
    else if (key == "size_groups") apply_size_groups(c.size_groups, v);
    else if (key == "grid") {
      require_object(v, key);
      for (const auto& [gk, gv] : v.items()) {
        if (gk == "top_k") read(gv, "grid.top_k", c.grid.top_k);
        else if (gk == "temperature") read(gv, "grid.temperature", c.grid.temperature);
        else unknown_key("grid." + gk);
      }
    } else if (key == "filter") {
      require_object(v, key);
      for (const auto& [fk, fv] : v.items()) {
        if (fk == "require_addressed") read(fv, "filter.require_addressed", c.filter.require_addressed);
        else if (fk == "drop_changed_after_sp") read(fv, "filter.drop_changed_after_sp", c.filter.drop_changed_after_sp);
        else if (fk == "extra_log_patterns") read(fv, "filter.extra_log_patterns", c.extra_log_patterns);
        else unknown_key("filter." + fk);
      }
    } else if (key == "service") {
      require_object(v, key);
      for (const auto& [sk, sv] : v.items()) {
        if (sk == "host") read(sv, "service.host", c.service.host);
        else if (sk == "port") read(sv, "service.port", c.service.port);
        else if (sk == "static_dir") read(sv, "service.static_dir", c.service.static_dir);
        else unknown_key("service." + sk);
      }
    } else {
      unknown_key(key);
    }
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Config, fmt::format("{}: {}", path.string(), e.what()));
  }
  return apply_config(RunConfig{}, doc);
}

void apply_env_overrides(RunConfig& config) {
  if (const char* v = std::getenv("SPRAG_EMBED_URL"); v && *v) config.embedding.url = v;
  if (const char* v = std::getenv("SPRAG_GEN_URL"); v && *v) config.generator.url = v;
  if (const char* v = std::getenv("SPRAG_API_KEY"); v && *v) {
    config.embedding.api_key = v;
    config.generator.api_key = v;
  }
}

void validate_config(const RunConfig& c) {
  auto bad = [](const std::string& msg) { fail(ErrorCode::Config, msg); };
  if (c.parallelism < 1) bad("parallelism must be at least 1");
  if (!(c.split_ratio > 0 && c.split_ratio < 1)) bad("split_ratio must be in (0, 1)");
  if (c.embedding.model.empty()) bad("embedding.model is empty");
  if (c.embedding.stub_dims < 1) bad("embedding.stub_dims must be positive");
  if (c.embedding.batch_size < 1) bad("embedding.batch_size must be positive");
  if (!(c.embedding.timeout_s > 0)) bad("embedding.timeout_s must be positive");
  if (c.generator.model.empty()) bad("generator.model is empty");
  if (c.generator.max_tokens < 1) bad("generator.max_tokens must be positive");
  if (c.generator.max_attempts < 1) bad("generator.max_attempts must be positive");
  if (c.generator.backoff_ms < 0) bad("generator.backoff_ms must be non-negative");
  if (!(c.generator.timeout_s > 0)) bad("generator.timeout_s must be positive");
  if (c.grid.top_k.empty()) bad("grid.top_k is empty");
  if (c.grid.temperature.empty()) bad("grid.temperature is empty");
  for (auto k : c.grid.top_k) {
    if (k < 1) bad("grid.top_k values must be positive");
  }
  for (auto t : c.grid.temperature) {
    if (!(t >= 0 && t <= 2)) bad("grid.temperature values must be in [0, 2]");
  }
  if (c.size_groups.small_max >= c.size_groups.mid_max) bad("size_groups.small_max must be below mid_max");
  if (c.service.port < 0 || c.service.port > 65535) bad("service.port out of range");
  try {
    TextCleaner probe(c.extra_log_patterns);
  } catch (const std::exception& e) {
    bad(fmt::format("filter.extra_log_patterns: {}", e.what()));
  }
}

json config_to_json(const RunConfig& c) {
  json overrides = json::object();
  for (const auto& [p, l] : c.size_groups.overrides) overrides[p] = to_string(l);
  return {
      {"data_dir", c.data_dir.string()},
      {"results_dir", c.results_dir.string()},
      {"cache_dir", c.cache_dir.string()},
      {"state_dir", c.state_dir.string()},
      {"fixture", c.fixture.string()},
      {"project_sizes", c.project_sizes.string()},
      {"parallelism", c.parallelism},
      {"split_ratio", c.split_ratio},
      {"embedding",
       {{"url", c.embedding.url},
        {"model", c.embedding.model},
        {"stub", c.embedding.stub},
        {"stub_dims", c.embedding.stub_dims},
        {"timeout_s", c.embedding.timeout_s},
        {"batch_size", c.embedding.batch_size}}},
      {"generator",
       {{"url", c.generator.url},
        {"model", c.generator.model},
        {"stub", c.generator.stub},
        {"max_tokens", c.generator.max_tokens},
        {"seed", c.generator.seed ? json(*c.generator.seed) : json(nullptr)},
        {"max_attempts", c.generator.max_attempts},
        {"backoff_ms", c.generator.backoff_ms},
        {"timeout_s", c.generator.timeout_s}}},
      {"grid", {{"top_k", c.grid.top_k}, {"temperature", c.grid.temperature}}},
      {"size_groups",
       {{"small_max", c.size_groups.small_max}, {"mid_max", c.size_groups.mid_max}, {"overrides", overrides}}},
      {"filter",
       {{"require_addressed", c.filter.require_addressed},
        {"drop_changed_after_sp", c.filter.drop_changed_after_sp},
        {"extra_log_patterns", c.extra_log_patterns}}},
      {"service", {{"host", c.service.host}, {"port", c.service.port}, {"static_dir", c.service.static_dir}}},
  };
}

GenerationConfig generation_config(const RunConfig& c) {
  GenerationConfig g;
  g.model_id = c.generator.model;
  g.max_tokens = c.generator.max_tokens;
  g.seed = c.generator.seed;
  return g;
}

}  // namespace sprag
