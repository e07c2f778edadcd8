#include "sprag/sprag.h"

#include <cstring>
#include <memory>
#include <string>
#include <thread>

#include "engine.hpp"
#include "error.hpp"
#include "service.hpp"
#include "stats.hpp"

using namespace sprag;

struct sprag_engine {
  std::unique_ptr<Engine> engine;
};

struct sprag_index {
  Engine* engine = nullptr;
  std::shared_ptr<const VectorIndex> index;
};

struct sprag_service {
  Engine* engine = nullptr;
  std::unique_ptr<AssistantService> service;
  std::unique_ptr<HttpServer> server;
  std::thread thread;
};

namespace {

thread_local std::string g_last_error;

sprag_status to_status(ErrorCode code) { return static_cast<sprag_status>(static_cast<int>(code)); }

template <typename Fn>
sprag_status guard(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return SPRAG_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const json::exception& e) {
    g_last_error = e.what();
    return SPRAG_E_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SPRAG_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return SPRAG_E_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size());
  out[s.size()] = '\0';
  return out;
}

void require(const void* p, const char* what) {
  if (!p) fail(ErrorCode::InvalidArgument, std::string(what) + " is null");
}

json parse_request(const char* request_json) {
  if (!request_json || !*request_json) return json::object();
  auto j = json::parse(request_json);
  if (!j.is_object()) fail(ErrorCode::InvalidArgument, "request must be a JSON object");
  return j;
}

std::string req_string(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) {
    fail(ErrorCode::InvalidArgument, std::string("request needs string '") + key + "'");
  }
  return j[key].get<std::string>();
}

std::optional<Grid> req_grid(const json& j) {
  if (!j.contains("grid") || j["grid"].is_null()) return std::nullopt;
  const auto tokens = j["grid"].get<std::vector<std::string>>();
  return parse_grid(tokens);
}

template <typename Fn>
sprag_status json_command(sprag_engine_t* engine, const char* request_json, char** out_json, Fn&& fn) {
  return guard([&] {
    require(engine, "engine");
    require(out_json, "out_json");
    *out_json = nullptr;
    const json result = fn(*engine->engine, parse_request(request_json));
    *out_json = dup_string(result.dump(2));
  });
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string percent_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '+') {
      out.push_back(' ');
    } else if (s[i] == '%' && i + 2 < s.size() && hex_value(s[i + 1]) >= 0 && hex_value(s[i + 2]) >= 0) {
      out.push_back(static_cast<char>(hex_value(s[i + 1]) * 16 + hex_value(s[i + 2])));
      i += 2;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

std::map<std::string, std::string> parse_query(const char* query) {
  std::map<std::string, std::string> out;
  if (!query) return out;
  std::string_view q(query);
  if (!q.empty() && q.front() == '?') q.remove_prefix(1);
  while (!q.empty()) {
    const auto amp = q.find('&');
    const auto pair = q.substr(0, amp);
    const auto eq = pair.find('=');
    if (!pair.empty()) {
      if (eq == std::string_view::npos) out[percent_decode(pair)] = "";
      else out[percent_decode(pair.substr(0, eq))] = percent_decode(pair.substr(eq + 1));
    }
    if (amp == std::string_view::npos) break;
    q.remove_prefix(amp + 1);
  }
  return out;
}

void fill(const TestResult& r, sprag_test_result* out) {
  out->statistic = r.statistic;
  out->p_value = r.p_value;
  out->n_effective = r.n_effective;
  out->exact = r.exact ? 1 : 0;
}

}  // namespace

extern "C" {

const char* sprag_version(void) { return "0.1.0"; }

const char* sprag_status_name(sprag_status status) {
  if (status == SPRAG_OK) return "ok";
  if (status < SPRAG_E_INVALID_ARGUMENT || status > SPRAG_E_INTERNAL) return "unknown";
  return error_code_name(static_cast<ErrorCode>(static_cast<int>(status)));
}

const char* sprag_last_error(void) { return g_last_error.c_str(); }

void sprag_free_string(char* s) { std::free(s); }

sprag_status sprag_engine_create(const char* config_path, const char* overrides_json, sprag_engine_t** out) {
  return guard([&] {
    require(out, "out");
    *out = nullptr;
    RunConfig config = config_path && *config_path ? load_config(config_path) : RunConfig{};
    apply_env_overrides(config);
    if (overrides_json && *overrides_json) {
      json overrides;
      try {
        overrides = json::parse(overrides_json);
      } catch (const json::parse_error& e) {
        fail(ErrorCode::Config, std::string("overrides: ") + e.what());
      }
      config = apply_config(std::move(config), overrides);
    }
    auto handle = std::make_unique<sprag_engine>();
    handle->engine = std::make_unique<Engine>(std::move(config));
    *out = handle.release();
  });
}

void sprag_engine_free(sprag_engine_t* engine) { delete engine; }

sprag_status sprag_engine_config(sprag_engine_t* engine, char** out_json) {
  return json_command(engine, nullptr, out_json,
                      [](Engine& e, const json&) { return config_to_json(e.config()); });
}

sprag_status sprag_ingest(sprag_engine_t* engine, const char* request_json, char** out_json) {
  return json_command(engine, request_json, out_json, [](Engine& e, const json& req) {
    if (!req.contains("files") || !req["files"].is_array()) fail(ErrorCode::InvalidArgument, "request needs 'files'");
    std::vector<std::filesystem::path> files;
    for (const auto& f : req["files"]) files.emplace_back(f.get<std::string>());
    std::optional<std::string> project;
    if (req.contains("project") && !req["project"].is_null()) project = req_string(req, "project");
    return e.ingest(files, project);
  });
}

sprag_status sprag_split(sprag_engine_t* engine, const char* request_json, char** out_json) {
  return json_command(engine, request_json, out_json, [](Engine& e, const json& req) {
    std::optional<double> ratio;
    if (req.contains("ratio") && !req["ratio"].is_null()) ratio = req["ratio"].get<double>();
    return e.split(req_string(req, "project"), ratio);
  });
}

sprag_status sprag_index_project(sprag_engine_t* engine, const char* request_json, char** out_json) {
  return json_command(engine, request_json, out_json,
                      [](Engine& e, const json& req) { return e.index(req_string(req, "project")); });
}

sprag_status sprag_estimate(sprag_engine_t* engine, const char* request_json, char** out_json) {
  return json_command(engine, request_json, out_json, [](Engine& e, const json& req) {
    std::optional<std::size_t> top_k;
    std::optional<double> temperature;
    if (req.contains("top_k") && !req["top_k"].is_null()) top_k = req["top_k"].get<std::size_t>();
    if (req.contains("temperature") && !req["temperature"].is_null()) temperature = req["temperature"].get<double>();
    const auto project = req_string(req, "project");
    if (req.contains("issue_key")) return e.estimate_issue(project, req_string(req, "issue_key"), top_k, temperature);
    EstimateRequest er;
    er.project_id = project;
    er.title = req_string(req, "title");
    if (req.contains("description") && !req["description"].is_null()) er.description = req_string(req, "description");
    er.top_k = top_k;
    er.temperature = temperature;
    return e.estimate(er);
  });
}

sprag_status sprag_sweep(sprag_engine_t* engine, const char* request_json, char** out_json) {
  return json_command(engine, request_json, out_json, [](Engine& e, const json& req) {
    const auto grid = req_grid(req);
    return e.sweep(req_string(req, "project"), grid ? *grid : e.config().grid);
  });
}

sprag_status sprag_evaluate(sprag_engine_t* engine, const char* request_json, char** out_json) {
  return json_command(engine, request_json, out_json,
                      [](Engine& e, const json& req) { return e.evaluate(req_grid(req)); });
}

sprag_status sprag_stats(sprag_engine_t* engine, const char* request_json, char** out_json) {
  return json_command(engine, request_json, out_json, [](Engine& e, const json&) { return e.stats(); });
}

sprag_status sprag_report(sprag_engine_t* engine, const char* request_json, char** out_json) {
  return json_command(engine, request_json, out_json, [](Engine& e, const json& req) {
    const bool fixture_only = req.value("fixture_only", false);
    return e.report(req_string(req, "out_dir"), fixture_only);
  });
}

sprag_status sprag_projects(sprag_engine_t* engine, char** out_json) {
  return json_command(engine, nullptr, out_json, [](Engine& e, const json&) {
    json list = json::array();
    for (const auto& p : e.list_projects()) {
      json j = {{"id", p.id}, {"tasks", p.corpus_size}, {"dir", p.dir.string()}};
      j["train"] = p.train_size ? json(*p.train_size) : json(nullptr);
      j["test"] = p.test_size ? json(*p.test_size) : json(nullptr);
      list.push_back(std::move(j));
    }
    return json{{"projects", list}};
  });
}

sprag_status sprag_index_open(sprag_engine_t* engine, const char* project_id, sprag_index_t** out) {
  return guard([&] {
    require(engine, "engine");
    require(project_id, "project_id");
    require(out, "out");
    *out = nullptr;
    auto handle = std::make_unique<sprag_index>();
    handle->engine = engine->engine.get();
    handle->index = engine->engine->project_index(project_id);
    *out = handle.release();
  });
}

void sprag_index_free(sprag_index_t* index) { delete index; }

size_t sprag_index_size(const sprag_index_t* index) { return index && index->index ? index->index->size() : 0; }

sprag_status sprag_index_query(sprag_index_t* index, const char* text, size_t k, char** out_json) {
  return guard([&] {
    require(index, "index");
    require(text, "text");
    require(out_json, "out_json");
    *out_json = nullptr;
    const auto query = index->engine->embedder().embed(index->index->model_id(), text);
    json results = json::array();
    for (const auto& r : retrieve_top_k(*index->index, query, k)) {
      const auto& t = index->index->task(r.entry);
      results.push_back({{"rank", r.rank},
                         {"issue_key", r.issue_key},
                         {"similarity", r.similarity},
                         {"story_point", t.story_point ? json(*t.story_point) : json(nullptr)}});
    }
    *out_json = dup_string(json{{"results", results}}.dump(2));
  });
}

sprag_status sprag_service_create(sprag_engine_t* engine, sprag_service_t** out) {
  return guard([&] {
    require(engine, "engine");
    require(out, "out");
    *out = nullptr;
    auto handle = std::make_unique<sprag_service>();
    handle->engine = engine->engine.get();
    handle->service = std::make_unique<AssistantService>(*engine->engine);
    *out = handle.release();
  });
}

void sprag_service_free(sprag_service_t* service) {
  if (!service) return;
  sprag_service_stop(service);
  delete service;
}

sprag_status sprag_service_handle(sprag_service_t* service, const char* method, const char* path, const char* query,
                                  const char* body, int* out_status, char** out_body) {
  return guard([&] {
    require(service, "service");
    require(method, "method");
    require(path, "path");
    require(out_status, "out_status");
    require(out_body, "out_body");
    *out_body = nullptr;
    HttpRequest req;
    req.method = method;
    req.path = path;
    req.query = parse_query(query);
    req.body = body ? body : "";
    const auto reply = service->service->handle(req);
    *out_status = reply.status;
    *out_body = dup_string(reply.body);
  });
}

sprag_status sprag_service_start(sprag_service_t* service, const char* host, int port, int* out_port) {
  return guard([&] {
    require(service, "service");
    require(host, "host");
    if (service->server) fail(ErrorCode::InvalidArgument, "service is already running");
    auto* svc = service->service.get();
    auto server = std::make_unique<HttpServer>([svc](const HttpRequest& r) { return svc->handle(r); },
                                               service->engine->config().service.static_dir);
    const int bound = server->bind(host, port);
    if (bound < 0) fail(ErrorCode::Io, std::string("cannot bind ") + host + ":" + std::to_string(port));
    auto* raw = server.get();
    service->thread = std::thread([raw] { raw->listen_after_bind(); });
    raw->wait_until_ready();
    service->server = std::move(server);
    if (out_port) *out_port = bound;
  });
}

sprag_status sprag_service_stop(sprag_service_t* service) {
  return guard([&] {
    require(service, "service");
    if (service->server) service->server->stop();
    if (service->thread.joinable()) service->thread.join();
    service->server.reset();
  });
}

sprag_status sprag_mae(const double* preds, const double* truths, size_t n, double* out) {
  return guard([&] {
    require(out, "out");
    if (n > 0) {
      require(preds, "preds");
      require(truths, "truths");
    }
    *out = mae({preds, n}, {truths, n});
  });
}

sprag_status sprag_mdae(const double* preds, const double* truths, size_t n, double* out) {
  return guard([&] {
    require(out, "out");
    if (n > 0) {
      require(preds, "preds");
      require(truths, "truths");
    }
    *out = mdae({preds, n}, {truths, n});
  });
}

sprag_status sprag_wilcoxon(const double* x, const double* y, size_t n, sprag_alternative alternative,
                            sprag_test_result* out) {
  return guard([&] {
    require(out, "out");
    if (n > 0) {
      require(x, "x");
      require(y, "y");
    }
    Alternative alt = Alternative::TwoSided;
    switch (alternative) {
      case SPRAG_TWO_SIDED: alt = Alternative::TwoSided; break;
      case SPRAG_LESS: alt = Alternative::Less; break;
      case SPRAG_GREATER: alt = Alternative::Greater; break;
      default: fail(ErrorCode::InvalidArgument, "unknown alternative");
    }
    PairedSamples s;
    s.x.assign(x, x + n);
    s.y.assign(y, y + n);
    fill(wilcoxon_signed_rank(s, alt), out);
  });
}

sprag_status sprag_kruskal_wallis(const double* values, const size_t* group_sizes, size_t groups,
                                  sprag_test_result* out) {
  return guard([&] {
    require(out, "out");
    require(group_sizes, "group_sizes");
    std::vector<std::vector<double>> g;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < groups; ++i) {
      if (group_sizes[i] > 0) require(values, "values");
      g.emplace_back(values + offset, values + offset + group_sizes[i]);
      offset += group_sizes[i];
    }
    fill(kruskal_wallis(g), out);
  });
}

sprag_status sprag_chi_squared_sf(double x, int df, double* out) {
  return guard([&] {
    require(out, "out");
    *out = chi_squared_sf(x, df);
  });
}

sprag_status sprag_snap_to_scale(double value, double* out) {
  return guard([&] {
    require(out, "out");
    *out = snap_to_scale(value, ScaleDef::fibonacci());
  });
}

sprag_status sprag_parse_story_point(const char* reply, char** out_json) {
  return guard([&] {
    require(reply, "reply");
    require(out_json, "out_json");
    *out_json = nullptr;
    const auto p = parse_story_point(reply);
    json j = {{"status", to_string(p.status)}};
    j["raw_value"] = p.raw_value ? json(*p.raw_value) : json(nullptr);
    j["snapped"] = p.snapped ? json(*p.snapped) : json(nullptr);
    *out_json = dup_string(j.dump());
  });
}

sprag_status sprag_clean_text(const char* text, char** out) {
  return guard([&] {
    require(text, "text");
    require(out, "out");
    *out = dup_string(clean_text(text));
  });
}

uint64_t sprag_net_connection_count(void) { return network_connection_attempts(); }

}  // extern "C"
