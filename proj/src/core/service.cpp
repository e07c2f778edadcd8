#include "service.hpp"

#include <algorithm>
#include <cerrno>
#include <mutex>

#include <fcntl.h>
#include <unistd.h>

#include <fmt/format.h>

#include "error.hpp"
#include "timeutil.hpp"

namespace sprag {

json decision_to_json(const DecisionRecord& d) {
  return {{"id", d.id},
          {"project_id", d.project_id},
          {"title", d.title},
          {"description", d.description},
          {"suggested", d.suggested},
          {"final", d.final_sp},
          {"accepted", d.accepted},
          {"decided_at", d.decided_at}};
}

namespace {

DecisionRecord decision_from_json(const json& j) {
  DecisionRecord d;
  d.id = j.at("id").get<std::uint64_t>();
  d.project_id = j.at("project_id").get<std::string>();
  d.title = j.at("title").get<std::string>();
  d.description = j.value("description", "");
  d.suggested = j.at("suggested").get<double>();
  d.final_sp = j.at("final").get<double>();
  d.accepted = j.at("accepted").get<bool>();
  d.decided_at = j.at("decided_at").get<std::string>();
  return d;
}

void append_durably(const std::filesystem::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) fail(ErrorCode::Io, fmt::format("cannot open '{}'", path.string()));
  std::size_t done = 0;
  while (done < line.size()) {
    const auto n = ::write(fd, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      fail(ErrorCode::Io, fmt::format("write to '{}' failed", path.string()));
    }
    done += static_cast<std::size_t>(n);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) fail(ErrorCode::Io, fmt::format("fsync of '{}' failed", path.string()));
}

}  // namespace

DecisionLog::DecisionLog(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    const auto text = read_file(path);
    std::size_t start = 0;
    std::size_t lineno = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      const bool last = end == std::string::npos;
      if (last) end = text.size();
      ++lineno;
      const auto line = text.substr(start, end - start);
      start = end + 1;
      if (line.empty()) continue;
      try {
        auto d = decision_from_json(json::parse(line));
        records_[d.project_id].push_back(std::move(d));
      } catch (const json::exception& e) {
        // a torn final line from an interrupted append is ignored
        if (last) break;
        fail(ErrorCode::Schema, fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
      }
    }
  }
  for (auto& [project, list] : records_) {
    std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  }
}

std::filesystem::path DecisionLog::file_for(const std::string& project_id) const {
  return dir_ / (safe_path_component(project_id) + ".jsonl");
}

DecisionRecord DecisionLog::append(DecisionRecord draft) {
  const auto& scale = ScaleDef::fibonacci();
  if (!scale.contains(draft.final_sp)) {
    fail(ErrorCode::Validation, fmt::format("final story point {} is not on the scale", format_story_point(draft.final_sp)));
  }
  if (!scale.contains(draft.suggested)) {
    fail(ErrorCode::Validation,
         fmt::format("suggested story point {} is not on the scale", format_story_point(draft.suggested)));
  }
  if (draft.project_id.empty()) fail(ErrorCode::Validation, "project id is empty");

  std::unique_lock lock(mutex_);
  auto& list = records_[draft.project_id];
  draft.id = list.empty() ? 1 : list.back().id + 1;
  draft.accepted = draft.final_sp == draft.suggested;
  if (draft.decided_at.empty()) draft.decided_at = utc_now_iso8601();
  append_durably(file_for(draft.project_id), to_jsonl_line(decision_to_json(draft)) + "\n");
  list.push_back(draft);
  return draft;
}

std::vector<DecisionRecord> DecisionLog::history(const std::string& project_id) const {
  std::shared_lock lock(mutex_);
  auto it = records_.find(project_id);
  if (it == records_.end()) return {};
  return {it->second.rbegin(), it->second.rend()};
}

// ---------------------------------------------------------------------------

namespace {

const char* code_slug(ErrorCode code) { return error_code_name(code); }

HttpReply json_reply(int status, const json& body) {
  HttpReply r;
  r.status = status;
  r.body = body.dump();
  return r;
}

HttpReply error_reply(int status, const std::string& code, const std::string& message) {
  return json_reply(status, {{"error", {{"code", code}, {"message", message}}}});
}

HttpReply error_reply(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Validation:
    case ErrorCode::InvalidArgument:
    case ErrorCode::Schema:
      return error_reply(400, code_slug(e.code()), e.what());
    case ErrorCode::NotFound:
      return error_reply(404, code_slug(e.code()), e.what());
    case ErrorCode::Transport:
    case ErrorCode::Generation:
    case ErrorCode::Unavailable:
    case ErrorCode::Config: {
      auto r = error_reply(503, code_slug(e.code()), e.what());
      r.headers["Retry-After"] = "5";
      return r;
    }
    default:
      return error_reply(500, code_slug(e.code()), e.what());
  }
}

void add_cors(HttpReply& r) {
  r.headers["Access-Control-Allow-Origin"] = "*";
  r.headers["Access-Control-Allow-Methods"] = "GET, POST, OPTIONS";
  r.headers["Access-Control-Allow-Headers"] = "Content-Type, Authorization";
  r.headers["Access-Control-Max-Age"] = "600";
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= path.size()) {
    auto slash = path.find('/', start);
    if (slash == std::string_view::npos) slash = path.size();
    if (slash > start) out.emplace_back(path.substr(start, slash - start));
    start = slash + 1;
  }
  return out;
}

json parse_body(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) fail(ErrorCode::Validation, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error&) {
    fail(ErrorCode::Validation, "request body is not valid JSON");
  }
}

std::string string_field(const json& body, const char* key, bool required) {
  if (!body.contains(key) || body[key].is_null()) {
    if (required) fail(ErrorCode::Validation, fmt::format("'{}' is required", key));
    return {};
  }
  if (!body[key].is_string()) fail(ErrorCode::Validation, fmt::format("'{}' must be a string", key));
  return body[key].get<std::string>();
}

double number_field(const json& body, const char* key) {
  if (!body.contains(key) || !body[key].is_number()) {
    fail(ErrorCode::Validation, fmt::format("'{}' must be a number", key));
  }
  return body[key].get<double>();
}

std::size_t query_int(const std::map<std::string, std::string>& query, const char* key, std::size_t fallback,
                      std::size_t lo, std::size_t hi) {
  auto it = query.find(key);
  if (it == query.end() || it->second.empty()) return fallback;
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(it->second, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != it->second.size() || v < static_cast<long long>(lo) || v > static_cast<long long>(hi)) {
    fail(ErrorCode::Validation, fmt::format("'{}' must be an integer in [{}, {}]", key, lo, hi));
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

AssistantService::AssistantService(Engine& engine)
    : engine_(engine), decisions_(engine.config().state_dir / "decisions") {}

HttpReply AssistantService::handle(const HttpRequest& request) {
  HttpReply reply;
  try {
    const auto parts = split_path(request.path);
    if (parts.size() < 2 || parts[0] != "api" || parts[1] != "v1") {
      reply = error_reply(404, "not_found", "no such endpoint");
    } else if (request.method == "OPTIONS") {
      reply.status = 204;
      reply.body.clear();
      reply.content_type = "text/plain";
    } else {
      const std::vector<std::string> rest(parts.begin() + 2, parts.end());
      const auto& m = request.method;
      auto wrong_method = [] { return error_reply(405, "method_not_allowed", "method not allowed"); };
      if (rest.size() == 1 && rest[0] == "health") {
        reply = m == "GET" ? json_reply(200, {{"status", "ok"}}) : wrong_method();
      } else if (rest.size() == 1 && rest[0] == "scale") {
        const auto values = ScaleDef::fibonacci().values();
        reply = m == "GET" ? json_reply(200, {{"values", std::vector<double>(values.begin(), values.end())}})
                           : wrong_method();
      } else if (rest.size() == 1 && rest[0] == "projects") {
        reply = m == "GET" ? list_projects() : wrong_method();
      } else if (rest.size() == 3 && rest[0] == "projects" && rest[2] == "estimate") {
        reply = m == "POST" ? estimate(rest[1], request.body) : wrong_method();
      } else if (rest.size() == 3 && rest[0] == "projects" && rest[2] == "decisions") {
        reply = m == "POST" ? decide(rest[1], request.body) : wrong_method();
      } else if (rest.size() == 3 && rest[0] == "projects" && rest[2] == "history") {
        reply = m == "GET" ? history(rest[1], request.query) : wrong_method();
      } else {
        reply = error_reply(404, "not_found", "no such endpoint");
      }
    }
  } catch (const Error& e) {
    reply = error_reply(e);
  } catch (const std::exception& e) {
    reply = error_reply(500, "internal", e.what());
  }
  add_cors(reply);
  return reply;
}

HttpReply AssistantService::list_projects() {
  json projects = json::array();
  const auto group_of = engine_.grouping();
  for (const auto& p : engine_.list_projects()) {
    json j = {{"id", p.id}, {"tasks", p.corpus_size}, {"size_group", to_string(group_of(p.id))}};
    j["train"] = p.train_size ? json(*p.train_size) : json(nullptr);
    j["test"] = p.test_size ? json(*p.test_size) : json(nullptr);
    projects.push_back(std::move(j));
  }
  return json_reply(200, {{"projects", projects}});
}

HttpReply AssistantService::estimate(const std::string& project_id, const std::string& body_text) {
  if (!engine_.find_project(project_id)) {
    return error_reply(404, "not_found", fmt::format("unknown project '{}'", project_id));
  }
  const auto body = parse_body(body_text);
  EstimateRequest req;
  req.project_id = project_id;
  req.title = string_field(body, "title", true);
  req.description = string_field(body, "description", false);
  if (req.title.find_first_not_of(" \t\r\n") == std::string::npos) fail(ErrorCode::Validation, "title is empty");
  if (body.contains("top_k") && !body["top_k"].is_null()) {
    if (!body["top_k"].is_number_unsigned() || body["top_k"].get<std::size_t>() == 0) {
      fail(ErrorCode::Validation, "'top_k' must be a positive integer");
    }
    req.top_k = body["top_k"].get<std::size_t>();
  }
  if (body.contains("temperature") && !body["temperature"].is_null()) req.temperature = number_field(body, "temperature");
  return json_reply(200, engine_.estimate(req));
}

HttpReply AssistantService::decide(const std::string& project_id, const std::string& body_text) {
  if (!engine_.find_project(project_id)) {
    return error_reply(404, "not_found", fmt::format("unknown project '{}'", project_id));
  }
  const auto body = parse_body(body_text);
  DecisionRecord d;
  d.project_id = project_id;
  d.title = string_field(body, "title", true);
  d.description = string_field(body, "description", false);
  d.suggested = number_field(body, "suggested");
  d.final_sp = number_field(body, "final");
  if (body.contains("accepted") && !body["accepted"].is_null()) {
    if (!body["accepted"].is_boolean()) fail(ErrorCode::Validation, "'accepted' must be a boolean");
    if (body["accepted"].get<bool>() != (d.final_sp == d.suggested)) {
      fail(ErrorCode::Validation, "'accepted' must be true exactly when final equals suggested");
    }
  }
  return json_reply(201, decision_to_json(decisions_.append(std::move(d))));
}

HttpReply AssistantService::history(const std::string& project_id, const std::map<std::string, std::string>& query) {
  if (!engine_.find_project(project_id)) {
    return error_reply(404, "not_found", fmt::format("unknown project '{}'", project_id));
  }
  const std::size_t page = query_int(query, "page", 1, 1, 1000000);
  const std::size_t size = query_int(query, "size", 20, 1, 200);
  auto all = decisions_.history(project_id);
  // "before" pins paging to a snapshot taken when page 1 was read
  if (auto it = query.find("before"); it != query.end() && !it->second.empty()) {
    const auto before = query_int(query, "before", 0, 1, SIZE_MAX / 2);
    std::erase_if(all, [&](const DecisionRecord& d) { return d.id >= before; });
  }
  json items = json::array();
  const std::size_t begin = std::min(all.size(), (page - 1) * size);
  const std::size_t end = std::min(all.size(), begin + size);
  for (std::size_t i = begin; i < end; ++i) items.push_back(decision_to_json(all[i]));
  return json_reply(200, {{"project_id", project_id},
                          {"page", page},
                          {"size", size},
                          {"total", all.size()},
                          {"pages", (all.size() + size - 1) / size},
                          {"items", items}});
}

}  // namespace sprag
