#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <shared_mutex>
#include <string>
#include <vector>

#include "engine.hpp"
#include "http.hpp"

namespace sprag {

struct DecisionRecord {
  std::uint64_t id = 0;
  std::string project_id;
  std::string title;
  std::string description;
  double suggested = 0;
  double final_sp = 0;
  bool accepted = false;
  std::string decided_at;
};

json decision_to_json(const DecisionRecord& d);

// Append-only decision store: one JSON-lines file per project under `dir`,
// loaded into memory at construction. Appends are serialized, flushed and
// fsynced before they become visible.
class DecisionLog {
 public:
  explicit DecisionLog(std::filesystem::path dir);

  // Assigns id (per project, increasing), accepted and decided_at. final and
  // suggested must be on the scale -> else Error(Validation).
  DecisionRecord append(DecisionRecord draft);

  // Newest first.
  std::vector<DecisionRecord> history(const std::string& project_id) const;

 private:
  std::filesystem::path file_for(const std::string& project_id) const;

  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::vector<DecisionRecord>> records_;
};

// Routes /api/v1 requests:
//   GET  /api/v1/projects
//   POST /api/v1/projects/{id}/estimate
//   POST /api/v1/projects/{id}/decisions
//   GET  /api/v1/projects/{id}/history?page=&size=[&before=id]
//   GET  /api/v1/scale, /api/v1/health
// Paths arrive percent-decoded. Every reply carries permissive CORS headers.
class AssistantService {
 public:
  explicit AssistantService(Engine& engine);

  HttpReply handle(const HttpRequest& request);

  DecisionLog& decisions() { return decisions_; }

 private:
  HttpReply list_projects();
  HttpReply estimate(const std::string& project_id, const std::string& body);
  HttpReply decide(const std::string& project_id, const std::string& body);
  HttpReply history(const std::string& project_id, const std::map<std::string, std::string>& query);

  Engine& engine_;
  DecisionLog decisions_;
};

}  // namespace sprag
