#pragma once

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"
#include "scale.hpp"

namespace sprag {

struct PromptBundle {
  std::string system;
  std::string user;

  friend bool operator==(const PromptBundle&, const PromptBundle&) = default;
};

struct GenerationConfig {
  std::string model_id = "Llama-3.2-3B-Instruct";
  double temperature = 0.0;
  int max_tokens = 16;
  std::optional<std::int64_t> seed;
};

enum class ParseStatus { Direct, Fallback, Failed };

const char* to_string(ParseStatus status);

struct ParsedEstimate {
  std::optional<double> raw_value;
  std::optional<double> snapped;  // set unless status == Failed
  ParseStatus status = ParseStatus::Failed;
};

// A retrieved reference issue as it appears in the prompt.
struct Evidence {
  std::string issue_key;
  std::string title;
  std::string description;
  double story_point = 0;
  double similarity = 0;
};

const std::string& system_prompt();

// Numbered reference block, most similar first:
//   1. Task Title
//   {title}
//   Task Description
//   {description}
//   Story Point: {sp}
std::string format_similar_tasks(std::span<const Evidence> evidence);

// User prompt with the reference block and new task substituted; the count word
// reflects k ("two", "three", ...).
PromptBundle build_prompt(const std::string& formatted_similar, const Task& new_task, std::size_t k);

// "three" for 3; digits above twenty.
std::string spell_count(std::size_t n);

// First pass: the number after "Estimated Story Point:" (case-insensitive,
// markdown emphasis allowed) -> Direct. Second pass: first numeric token ->
// Fallback. Otherwise Failed.
ParsedEstimate parse_story_point(std::string_view raw, const ScaleDef& scale = ScaleDef::fibonacci());

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Assistant message content. Connection failures and retryable statuses
  // (429, 5xx) throw Error(Transport); other failures Error(Generation).
  virtual std::string complete(const PromptBundle& prompt, const GenerationConfig& config) = 0;
};

// POST {model, messages, temperature, max_tokens, seed?} -> choices[0].message.content
class HttpChatBackend final : public ChatBackend {
 public:
  HttpChatBackend(std::string url, std::string api_key, std::chrono::milliseconds timeout);
  std::string complete(const PromptBundle& prompt, const GenerationConfig& config) override;

 private:
  std::string url_;
  std::string api_key_;
  std::chrono::milliseconds timeout_;
};

// Offline generator: answers with the lower median of the "Story Point:" values
// found in the reference block, formatted as the required output line.
class MedianStubBackend final : public ChatBackend {
 public:
  std::string complete(const PromptBundle& prompt, const GenerationConfig& config) override;
};

// Replays scripted outcomes in order; the last one repeats. A step either
// returns text or throws the given error.
class ScriptedBackend final : public ChatBackend {
 public:
  struct Step {
    std::string reply;
    std::optional<ErrorCode> error;
  };

  explicit ScriptedBackend(std::vector<Step> steps);
  std::string complete(const PromptBundle& prompt, const GenerationConfig& config) override;
  std::size_t calls() const;

 private:
  mutable std::mutex mutex_;
  std::vector<Step> steps_;
  std::size_t next_ = 0;
};

// Append-only JSON-lines audit sink; writes are serialized.
class AuditLog {
 public:
  explicit AuditLog(const std::filesystem::path& path);
  void append(const json& entry);

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

struct GenerationOutcome {
  std::string text;
  int attempts = 0;
};

class Generator {
 public:
  Generator(std::shared_ptr<ChatBackend> backend, RetryPolicy policy = {},
            std::shared_ptr<AuditLog> audit = nullptr);

  // Retries transport errors with exponential backoff up to max_attempts;
  // the last error propagates.
  GenerationOutcome generate(const PromptBundle& prompt, const GenerationConfig& config);

 private:
  std::shared_ptr<ChatBackend> backend_;
  RetryPolicy policy_;
  std::shared_ptr<AuditLog> audit_;
};

}  // namespace sprag
