#include "generator.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "error.hpp"
#include "http.hpp"
#include "timeutil.hpp"

namespace sprag {

const char* to_string(ParseStatus status) {
  switch (status) {
    case ParseStatus::Direct: return "direct";
    case ParseStatus::Fallback: return "fallback";
    case ParseStatus::Failed: return "failed";
  }
  return "?";
}

const std::string& system_prompt() {
  static const std::string text =
      "You are an expert Agile software engineer experienced in story point estimation using the "
      "Scrum methodology. Your goal is to estimate story points for new software development issues "
      "based on similar past issues retrieved from the same project.\n"
      "You should carefully analyze the reference issues and reason based on their complexity, to "
      "provide a consistent numeric estimate. These numeric estimates should be from the numbers in "
      "the fibonacci series (0,1,1,2,3,5,8 and so on) where lower values represent less complex issue "
      "and a higher values represent more complex issue.\n"
      "Respond in a clear and concise format.";
  return text;
}

std::string spell_count(std::size_t n) {
  static constexpr std::array<const char*, 21> kWords = {
      "zero",    "one",     "two",       "three",    "four",     "five",    "six",
      "seven",   "eight",   "nine",      "ten",      "eleven",   "twelve",  "thirteen",
      "fourteen", "fifteen", "sixteen",  "seventeen", "eighteen", "nineteen", "twenty"};
  return n < kWords.size() ? kWords[n] : std::to_string(n);
}

std::string format_similar_tasks(std::span<const Evidence> evidence) {
  if (evidence.empty()) fail(ErrorCode::InvalidArgument, "no similar tasks to format");
  std::string out;
  for (std::size_t i = 0; i < evidence.size(); ++i) {
    const auto& e = evidence[i];
    if (i) out += "\n";
    out += fmt::format("{}. Task Title\n{}\nTask Description\n{}\nStory Point: {}\n", i + 1, e.title,
                       e.description, format_story_point(e.story_point));
  }
  return out;
}

PromptBundle build_prompt(const std::string& formatted_similar, const Task& new_task, std::size_t k) {
  if (k == 0) fail(ErrorCode::InvalidArgument, "prompt needs k >= 1");
  std::string user;
  user += "Below are " + spell_count(k) + " similar issues retrieved from the project’s history.\n";
  user += "The issues are ordered by similarity, with the most similar issue listed first.\n";
  user += "Use them as references to estimate the story point for the new issue.\n";
  user += "### Reference Issues:\n";
  user += formatted_similar;
  if (!formatted_similar.empty() && formatted_similar.back() != '\n') user += "\n";
  user += "### New Issue to Estimate:\n";
  user += "Title: " + new_task.title + "\n";
  user += "Description: " + new_task.description + "\n";
  user += "### Instructions:\n";
  user += "1. Compare the new issue with the reference issues.\n";
  user += "2. Analyze its relative complexity.\n";
  user +=
      "3. Stay within a reasonable numeric range close to the reference story points. Do not make "
      "large jumps and do not invent new scales - use the fibonacci series only (0,1,1,2,3,5,8 and so "
      "on) and avoid decimal values.\n";
  user +=
      "4. Finally, give a single numeric story point value that best fits the new issue, keeping the "
      "scale consistent with the reference issues.\n";
  user += "### Output Format\n";
  user += "Estimated Story Point: <number>\n";
  user += "Your answer should ONLY CONTAIN YOUR ESTIMATED STORY POINT. DO NOT ELONGATE YOUR ANSWERS.";
  return PromptBundle{system_prompt(), std::move(user)};
}

// ---------------------------------------------------------------------------

namespace {

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Reads [-]digits[.digits] at pos. Returns the value and advances pos.
std::optional<double> read_number(std::string_view s, std::size_t& pos) {
  std::size_t start = pos;
  if (start < s.size() && s[start] == '-') ++start;
  std::size_t end = start;
  while (end < s.size() && is_digit(s[end])) ++end;
  if (end == start) return std::nullopt;
  if (end + 1 < s.size() && s[end] == '.' && is_digit(s[end + 1])) {
    ++end;
    while (end < s.size() && is_digit(s[end])) ++end;
  }
  double value = 0;
  const char* first = s.data() + pos;
  auto [ptr, ec] = std::from_chars(first, s.data() + end, value);
  if (ec != std::errc()) return std::nullopt;
  pos = static_cast<std::size_t>(ptr - s.data());
  return value;
}

std::size_t find_icase(std::string_view hay, std::string_view needle, std::size_t from) {
  for (std::size_t i = from; i + needle.size() <= hay.size(); ++i) {
    bool match = true;
    for (std::size_t k = 0; k < needle.size() && match; ++k) {
      match = std::tolower(static_cast<unsigned char>(hay[i + k])) ==
              std::tolower(static_cast<unsigned char>(needle[k]));
    }
    if (match) return i;
  }
  return std::string_view::npos;
}

std::optional<double> anchored_value(std::string_view raw) {
  static constexpr std::string_view kAnchor = "estimated story point";
  for (std::size_t at = find_icase(raw, kAnchor, 0); at != std::string_view::npos;
       at = find_icase(raw, kAnchor, at + 1)) {
    std::size_t pos = at + kAnchor.size();
    if (pos < raw.size() && (raw[pos] == 's' || raw[pos] == 'S')) ++pos;
    auto skip_emphasis = [&] {
      while (pos < raw.size() && (raw[pos] == '*' || raw[pos] == '_' || raw[pos] == ' ' || raw[pos] == '\t')) {
        ++pos;
      }
    };
    skip_emphasis();
    if (pos >= raw.size() || raw[pos] != ':') continue;
    ++pos;
    skip_emphasis();
    if (auto v = read_number(raw, pos)) return v;
  }
  return std::nullopt;
}

std::optional<double> first_numeric_token(std::string_view raw) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!is_digit(raw[i])) continue;
    std::size_t pos = i;
    // A sign counts only when it is not glued to a preceding word ("v-2").
    if (i > 0 && raw[i - 1] == '-' &&
        (i == 1 || !std::isalnum(static_cast<unsigned char>(raw[i - 2])))) {
      pos = i - 1;
    }
    if (auto v = read_number(raw, pos)) return v;
  }
  return std::nullopt;
}

}  // namespace

ParsedEstimate parse_story_point(std::string_view raw, const ScaleDef& scale) {
  ParsedEstimate out;
  if (auto v = anchored_value(raw)) {
    out.status = ParseStatus::Direct;
    out.raw_value = *v;
  } else if (auto f = first_numeric_token(raw)) {
    out.status = ParseStatus::Fallback;
    out.raw_value = *f;
  } else {
    return out;
  }
  out.snapped = snap_to_scale(*out.raw_value, scale);
  return out;
}

// ---------------------------------------------------------------------------

HttpChatBackend::HttpChatBackend(std::string url, std::string api_key, std::chrono::milliseconds timeout)
    : url_(std::move(url)), api_key_(std::move(api_key)), timeout_(timeout) {
  if (url_.empty()) fail(ErrorCode::Config, "generator url is not configured");
}

std::string HttpChatBackend::complete(const PromptBundle& prompt, const GenerationConfig& config) {
  json body = {{"model", config.model_id},
               {"messages", json::array({{{"role", "system"}, {"content", prompt.system}},
                                         {{"role", "user"}, {"content", prompt.user}}})},
               {"temperature", config.temperature},
               {"max_tokens", config.max_tokens}};
  if (config.seed) body["seed"] = *config.seed;
  std::map<std::string, std::string> headers;
  if (!api_key_.empty()) headers["Authorization"] = "Bearer " + api_key_;

  const auto reply = post_json(url_, body.dump(), headers, timeout_);
  if (reply.status == 429 || reply.status >= 500) {
    fail(ErrorCode::Transport,
         fmt::format("generator returned status {}: {}", reply.status, reply.body.substr(0, 200)));
  }
  if (reply.status < 200 || reply.status >= 300) {
    fail(ErrorCode::Generation,
         fmt::format("generator returned status {}: {}", reply.status, reply.body.substr(0, 200)));
  }
  try {
    const auto parsed = json::parse(reply.body);
    return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Generation, fmt::format("malformed chat completion: {}", e.what()));
  }
}

std::string MedianStubBackend::complete(const PromptBundle& prompt, const GenerationConfig&) {
  const std::string_view user = prompt.user;
  const auto begin = user.find("### Reference Issues:");
  const auto end = user.find("### New Issue to Estimate:");
  if (begin == std::string_view::npos || end == std::string_view::npos || end < begin) {
    fail(ErrorCode::Generation, "stub generator: prompt has no reference block");
  }
  const auto block = user.substr(begin, end - begin);
  std::vector<double> points;
  static constexpr std::string_view kLabel = "\nStory Point: ";
  for (auto at = block.find(kLabel); at != std::string_view::npos; at = block.find(kLabel, at + 1)) {
    std::size_t pos = at + kLabel.size();
    if (auto v = read_number(block, pos)) points.push_back(*v);
  }
  if (points.empty()) fail(ErrorCode::Generation, "stub generator: no reference story points");
  return "Estimated Story Point: " + format_story_point(lower_median(points));
}

ScriptedBackend::ScriptedBackend(std::vector<Step> steps) : steps_(std::move(steps)) {
  if (steps_.empty()) fail(ErrorCode::InvalidArgument, "scripted backend needs at least one step");
}

std::string ScriptedBackend::complete(const PromptBundle&, const GenerationConfig&) {
  std::lock_guard lock(mutex_);
  const auto& step = steps_[std::min(next_, steps_.size() - 1)];
  ++next_;
  if (step.error) fail(*step.error, step.reply.empty() ? "scripted failure" : step.reply);
  return step.reply;
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard lock(mutex_);
  return next_;
}

// ---------------------------------------------------------------------------

AuditLog::AuditLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app | std::ios::binary);
  if (!out_) fail(ErrorCode::Io, fmt::format("cannot open audit log '{}'", path.string()));
}

void AuditLog::append(const json& entry) {
  std::lock_guard lock(mutex_);
  out_ << to_jsonl_line(entry) << '\n';
  out_.flush();
}

Generator::Generator(std::shared_ptr<ChatBackend> backend, RetryPolicy policy, std::shared_ptr<AuditLog> audit)
    : backend_(std::move(backend)), policy_(policy), audit_(std::move(audit)) {
  if (!backend_) fail(ErrorCode::InvalidArgument, "generator needs a backend");
  policy_.max_attempts = std::max(policy_.max_attempts, 1);
}

GenerationOutcome Generator::generate(const PromptBundle& prompt, const GenerationConfig& config) {
  auto backoff = policy_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    json entry;
    if (audit_) {
      entry = {{"at", utc_now_iso8601()},
               {"model", config.model_id},
               {"temperature", config.temperature},
               {"max_tokens", config.max_tokens},
               {"seed", config.seed ? json(*config.seed) : json(nullptr)},
               {"attempt", attempt},
               {"system", prompt.system},
               {"user", prompt.user}};
    }
    try {
      std::string text = backend_->complete(prompt, config);
      if (audit_) {
        entry["reply"] = text;
        audit_->append(entry);
      }
      return GenerationOutcome{std::move(text), attempt};
    } catch (const Error& e) {
      if (audit_) {
        entry["error"] = e.what();
        audit_->append(entry);
      }
      if (e.code() != ErrorCode::Transport) throw;
      if (attempt >= policy_.max_attempts) {
        fail(ErrorCode::Generation, fmt::format("generation failed after {} attempts: {}", attempt, e.what()));
      }
    }
    if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
    backoff = std::chrono::milliseconds(static_cast<std::int64_t>(static_cast<double>(backoff.count()) * policy_.multiplier));
  }
}

}  // namespace sprag
