#include "corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "csv.hpp"
#include "error.hpp"

namespace sprag {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim_view(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool truthy(std::string_view s) {
  const auto v = lower(trim_view(s));
  return v == "1" || v == "true" || v == "yes" || v == "y" || v == "t";
}

// Empty -> nullopt (SP-missing); malformed -> error message.
std::optional<double> parse_story_point_cell(std::string_view cell, std::string& error) {
  cell = trim_view(cell);
  if (cell.empty()) return std::nullopt;
  double value = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
    error = fmt::format("unparseable storypoint '{}'", cell);
    return std::nullopt;
  }
  if (value < 0) {
    error = fmt::format("negative storypoint '{}'", cell);
    return std::nullopt;
  }
  return value;
}

constexpr std::array<const char*, 5> kRequired = {"issuekey", "created", "title", "description",
                                                  "storypoint"};

}  // namespace

bool chronologically_before(const Task& a, const Task& b) {
  if (a.created != b.created) return a.created < b.created;
  return a.issue_key < b.issue_key;
}

ParseResult parse_dataset(std::string_view raw, const std::string& project_id) {
  auto records = csv::parse(raw);
  if (records.empty()) fail(ErrorCode::Schema, "empty input: no header row");

  std::map<std::string, std::size_t> columns;
  for (std::size_t i = 0; i < records[0].fields.size(); ++i) {
    columns.emplace(lower(trim_view(records[0].fields[i])), i);
  }
  for (const char* name : kRequired) {
    if (!columns.count(name)) fail(ErrorCode::Schema, fmt::format("missing required column '{}'", name));
  }
  auto optional_column = [&](const char* name) -> std::optional<std::size_t> {
    auto it = columns.find(name);
    if (it == columns.end()) return std::nullopt;
    return it->second;
  };
  const auto status_col = optional_column("status");
  const auto resolution_col = optional_column("resolution");
  const auto changed_col = optional_column("changed_after_sp");

  ParseResult result;
  result.dataset.project_id = project_id;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    auto cell = [&](std::size_t col) -> std::string_view {
      return col < rec.fields.size() ? std::string_view(rec.fields[col]) : std::string_view();
    };
    RejectRecord reject{r, rec.line, std::string(trim_view(cell(columns["issuekey"]))), {}};
    if (rec.fields.size() != records[0].fields.size()) {
      reject.reason = fmt::format("expected {} fields, found {}", records[0].fields.size(),
                                  rec.fields.size());
      result.rejects.push_back(std::move(reject));
      continue;
    }
    if (reject.issue_key.empty()) {
      reject.reason = "missing issuekey";
      result.rejects.push_back(std::move(reject));
      continue;
    }
    const auto created = parse_iso8601(cell(columns["created"]));
    if (!created) {
      reject.reason = fmt::format("unparseable timestamp '{}'", cell(columns["created"]));
      result.rejects.push_back(std::move(reject));
      continue;
    }
    std::string sp_error;
    const auto sp = parse_story_point_cell(cell(columns["storypoint"]), sp_error);
    if (!sp_error.empty()) {
      reject.reason = std::move(sp_error);
      result.rejects.push_back(std::move(reject));
      continue;
    }

    Task task;
    task.project_id = project_id;
    task.issue_key = reject.issue_key;
    task.title = std::string(cell(columns["title"]));
    task.description = std::string(cell(columns["description"]));
    task.story_point = sp;
    task.created = *created;
    if (status_col) task.status = std::string(trim_view(cell(*status_col)));
    if (resolution_col) task.resolution = std::string(trim_view(cell(*resolution_col)));
    if (changed_col) task.changed_after_sp = truthy(cell(*changed_col));
    result.dataset.tasks.push_back(std::move(task));
  }
  std::stable_sort(result.dataset.tasks.begin(), result.dataset.tasks.end(), chronologically_before);
  return result;
}

std::string serialize_dataset_csv(const ProjectDataset& dataset) {
  std::string out = "issuekey,created,title,description,storypoint\n";
  for (const auto& t : dataset.tasks) {
    out += csv::join_row({t.issue_key, format_iso8601(t.created), t.title, t.description,
                          t.story_point ? format_story_point(*t.story_point) : std::string()});
    out.push_back('\n');
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cleaning

namespace {

std::size_t find_icase(std::string_view hay, std::string_view needle, std::size_t from) {
  if (needle.size() > hay.size()) return std::string_view::npos;
  for (std::size_t i = from; i + needle.size() <= hay.size(); ++i) {
    bool match = true;
    for (std::size_t k = 0; k < needle.size(); ++k) {
      if (std::tolower(static_cast<unsigned char>(hay[i + k])) !=
          std::tolower(static_cast<unsigned char>(needle[k]))) {
        match = false;
        break;
      }
    }
    if (match) return i;
  }
  return std::string_view::npos;
}

// Removes {tag}...{tag} and {tag:params}...{tag} pairs. Unclosed openers stay.
std::string strip_markup_blocks(std::string s, std::string_view tag) {
  const std::string open = "{" + std::string(tag);
  const std::string close = open + "}";
  std::size_t pos = 0;
  while ((pos = find_icase(s, open, pos)) != std::string::npos) {
    const std::size_t after = pos + open.size();
    if (after >= s.size() || (s[after] != '}' && s[after] != ':')) {
      pos = after;
      continue;
    }
    const std::size_t open_end = s.find('}', after);
    if (open_end == std::string::npos) break;
    const std::size_t close_pos = find_icase(s, close, open_end + 1);
    if (close_pos == std::string::npos) break;
    s.replace(pos, close_pos + close.size() - pos, " ");
    pos += 1;
  }
  return s;
}

std::string strip_fences(std::string s) {
  std::size_t pos = 0;
  while ((pos = s.find("```", pos)) != std::string::npos) {
    const std::size_t close = s.find("```", pos + 3);
    if (close == std::string::npos) break;
    s.replace(pos, close + 3 - pos, " ");
    pos += 1;
  }
  return s;
}

std::string strip_urls(std::string s) {
  static constexpr std::array<std::string_view, 4> kSchemes = {"https://", "http://", "ftp://", "www."};
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t best = std::string::npos;
    for (auto scheme : kSchemes) best = std::min(best, find_icase(s, scheme, pos));
    if (best == std::string::npos) break;
    std::size_t end = best;
    while (end < s.size() && !std::isspace(static_cast<unsigned char>(s[end]))) ++end;
    s.replace(best, end - best, " ");
    pos = best + 1;
  }
  return s;
}

// "at pkg.Class.method(File.java:42)"
bool is_stack_frame(std::string_view line) {
  line = trim_view(line);
  if (!line.starts_with("at") || line.size() < 4 || !std::isspace(static_cast<unsigned char>(line[2]))) {
    return false;
  }
  if (line.back() != ')') return false;
  const std::size_t open = line.find('(');
  const std::size_t colon = line.rfind(':');
  if (open == std::string_view::npos || colon == std::string_view::npos || colon < open) return false;
  const auto digits = line.substr(colon + 1, line.size() - colon - 2);
  return !digits.empty() &&
         std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

std::vector<std::regex> default_log_prefixes() {
  std::vector<std::regex> out;
  // leading ISO timestamp, optionally bracketed
  out.emplace_back(R"(\s*\[?\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2})");
  // leading syslog timestamp: "Jan  3 10:22:01"
  out.emplace_back(R"(\s*[A-Z][a-z]{2}\s+\d{1,2}\s+\d{2}:\d{2}:\d{2})");
  return out;
}

}  // namespace

TextCleaner::TextCleaner() : log_lines_(default_log_prefixes()) {}

TextCleaner::TextCleaner(const std::vector<std::string>& extra_log_patterns)
    : log_lines_(default_log_prefixes()) {
  for (const auto& p : extra_log_patterns) {
    try {
      log_lines_.emplace_back(p);
    } catch (const std::regex_error& e) {
      fail(ErrorCode::Config, fmt::format("invalid log pattern '{}': {}", p, e.what()));
    }
  }
}

std::string TextCleaner::clean_once(std::string_view text) const {
  std::string s = strip_markup_blocks(std::string(text), "code");
  s = strip_markup_blocks(std::move(s), "noformat");
  s = strip_fences(std::move(s));
  s = strip_urls(std::move(s));

  std::string kept;
  kept.reserve(s.size());
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find('\n', start);
    if (end == std::string::npos) end = s.size();
    std::string line = s.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // Patterns are anchored at line start (match_continuous).
    const bool is_log =
        is_stack_frame(line) ||
        std::any_of(log_lines_.begin(), log_lines_.end(), [&](const std::regex& re) {
          return std::regex_search(line, re, std::regex_constants::match_continuous);
        });
    if (!is_log) {
      kept += line;
      kept.push_back('\n');
    }
    start = end + 1;
  }

  std::string out;
  out.reserve(kept.size());
  bool pending_space = false;
  for (char c : kept) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string TextCleaner::clean(std::string_view text) const {
  // A removal can expose a new match (e.g. a code block splitting a URL), so run
  // to a fixed point.
  std::string current = clean_once(text);
  for (int i = 0; i < 8; ++i) {
    std::string next = clean_once(current);
    if (next == current) break;
    current = std::move(next);
  }
  return current;
}

std::string clean_text(std::string_view text) {
  static const TextCleaner cleaner;
  return cleaner.clean(text);
}

// ---------------------------------------------------------------------------
// Filtering and splitting

namespace {

bool is_addressed(const Task& t) {
  const auto status = lower(t.status);
  const auto resolution = lower(t.resolution);
  const bool closed = status == "closed" || status == "resolved" || status == "done";
  const bool fixed = resolution == "fixed" || resolution == "done" || resolution == "complete" ||
                     resolution == "completed";
  return closed && fixed;
}

}  // namespace

FilterResult filter_with_reasons(const std::vector<Task>& tasks, const ScaleDef& scale,
                                 const FilterOptions& options) {
  FilterResult out;
  for (const auto& t : tasks) {
    std::string reason;
    if (clean_text(t.title).empty()) {
      reason = "empty title";
    } else if (clean_text(t.description).empty()) {
      reason = "empty description";
    } else if (!t.story_point) {
      reason = "no story point assigned";
    } else if (!scale.contains(*t.story_point)) {
      reason = fmt::format("story point {} not on scale", format_story_point(*t.story_point));
    } else if (options.drop_changed_after_sp && t.changed_after_sp) {
      reason = "fields changed after story point assignment";
    } else if (options.require_addressed && !is_addressed(t)) {
      reason = "not addressed";
    }
    if (reason.empty()) {
      out.kept.push_back(t);
    } else {
      out.dropped.push_back(RejectRecord{0, 0, t.issue_key, std::move(reason)});
    }
  }
  return out;
}

std::vector<Task> filter_valid(const std::vector<Task>& tasks, const ScaleDef& scale) {
  return filter_with_reasons(tasks, scale).kept;
}

SplitDataset chronological_split(const ProjectDataset& dataset, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    fail(ErrorCode::InvalidArgument, fmt::format("split ratio {} outside (0, 1)", ratio));
  }
  const std::size_t n = dataset.tasks.size();
  if (n < 5) {
    fail(ErrorCode::InsufficientData,
         fmt::format("project '{}' has {} tasks; at least 5 required", dataset.project_id, n));
  }
  // The epsilon absorbs representation error in ratio*n at exact integers.
  auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  SplitDataset split;
  split.ratio = ratio;
  split.train.assign(dataset.tasks.begin(), dataset.tasks.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(dataset.tasks.begin() + static_cast<std::ptrdiff_t>(n_train), dataset.tasks.end());
  return split;
}

const char* to_string(SizeLabel label) {
  switch (label) {
    case SizeLabel::Small: return "Small";
    case SizeLabel::Mid: return "Mid";
    case SizeLabel::Large: return "Large";
  }
  return "?";
}

SizeLabel parse_size_label(std::string_view text) {
  const auto v = lower(trim_view(text));
  if (v == "small") return SizeLabel::Small;
  if (v == "mid" || v == "medium" || v == "mid-sized") return SizeLabel::Mid;
  if (v == "large") return SizeLabel::Large;
  fail(ErrorCode::InvalidArgument, fmt::format("unknown size group '{}'", text));
}

SizeGrouping SizeGrouping::defaults() {
  SizeGrouping g;
  g.overrides.emplace("Core Server", SizeLabel::Small);
  g.overrides.emplace("DotNetNuke Platform", SizeLabel::Mid);
  return g;
}

SizeLabel SizeGrouping::assign(const std::string& project_id, std::size_t task_count) const {
  if (auto it = overrides.find(project_id); it != overrides.end()) return it->second;
  if (task_count <= small_max) return SizeLabel::Small;
  if (task_count <= mid_max) return SizeLabel::Mid;
  return SizeLabel::Large;
}

IngestResult ingest(std::string_view raw, const std::string& project_id, const ScaleDef& scale,
                    const IngestOptions& options) {
  auto parsed = parse_dataset(raw, project_id);
  const TextCleaner cleaner(options.extra_log_patterns);
  for (auto& t : parsed.dataset.tasks) {
    t.title = cleaner.clean(t.title);
    t.description = cleaner.clean(t.description);
  }
  IngestResult result;
  result.parsed_rows = parsed.dataset.tasks.size() + parsed.rejects.size();
  auto filtered = filter_with_reasons(parsed.dataset.tasks, scale, options.filter);
  result.corpus.project_id = project_id;
  result.corpus.tasks = std::move(filtered.kept);
  result.rejects = std::move(parsed.rejects);
  result.rejects.insert(result.rejects.end(), filtered.dropped.begin(), filtered.dropped.end());
  return result;
}

// ---------------------------------------------------------------------------
// Record files

json task_to_json(const Task& t) {
  json j = {{"project_id", t.project_id},
            {"issue_key", t.issue_key},
            {"title", t.title},
            {"description", t.description},
            {"story_point", t.story_point ? json(*t.story_point) : json(nullptr)},
            {"created", format_iso8601(t.created)}};
  if (!t.status.empty()) j["status"] = t.status;
  if (!t.resolution.empty()) j["resolution"] = t.resolution;
  if (t.changed_after_sp) j["changed_after_sp"] = true;
  return j;
}

Task task_from_json(const json& j) {
  try {
    Task t;
    t.project_id = j.at("project_id").get<std::string>();
    t.issue_key = j.at("issue_key").get<std::string>();
    t.title = j.at("title").get<std::string>();
    t.description = j.at("description").get<std::string>();
    if (!j.at("story_point").is_null()) t.story_point = j.at("story_point").get<double>();
    const auto created = parse_iso8601(j.at("created").get<std::string>());
    if (!created) fail(ErrorCode::Schema, fmt::format("task '{}': bad created timestamp", t.issue_key));
    t.created = *created;
    t.status = j.value("status", "");
    t.resolution = j.value("resolution", "");
    t.changed_after_sp = j.value("changed_after_sp", false);
    return t;
  } catch (const json::exception& e) {
    fail(ErrorCode::Schema, fmt::format("malformed task record: {}", e.what()));
  }
}

json reject_to_json(const RejectRecord& r) {
  return {{"row", r.row}, {"line", r.line}, {"issue_key", r.issue_key}, {"reason", r.reason}};
}

void write_tasks(const std::filesystem::path& path, const std::vector<Task>& tasks) {
  std::vector<json> records;
  records.reserve(tasks.size());
  for (const auto& t : tasks) records.push_back(task_to_json(t));
  write_jsonl(path, records);
}

std::vector<Task> read_tasks(const std::filesystem::path& path) {
  std::vector<Task> out;
  for (const auto& j : read_jsonl(path)) out.push_back(task_from_json(j));
  return out;
}

}  // namespace sprag
