#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "estimator.hpp"
#include "fileio.hpp"

namespace sprag {

struct EmbeddingSettings {
  std::string url;
  std::string model = "BAAI/bge-large-en-v1.5";
  std::string api_key;
  bool stub = false;
  std::size_t stub_dims = 256;
  double timeout_s = 60;
  std::size_t batch_size = 32;
};

struct GeneratorSettings {
  std::string url;
  std::string model = "Llama-3.2-3B-Instruct";
  std::string api_key;
  bool stub = false;
  int max_tokens = 16;
  std::optional<std::int64_t> seed;
  int max_attempts = 3;
  int backoff_ms = 500;
  double timeout_s = 60;
};

struct ServiceSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
};

// Everything a run needs. Loaded from a JSON document; unknown keys are
// rejected at any depth.
struct RunConfig {
  std::filesystem::path data_dir = "work/data";
  std::filesystem::path results_dir = "work/results";
  std::filesystem::path cache_dir = "work/cache";
  std::filesystem::path state_dir = "work/state";
  std::filesystem::path fixture = "data/results_table.csv";
  std::filesystem::path project_sizes = "data/project_sizes.csv";
  EmbeddingSettings embedding;
  GeneratorSettings generator;
  Grid grid;
  SizeGrouping size_groups = SizeGrouping::defaults();
  FilterOptions filter;
  std::vector<std::string> extra_log_patterns;
  std::size_t parallelism = 4;
  double split_ratio = 0.8;
  ServiceSettings service;
};

// Applies the keys present in `doc` over `base`. Unknown key or wrong type ->
// Error(Config) naming the key path.
RunConfig apply_config(RunConfig base, const json& doc);

RunConfig load_config(const std::filesystem::path& path);

// SPRAG_EMBED_URL, SPRAG_GEN_URL, SPRAG_API_KEY.
void apply_env_overrides(RunConfig& config);

// Cross-field checks; Error(Config) on the first violation.
void validate_config(const RunConfig& config);

json config_to_json(const RunConfig& config);

GenerationConfig generation_config(const RunConfig& config);

}  // namespace sprag
