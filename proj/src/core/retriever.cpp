#include "retriever.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "error.hpp"
#include "hashing.hpp"
#include "http.hpp"
#include "parallel.hpp"

namespace sprag {

EmbeddingVector normalize_embedding(std::string model_id, std::vector<double> raw) {
  if (raw.empty()) fail(ErrorCode::Normalization, "backend returned an empty vector");
  double sum_sq = 0;
  for (double v : raw) {
    if (!std::isfinite(v)) fail(ErrorCode::Normalization, "backend returned a non-finite component");
    sum_sq += v * v;
  }
  if (sum_sq == 0) fail(ErrorCode::Normalization, "cannot normalize a zero vector");
  const double norm = std::sqrt(sum_sq);
  for (double& v : raw) v /= norm;
  return EmbeddingVector{std::move(model_id), std::move(raw)};
}

std::string compose_embed_text(const Task& task) {
  return "Title: " + task.title + "\nDescription: " + task.description;
}

// ---------------------------------------------------------------------------

HashEmbedBackend::HashEmbedBackend(std::size_t dims) : dims_(dims) {
  if (dims_ == 0) fail(ErrorCode::InvalidArgument, "hash-embed dims must be positive");
}

std::vector<double> HashEmbedBackend::embed_raw(std::string_view text) const {
  std::vector<double> v(dims_, 0.0);
  auto is_token_byte = [](unsigned char c) { return std::isalnum(c) || c >= 0x80; };
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    const std::uint64_t h = fnv1a64(token);
    const std::size_t bucket = static_cast<std::size_t>(h % dims_);
    v[bucket] += ((h >> 32) & 1U) ? -1.0 : 1.0;
    token.clear();
  };
  for (unsigned char c : text) {
    if (is_token_byte(c)) {
      token.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    } else {
      flush();
    }
  }
  flush();
  return v;
}

std::vector<std::vector<double>> HashEmbedBackend::embed_batch(const std::string&,
                                                               std::span<const std::string> texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_raw(t));
  return out;
}

std::string HashEmbedBackend::cache_namespace(const std::string& model_id) const {
  return fmt::format("{}-{}/{}", kName, dims_, model_id);
}

// ---------------------------------------------------------------------------

HttpEmbeddingBackend::HttpEmbeddingBackend(std::string url, std::string api_key,
                                           std::chrono::milliseconds timeout)
    : url_(std::move(url)), api_key_(std::move(api_key)), timeout_(timeout) {
  if (url_.empty()) fail(ErrorCode::Config, "embedding backend url is not configured");
}

std::vector<std::vector<double>> HttpEmbeddingBackend::embed_batch(const std::string& model_id,
                                                                   std::span<const std::string> texts) {
  json body = {{"model", model_id}, {"input", json::array()}};
  for (const auto& t : texts) body["input"].push_back(t);
  std::map<std::string, std::string> headers;
  if (!api_key_.empty()) headers["Authorization"] = "Bearer " + api_key_;

  const auto reply = post_json(url_, body.dump(), headers, timeout_);
  if (reply.status < 200 || reply.status >= 300) {
    fail(ErrorCode::Transport, fmt::format("embedding backend returned status {}: {}", reply.status,
                                           reply.body.substr(0, 200)));
  }
  try {
    const auto parsed = json::parse(reply.body);
    const auto& data = parsed.at("data");
    if (data.size() != texts.size()) {
      fail(ErrorCode::Transport, fmt::format("embedding backend returned {} vectors for {} inputs",
                                             data.size(), texts.size()));
    }
    std::vector<std::vector<double>> out(texts.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t slot = data[i].contains("index") ? data[i]["index"].get<std::size_t>() : i;
      if (slot >= out.size()) fail(ErrorCode::Transport, "embedding backend returned an out-of-range index");
      out[slot] = data[i].at("embedding").get<std::vector<double>>();
    }
    return out;
  } catch (const json::exception& e) {
    fail(ErrorCode::Transport, fmt::format("malformed embedding response: {}", e.what()));
  }
}

std::string HttpEmbeddingBackend::cache_namespace(const std::string& model_id) const {
  return model_id;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kVecMagic[8] = {'S', 'P', 'R', 'V', 'E', 'C', '1', '\0'};

}  // namespace

EmbeddingCache::EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path EmbeddingCache::file_for(const std::string& ns, const std::string& text_hash) const {
  return dir_ / safe_path_component(ns) / text_hash.substr(0, 2) / (text_hash + ".vec");
}

std::mutex& EmbeddingCache::stripe(const std::string& text_hash) {
  return stripes_[fnv1a64(text_hash) % stripes_.size()];
}

std::optional<std::vector<double>> EmbeddingCache::get(const std::string& ns, const std::string& text_hash) {
  const std::string key = ns + '\n' + text_hash;
  {
    std::lock_guard lock(memory_mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  if (dir_.empty()) return std::nullopt;

  std::lock_guard lock(stripe(text_hash));
  std::ifstream in(file_for(ns, text_hash), std::ios::binary);
  if (!in) return std::nullopt;
  char magic[8];
  std::uint32_t dims = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kVecMagic, sizeof magic) != 0 ||
      !in.read(reinterpret_cast<char*>(&dims), sizeof dims) || dims == 0) {
    return std::nullopt;  // corrupt entries count as misses and get rewritten
  }
  std::vector<double> values(dims);
  if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(dims * sizeof(double)))) {
    return std::nullopt;
  }
  std::lock_guard mem(memory_mutex_);
  memory_.emplace(key, values);
  return values;
}

void EmbeddingCache::put(const std::string& ns, const std::string& text_hash,
                         const std::vector<double>& values) {
  {
    std::lock_guard lock(memory_mutex_);
    memory_[ns + '\n' + text_hash] = values;
  }
  if (dir_.empty()) return;

  std::lock_guard lock(stripe(text_hash));
  const auto path = file_for(ns, text_hash);
  std::string blob(kVecMagic, sizeof kVecMagic);
  const auto dims = static_cast<std::uint32_t>(values.size());
  blob.append(reinterpret_cast<const char*>(&dims), sizeof dims);
  blob.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
  write_file_atomic(path, blob);
}

// ---------------------------------------------------------------------------

Embedder::Embedder(std::shared_ptr<EmbeddingBackend> backend, std::shared_ptr<EmbeddingCache> cache,
                   std::size_t parallelism, std::size_t batch_size)
    : backend_(std::move(backend)),
      cache_(cache ? std::move(cache) : std::make_shared<EmbeddingCache>()),
      parallelism_(std::max<std::size_t>(parallelism, 1)),
      batch_size_(std::max<std::size_t>(batch_size, 1)) {
  if (!backend_) fail(ErrorCode::InvalidArgument, "embedder needs a backend");
}

EmbeddingVector Embedder::embed(const std::string& model_id, const std::string& text) {
  return std::move(embed_many(model_id, std::span<const std::string>(&text, 1)).front());
}

std::vector<EmbeddingVector> Embedder::embed_many(const std::string& model_id,
                                                  std::span<const std::string> texts) {
  const std::string ns = backend_->cache_namespace(model_id);
  std::vector<std::string> hashes(texts.size());
  std::vector<std::optional<std::vector<double>>> raw(texts.size());
  std::vector<std::size_t> misses;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    hashes[i] = sha256_hex(texts[i]);
    raw[i] = cache_->get(ns, hashes[i]);
    if (raw[i]) {
      ++cache_hits_;
    } else {
      misses.push_back(i);
    }
  }

  const std::size_t batches = (misses.size() + batch_size_ - 1) / batch_size_;
  parallel_for(batches, parallelism_, [&](std::size_t b) {
    const std::size_t begin = b * batch_size_;
    const std::size_t end = std::min(misses.size(), begin + batch_size_);
    std::vector<std::string> batch;
    for (std::size_t m = begin; m < end; ++m) batch.push_back(texts[misses[m]]);
    ++backend_calls_;
    auto vectors = backend_->embed_batch(model_id, batch);
    if (vectors.size() != batch.size()) {
      fail(ErrorCode::Transport, "embedding backend returned the wrong number of vectors");
    }
    for (std::size_t m = begin; m < end; ++m) {
      auto& v = vectors[m - begin];
      // Normalize before caching so degenerate vectors never enter the cache.
      auto unit = normalize_embedding(model_id, std::move(v));
      cache_->put(ns, hashes[misses[m]], unit.values);
      raw[misses[m]] = std::move(unit.values);
    }
  });

  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    // Cached values were normalized on insert.
    EmbeddingVector vec{model_id, std::move(*raw[i])};
    if (!out.empty() && vec.dims() != out.front().dims()) {
      fail(ErrorCode::Dimension, fmt::format("model '{}' produced vectors of {} and {} dims", model_id,
                                             out.front().dims(), vec.dims()));
    }
    out.push_back(std::move(vec));
  }
  return out;
}

// ---------------------------------------------------------------------------

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dims() != b.dims()) {
    fail(ErrorCode::Dimension, fmt::format("dimension mismatch: {} vs {}", a.dims(), b.dims()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0 || nb == 0) fail(ErrorCode::UndefinedSimilarity, "cosine similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

VectorIndex::VectorIndex(std::string model_id, std::vector<Task> tasks, std::vector<EmbeddingVector> vectors)
    : model_id_(std::move(model_id)), tasks_(std::move(tasks)), vectors_(std::move(vectors)) {
  if (tasks_.size() != vectors_.size()) fail(ErrorCode::InvalidArgument, "index tasks/vectors size mismatch");
  for (const auto& v : vectors_) {
    if (v.model_id != model_id_) {
      fail(ErrorCode::Dimension, fmt::format("vector from model '{}' in index for '{}'", v.model_id, model_id_));
    }
    if (dims_ == 0) dims_ = v.dims();
    if (v.dims() != dims_) fail(ErrorCode::Dimension, "index vectors have mixed dimensions");
  }
}

VectorIndex build_index(const std::vector<Task>& train, Embedder& embedder, const std::string& model_id) {
  if (train.empty()) fail(ErrorCode::InsufficientData, "cannot build an index from an empty training set");
  std::vector<std::string> texts;
  texts.reserve(train.size());
  for (const auto& t : train) texts.push_back(compose_embed_text(t));
  try {
    auto vectors = embedder.embed_many(model_id, texts);
    return VectorIndex(model_id, train, std::move(vectors));
  } catch (const Error& batch_error) {
    // Pin the failure on a task; successful vectors are cached by now.
    for (std::size_t i = 0; i < texts.size(); ++i) {
      try {
        embedder.embed(model_id, texts[i]);
      } catch (const Error& e) {
        fail(e.code(), fmt::format("embedding task '{}' failed: {}", train[i].issue_key, e.what()));
      }
    }
    throw;
  }
}

std::vector<RetrievalResult> retrieve_top_k(const VectorIndex& index, const EmbeddingVector& query,
                                            std::size_t k) {
  if (index.empty()) fail(ErrorCode::InsufficientData, "cannot retrieve from an empty index");
  if (k == 0) fail(ErrorCode::InvalidArgument, "top_k must be positive");
  if (query.dims() != index.dims()) {
    fail(ErrorCode::Dimension,
         fmt::format("query has {} dims, index '{}' has {}", query.dims(), index.model_id(), index.dims()));
  }

  std::vector<double> sims(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& v = index.vector(i).values;
    double dot = 0;
    for (std::size_t d = 0; d < v.size(); ++d) dot += v[d] * query.values[d];
    sims[i] = std::clamp(dot, -1.0, 1.0);
  }

  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(k, order.size());
  // Index order is chronological, so the lower entry is the older task.
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (sims[a] != sims[b]) return sims[a] > sims[b];
                      return a < b;
                    });

  std::vector<RetrievalResult> out;
  out.reserve(take);
  for (std::size_t r = 0; r < take; ++r) {
    const std::size_t e = order[r];
    out.push_back(RetrievalResult{e, index.task(e).issue_key, sims[e], r + 1});
  }
  return out;
}

}  // namespace sprag
