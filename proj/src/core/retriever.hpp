#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corpus.hpp"

namespace sprag {

// Unit-L2-norm dense vector tagged with the model that produced it.
struct EmbeddingVector {
  std::string model_id;
  std::vector<double> values;

  std::size_t dims() const { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

// Scales raw backend output to unit norm. Zero or non-finite input -> Error(Normalization).
EmbeddingVector normalize_embedding(std::string model_id, std::vector<double> raw);

// "Title: {title}\nDescription: {description}"
std::string compose_embed_text(const Task& task);

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  // One raw (not necessarily normalized) vector per input text, in order.
  virtual std::vector<std::vector<double>> embed_batch(const std::string& model_id,
                                                       std::span<const std::string> texts) = 0;
  // Cache namespace; distinct backends must not share cached vectors.
  virtual std::string cache_namespace(const std::string& model_id) const = 0;
};

// Deterministic offline backend. Tokens are maximal runs of ASCII alphanumerics
// (and bytes >= 0x80), lowercased. Each token t adds sign(t) to bucket(t) where
// h = FNV-1a-64(t), bucket = h mod dims, sign = -1 if bit 32 of h is set else +1.
// Texts without tokens yield the zero vector.
class HashEmbedBackend final : public EmbeddingBackend {
 public:
  static constexpr const char* kName = "hash-embed";

  explicit HashEmbedBackend(std::size_t dims = 256);

  std::vector<std::vector<double>> embed_batch(const std::string& model_id,
                                               std::span<const std::string> texts) override;
  std::string cache_namespace(const std::string& model_id) const override;

  std::vector<double> embed_raw(std::string_view text) const;

 private:
  std::size_t dims_;
};

// POST {model, input:[...]} -> {data:[{embedding:[...], index?}, ...]}
class HttpEmbeddingBackend final : public EmbeddingBackend {
 public:
  HttpEmbeddingBackend(std::string url, std::string api_key, std::chrono::milliseconds timeout);

  std::vector<std::vector<double>> embed_batch(const std::string& model_id,
                                               std::span<const std::string> texts) override;
  std::string cache_namespace(const std::string& model_id) const override;

 private:
  std::string url_;
  std::string api_key_;
  std::chrono::milliseconds timeout_;
};

// Content-addressed vector cache keyed by (namespace, sha256(text)). With an
// empty directory it is memory-only. Files live at
// <dir>/<sanitized namespace>/<hash[0:2]>/<hash>.vec.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path dir = {});

  std::optional<std::vector<double>> get(const std::string& ns, const std::string& text_hash);
  void put(const std::string& ns, const std::string& text_hash, const std::vector<double>& values);

 private:
  std::filesystem::path file_for(const std::string& ns, const std::string& text_hash) const;
  std::mutex& stripe(const std::string& text_hash);

  std::filesystem::path dir_;
  std::mutex memory_mutex_;
  std::map<std::string, std::vector<double>> memory_;
  std::array<std::mutex, 32> stripes_;
};

// Backend + cache with bounded parallel batching.
class Embedder {
 public:
  Embedder(std::shared_ptr<EmbeddingBackend> backend, std::shared_ptr<EmbeddingCache> cache,
           std::size_t parallelism = 4, std::size_t batch_size = 32);

  EmbeddingVector embed(const std::string& model_id, const std::string& text);
  std::vector<EmbeddingVector> embed_many(const std::string& model_id,
                                          std::span<const std::string> texts);

  std::uint64_t backend_calls() const { return backend_calls_.load(); }
  std::uint64_t cache_hits() const { return cache_hits_.load(); }

 private:
  std::shared_ptr<EmbeddingBackend> backend_;
  std::shared_ptr<EmbeddingCache> cache_;
  std::size_t parallelism_;
  std::size_t batch_size_;
  std::atomic<std::uint64_t> backend_calls_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
};

inline EmbeddingVector embed_text(Embedder& embedder, const std::string& model_id,
                                  const std::string& text) {
  return embedder.embed(model_id, text);
}

// dot(a,b)/(|a||b|) clamped to [-1, 1].
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// Immutable per-project collection of training-task embeddings, in
// (created, issue_key) order.
class VectorIndex {
 public:
  VectorIndex(std::string model_id, std::vector<Task> tasks, std::vector<EmbeddingVector> vectors);

  const std::string& model_id() const { return model_id_; }
  std::size_t dims() const { return dims_; }
  std::size_t size() const { return tasks_.size(); }
  bool empty() const { return tasks_.empty(); }
  const Task& task(std::size_t i) const { return tasks_.at(i); }
  const EmbeddingVector& vector(std::size_t i) const { return vectors_.at(i); }

 private:
  std::string model_id_;
  std::size_t dims_ = 0;
  std::vector<Task> tasks_;
  std::vector<EmbeddingVector> vectors_;
};

VectorIndex build_index(const std::vector<Task>& train, Embedder& embedder, const std::string& model_id);

struct RetrievalResult {
  std::size_t entry = 0;  // position in the index
  std::string issue_key;
  double similarity = 0;
  std::size_t rank = 0;  // 1-based

  friend bool operator==(const RetrievalResult&, const RetrievalResult&) = default;
};

// k most similar entries, similarity descending; exact ties go to the older task.
// k larger than the index returns every entry.
std::vector<RetrievalResult> retrieve_top_k(const VectorIndex& index, const EmbeddingVector& query,
                                            std::size_t k);

}  // namespace sprag
