#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retro/encoder.hpp"
#include "retro/example.hpp"
#include "retro/numerics.hpp"

namespace retro {

enum class KeyMode : std::uint8_t { PromptMask = 0, ClsToken = 1 };

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct StoreEntry {
  std::uint64_t source_id = 0;
  std::uint32_t label = 0;
  TokenId value_word = 0;

  friend bool operator==(const StoreEntry&, const StoreEntry&) = default;
};

struct Neighbor {
  std::size_t entry_index = 0;
  double score = 0.0;
  std::uint32_t label = 0;
  TokenId value_word = 0;
  std::uint64_t source_id = 0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// The open-book (key, value) store. Keys sit row-major in one n x d matrix so a
// query is a single contiguous scan; partitions index entries by label.
class KnowledgeStore {
 public:
  KnowledgeStore() = default;
  KnowledgeStore(std::size_t dim, std::size_t num_classes, KeyMode mode);

  void add(const StoreEntry& entry, std::span<const double> key);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t dim() const { return dim_; }
  std::size_t num_classes() const { return partitions_.size(); }
  KeyMode key_mode() const { return key_mode_; }

  const std::vector<StoreEntry>& entries() const { return entries_; }
  const StoreEntry& entry(std::size_t i) const { return entries_.at(i); }
  std::span<const double> key(std::size_t i) const { return {keys_.data() + i * dim_, dim_}; }
  std::span<double> mutable_key(std::size_t i) { return {keys_.data() + i * dim_, dim_}; }
  const std::vector<double>& keys() const { return keys_; }
  const std::vector<std::size_t>& partition(std::size_t label) const { return partitions_.at(label); }

  int built_at_epoch = 0;
  bool normalized_keys = false;

  friend bool operator==(const KnowledgeStore&, const KnowledgeStore&) = default;

 private:
  std::size_t dim_ = 0;
  KeyMode key_mode_ = KeyMode::PromptMask;
  std::vector<StoreEntry> entries_;
  std::vector<double> keys_;
  std::vector<std::vector<std::size_t>> partitions_;
};

struct StoreBuildOptions {
  KeyMode key_mode = KeyMode::PromptMask;
  bool normalize_keys = false;
  int epoch = 0;
};

// Key vector of one wrapped input under the current encoder.
Vector encode_key(const WrappedInput& wrapped, const EncoderParams& params, KeyMode mode);

KnowledgeStore build_store(std::span<const Example> corpus, const EncoderParams& params, const Prompting& prompting,
                           const StoreBuildOptions& options = {});

// Re-encodes every key; values, labels, source ids and partitions are untouched.
KnowledgeStore refresh_store(const KnowledgeStore& store, const EncoderParams& params, const Prompting& prompting,
                             std::span<const Example> corpus, int epoch);

// Divisor <= 0 selects the default sqrt(dim).
double similarity_divisor(const KnowledgeStore& store, double divisor);

// Exact top-k by (query . key) / divisor, descending; ties by ascending source_id.
std::vector<Neighbor> search(const KnowledgeStore& store, std::span<const double> query, std::size_t k,
                             std::optional<std::uint64_t> exclude = std::nullopt, double divisor = 0.0);

// As search, restricted to one class partition. An empty result is valid.
std::vector<Neighbor> search_per_class(const KnowledgeStore& store, std::span<const double> query, std::size_t m,
                                       std::size_t label, std::optional<std::uint64_t> exclude = std::nullopt,
                                       double divisor = 0.0);

// Little-endian "RPKS" v1 layout with a trailing CRC32; keys stored as float32.
void save_store(const KnowledgeStore& store, const std::filesystem::path& path);
KnowledgeStore load_store(const std::filesystem::path& path);
std::string serialize_store(const KnowledgeStore& store);
KnowledgeStore deserialize_store(std::string_view bytes);

// Okapi BM25 over split_words terms.
class Bm25Index {
 public:
  Bm25Index(std::span<const std::string> documents, double k1 = 1.5, double b = 0.75);

  Vector scores(std::string_view query) const;
  double idf(const std::string& term) const;
  std::size_t size() const { return doc_terms_.size(); }

 private:
  double k1_, b_;
  double avg_len_ = 0.0;
  std::vector<std::vector<std::pair<std::string, std::size_t>>> doc_terms_;
  std::vector<std::size_t> doc_len_;
  std::vector<std::pair<std::string, std::size_t>> doc_freq_;  // sorted by term
};

Vector bm25_scores(std::string_view query, std::span<const std::string> corpus, double k1 = 1.5, double b = 0.75);

// Text used for BM25 matching: all input texts joined by a space.
std::string example_text(const Example& ex);

}  // namespace retro
