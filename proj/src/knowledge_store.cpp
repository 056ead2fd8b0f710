#include "retro/knowledge_store.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace retro {

static_assert(std::endian::native == std::endian::little, "store serialisation assumes a little-endian host");

KnowledgeStore::KnowledgeStore(std::size_t dim, std::size_t num_classes, KeyMode mode)
    : dim_(dim), key_mode_(mode), partitions_(num_classes) {
  if (dim == 0) throw std::invalid_argument("knowledge store: dim must be positive");
}

void KnowledgeStore::add(const StoreEntry& entry, std::span<const double> key) {
  check_same_dim(key.size(), dim_, "knowledge store key");
  if (entry.label >= partitions_.size()) {
    throw std::out_of_range("knowledge store: label " + std::to_string(entry.label) + " out of range for " +
                            std::to_string(partitions_.size()) + " classes");
  }
  if (!all_finite(key)) throw NumericError("knowledge store: non-finite key");
  partitions_[entry.label].push_back(entries_.size());
  entries_.push_back(entry);
  keys_.insert(keys_.end(), key.begin(), key.end());
}

Vector encode_key(const WrappedInput& wrapped, const EncoderParams& params, KeyMode mode) {
  const auto out = forward(embed(wrapped, params), params);
  if (mode == KeyMode::PromptMask) return out.mask_hidden;
  const auto cls = out.hidden_states.row(0);
  return Vector(cls.begin(), cls.end());
}

namespace {

void normalize_in_place(std::span<double> v) {
  const double n = norm2(v);
  if (n > 0.0) scale(v, 1.0 / n);
}

}  // namespace

KnowledgeStore build_store(std::span<const Example> corpus, const EncoderParams& params, const Prompting& prompting,
                           const StoreBuildOptions& options) {
  if (corpus.empty()) throw std::invalid_argument("build_store: empty corpus");
  KnowledgeStore store(params.config().dim, prompting.num_classes(), options.key_mode);
  store.built_at_epoch = options.epoch;
  store.normalized_keys = options.normalize_keys;
  for (const auto& ex : corpus) {
    if (ex.label >= prompting.num_classes()) {
      throw std::out_of_range("build_store: label " + std::to_string(ex.label) + " of source " +
                              std::to_string(ex.source_id) + " out of range");
    }
    Vector key = encode_key(prompting.wrap(ex), params, options.key_mode);
    if (options.normalize_keys) normalize_in_place(key);
    store.add({ex.source_id, ex.label, prompting.verbalizer.word(ex.label)}, key);
  }
  return store;
}

KnowledgeStore refresh_store(const KnowledgeStore& store, const EncoderParams& params, const Prompting& prompting,
                             std::span<const Example> corpus, int epoch) {
  if (corpus.size() != store.size()) {
    throw std::invalid_argument("refresh_store: corpus has " + std::to_string(corpus.size()) + " rows, store has " +
                                std::to_string(store.size()) + " entries");
  }
  KnowledgeStore out = store;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (corpus[i].source_id != store.entry(i).source_id) {
      throw std::invalid_argument("refresh_store: corpus row " + std::to_string(i) + " does not match store entry");
    }
    Vector key = encode_key(prompting.wrap(corpus[i]), params, store.key_mode());
    if (store.normalized_keys) normalize_in_place(key);
    std::copy(key.begin(), key.end(), out.mutable_key(i).begin());
  }
  out.built_at_epoch = epoch;
  return out;
}

double similarity_divisor(const KnowledgeStore& store, double divisor) {
  return divisor > 0.0 ? divisor : std::sqrt(static_cast<double>(store.dim()));
}

namespace {

std::vector<Neighbor> top_k(const KnowledgeStore& store, std::span<const double> query, std::size_t k,
                            std::optional<std::uint64_t> exclude, double divisor,
                            const std::vector<std::size_t>* candidates) {
  check_same_dim(query.size(), store.dim(), "search query");
  if (k == 0) throw std::invalid_argument("search: k must be at least 1");
  const double div = similarity_divisor(store, divisor);
  Vector q(query.begin(), query.end());
  if (store.normalized_keys) normalize_in_place(q);

  std::vector<Neighbor> scored;
  auto consider = [&](std::size_t i) {
    const auto& e = store.entry(i);
    if (exclude && e.source_id == *exclude) return;
    scored.push_back({i, dot(q, store.key(i)) / div, e.label, e.value_word, e.source_id});
  };
  if (candidates) {
    scored.reserve(candidates->size());
    for (std::size_t i : *candidates) consider(i);
  } else {
    scored.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) consider(i);
  }
  const std::size_t take = std::min(k, scored.size());
  auto before = [](const Neighbor& a, const Neighbor& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.source_id < b.source_id;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), before);
  scored.resize(take);
  return scored;
}

}  // namespace

std::vector<Neighbor> search(const KnowledgeStore& store, std::span<const double> query, std::size_t k,
                             std::optional<std::uint64_t> exclude, double divisor) {
  if (store.empty()) throw std::invalid_argument("search: empty store");
  return top_k(store, query, k, exclude, divisor, nullptr);
}

std::vector<Neighbor> search_per_class(const KnowledgeStore& store, std::span<const double> query, std::size_t m,
                                       std::size_t label, std::optional<std::uint64_t> exclude, double divisor) {
  return top_k(store, query, m, exclude, divisor, &store.partition(label));
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (at_ + sizeof(T) > bytes_.size()) throw FormatError("store file: truncated");
    T v;
    std::memcpy(&v, bytes_.data() + at_, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - at_; }

 private:
  std::string_view bytes_;
  std::size_t at_ = 0;
};

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::string serialize_store(const KnowledgeStore& store) {
  std::string out;
  out.reserve(29 + store.size() * (16 + 4 * store.dim()) + 4);
  out.append("RPKS", 4);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.dim()));
  put<std::uint64_t>(out, store.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.num_classes()));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(store.key_mode()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entry(i);
    put<std::uint64_t>(out, e.source_id);
    put<std::uint32_t>(out, e.label);
    put<std::uint32_t>(out, e.value_word);
    for (double x : store.key(i)) put<float>(out, static_cast<float>(x));
  }
  put<std::uint32_t>(out, crc_of(out));
  return out;
}

KnowledgeStore deserialize_store(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "RPKS") throw FormatError("store file: bad magic");
  if (bytes.size() < 8) throw ChecksumError("store file: checksum mismatch (file too short)");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  const auto body = bytes.substr(0, bytes.size() - 4);
  if (crc_of(body) != stored) throw ChecksumError("store file: checksum mismatch");

  Reader r(body.substr(4));
  if (r.get<std::uint32_t>() != 1) throw FormatError("store file: unsupported format version");
  const auto dim = r.get<std::uint32_t>();
  const auto n = r.get<std::uint64_t>();
  const auto classes = r.get<std::uint32_t>();
  const auto mode = r.get<std::uint8_t>();
  if (dim == 0 || mode > 1) throw FormatError("store file: malformed header");
  if (r.remaining() != n * (16 + 4ULL * dim)) throw FormatError("store file: entry block size mismatch");
  KnowledgeStore store(dim, classes, static_cast<KeyMode>(mode));
  Vector key(dim);
  for (std::uint64_t i = 0; i < n; ++i) {
    StoreEntry e;
    e.source_id = r.get<std::uint64_t>();
    e.label = r.get<std::uint32_t>();
    e.value_word = r.get<std::uint32_t>();
    for (auto& x : key) x = static_cast<double>(r.get<float>());
    store.add(e, key);
  }
  return store;
}

void save_store(const KnowledgeStore& store, const std::filesystem::path& path) {
  const auto bytes = serialize_store(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write store file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

KnowledgeStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read store file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_store(bytes);
}

std::string example_text(const Example& ex) {
  std::string s;
  for (const auto& t : ex.texts) {
    if (!s.empty()) s.push_back(' ');
    s += t;
  }
  return s;
}

}  // namespace retro
