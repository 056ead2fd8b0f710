#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "retro/knowledge_store.hpp"

using namespace retro;

namespace {

KnowledgeStore random_store(std::mt19937_64& rng, std::size_t n, std::size_t d, std::size_t classes) {
  std::normal_distribution<double> nd;
  KnowledgeStore s(d, classes, KeyMode::PromptMask);
  Vector key(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : key) v = nd(rng);
    s.add({1000 + i, static_cast<std::uint32_t>(rng() % classes), 7}, key);
  }
  return s;
}

std::vector<Neighbor> oracle(const KnowledgeStore& s, const Vector& q, std::size_t k,
                             std::optional<std::uint64_t> exclude, std::optional<std::size_t> label = {}) {
  std::vector<Neighbor> all;
  const double div = std::sqrt(static_cast<double>(s.dim()));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& e = s.entry(i);
    if (exclude && e.source_id == *exclude) continue;
    if (label && e.label != *label) continue;
    double acc = 0.0;
    for (std::size_t c = 0; c < s.dim(); ++c) acc += q[c] * s.key(i)[c];
    all.push_back({i, acc / div, e.label, e.value_word, e.source_id});
  }
  std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.score != b.score ? a.score > b.score : a.source_id < b.source_id;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

Vector unit(std::size_t d, std::size_t i) {
  Vector v(d, 0.0);
  v[i] = 1.0;
  return v;
}

}  // namespace

TEST_CASE("search basics") {
  KnowledgeStore one(4, 2, KeyMode::PromptMask);
  one.add({5, 1, 9}, unit(4, 2));
  const auto r = search(one, unit(4, 0), 1);
  REQUIRE(r.size() == 1);
  CHECK(r[0].source_id == 5);

  KnowledgeStore ortho(4, 2, KeyMode::PromptMask);
  for (std::size_t i = 0; i < 4; ++i) ortho.add({i, static_cast<std::uint32_t>(i % 2), 0}, unit(4, i));
  CHECK(search(ortho, unit(4, 3), 2)[0].source_id == 3);
  CHECK(search(ortho, unit(4, 3), 10).size() == 4);
  CHECK(search(ortho, unit(4, 3), 10, 3).size() == 3);
  CHECK_THROWS_AS(search(KnowledgeStore(4, 2, KeyMode::PromptMask), unit(4, 0), 1), std::invalid_argument);
  CHECK_THROWS_AS(search(ortho, unit(3, 0), 1), DimensionError);
}

TEST_CASE("search ties break by ascending source id") {
  KnowledgeStore s(2, 2, KeyMode::PromptMask);
  s.add({9, 0, 0}, Vector{1, 0});
  s.add({3, 1, 0}, Vector{1, 0});
  s.add({5, 0, 0}, Vector{1, 0});
  const auto r = search(s, Vector{1, 0}, 3);
  CHECK(r[0].source_id == 3);
  CHECK(r[1].source_id == 5);
  CHECK(r[2].source_id == 9);
}

TEST_CASE("search equals a full-scan sort oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = random_store(rng, 100, 16, 3);
    Vector q(16);
    std::normal_distribution<double> nd;
    for (auto& v : q) v = nd(rng);
    const std::size_t k = 1 + rng() % 40;
    const std::optional<std::uint64_t> ex = trial % 2 ? std::optional<std::uint64_t>(1000 + rng() % 100) : std::nullopt;
    CHECK(search(s, q, k, ex) == oracle(s, q, k, ex));
    for (std::size_t l = 0; l < 3; ++l) CHECK(search_per_class(s, q, 1, l, ex) == oracle(s, q, 1, ex, l));
  }
}

TEST_CASE("search_per_class edge cases") {
  KnowledgeStore s(2, 2, KeyMode::PromptMask);
  s.add({0, 0, 0}, Vector{1, 0});
  s.add({1, 0, 0}, Vector{0, 1});
  s.add({2, 1, 0}, Vector{1, 1});
  const auto all0 = search_per_class(s, Vector{0, 2}, 10, 0);
  REQUIRE(all0.size() == 2);
  CHECK(all0[0].source_id == 1);
  CHECK(search_per_class(s, Vector{1, 0}, 1, 1, 2).empty());
}

TEST_CASE("build and refresh") {
  auto w = fixtures::tiny_world(3, 16);
  const auto store = build_store(w->rows, w->params, w->prompting);
  CHECK(store.size() == 32);
  CHECK(store.partition(0).size() == 16);
  CHECK(store.partition(1).size() == 16);

  const std::vector<Example> single(w->rows.begin(), w->rows.begin() + 1);
  const auto s1 = build_store(single, w->params, w->prompting);
  CHECK(s1.size() == 1);
  CHECK(s1.partition(w->rows[0].label).size() == 1);
  CHECK(s1.partition(1 - w->rows[0].label).empty());

  const auto cls = build_store(w->rows, w->params, w->prompting, {KeyMode::ClsToken, false, 0});
  CHECK(cls.entries() == store.entries());
  CHECK(cls.keys() != store.keys());

  const auto same = refresh_store(store, w->params, w->prompting, w->rows, 1);
  CHECK(same.keys() == store.keys());
  CHECK(same.built_at_epoch == 1);

  EncoderParams moved = w->params;
  fixtures::jitter(moved, 77, 0.01);
  const auto changed = refresh_store(store, moved, w->prompting, w->rows, 2);
  CHECK(changed.keys() != store.keys());
  CHECK(changed.entries() == store.entries());

  std::vector<Example> shuffled = w->rows;
  std::swap(shuffled[0], shuffled[1]);
  CHECK_THROWS(refresh_store(store, w->params, w->prompting, shuffled, 1));
}

TEST_CASE("normalised keys") {
  auto w = fixtures::tiny_world(8, 4);
  const auto s = build_store(w->rows, w->params, w->prompting, {KeyMode::PromptMask, true, 0});
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(norm2(s.key(i)) == doctest::Approx(1.0));
  Vector q(s.dim(), 0.0);
  q[0] = 5.0;
  const auto r = search(s, q, 1);
  Vector qn(s.dim(), 0.0);
  qn[0] = 1.0;
  CHECK(r[0].score == doctest::Approx(s.key(r[0].entry_index)[0] / std::sqrt(8.0)));
  CHECK(search(s, qn, 3) == search(s, q, 3));
}

TEST_CASE("store file round trip") {
  std::mt19937_64 rng(4);
  auto s = random_store(rng, 32, 8, 2);
  const auto path = std::filesystem::temp_directory_path() / "retro_store_test.rpks";
  save_store(s, path);
  const auto back = load_store(path);
  CHECK(back.entries() == s.entries());
  CHECK(back.num_classes() == 2);
  for (std::size_t i = 0; i < s.keys().size(); ++i) {
    CHECK(back.keys()[i] == static_cast<double>(static_cast<float>(s.keys()[i])));
  }
  CHECK(back.partition(0) == s.partition(0));

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  CHECK_THROWS_AS(load_store(path), ChecksumError);

  auto bytes = serialize_store(s);
  bytes[20] ^= 0x40;
  CHECK_THROWS_AS(deserialize_store(bytes), ChecksumError);
  CHECK_THROWS_AS(deserialize_store("NOPE"), FormatError);

  const KnowledgeStore empty(8, 2, KeyMode::ClsToken);
  save_store(empty, path);
  const auto e = load_store(path);
  CHECK(e.empty());
  CHECK(e.key_mode() == KeyMode::ClsToken);
  CHECK(std::filesystem::file_size(path) == 4 + 4 + 4 + 8 + 4 + 1 + 4);
  std::filesystem::remove(path);
}

TEST_CASE("bm25") {
  const std::vector<std::string> one{"apple"};
  const double idf = std::log((1.0 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0);
  const double want = idf * (1.0 * 2.5) / (1.0 + 1.5 * (1.0 - 0.75 + 0.75 * 1.0));
  CHECK(bm25_scores("apple", one)[0] == doctest::Approx(want).epsilon(1e-12));

  const std::vector<std::string> docs{"the cat sat", "dog runs fast", "the cat sat"};
  const auto s = bm25_scores("cat", docs);
  CHECK(s[1] == 0.0);
  CHECK(s[0] == s[2]);
  CHECK(s[0] > 0.0);

  // Two documents of different length: hand-evaluated.
  const std::vector<std::string> two{"a b", "a c c c"};
  const double avg = 3.0;
  const double idf_b = std::log((2.0 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0);
  const double want_b = idf_b * 2.5 / (1.0 + 1.5 * (1.0 - 0.75 + 0.75 * 2.0 / avg));
  const auto sb = bm25_scores("b", two);
  CHECK(sb[0] == doctest::Approx(want_b).epsilon(1e-12));
  CHECK(sb[1] == 0.0);
}
