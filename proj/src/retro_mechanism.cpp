#include "retro/retro_mechanism.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace retro {

void RetroConfig::validate() const {
  if (k < 1) throw std::invalid_argument("retro config: k must be at least 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("retro config: lambda must lie in [0, 1]");
  if (!(beta >= 0.0)) throw std::invalid_argument("retro config: beta must be non-negative");
  if (!(p_min > 0.0 && p_min < 1.0)) throw std::invalid_argument("retro config: p_min must lie in (0, 1)");
  if (refresh_period < 1) throw std::invalid_argument("retro config: refresh period must be at least 1");
}

DemoSlots build_neural_demonstration(std::span<const double> query_hidden, const KnowledgeStore& store,
                                     std::size_t m, std::optional<std::uint64_t> exclude, double divisor) {
  DemoSlots out;
  if (m == 0) return out;
  check_same_dim(query_hidden.size(), store.dim(), "neural demonstration query");
  out.slots.resize(store.num_classes());
  for (std::size_t l = 0; l < store.num_classes(); ++l) {
    auto& slot = out.slots[l];
    const auto neighbors = search_per_class(store, query_hidden, m, l, exclude, divisor);
    if (neighbors.empty()) continue;
    Vector scores;
    for (const auto& n : neighbors) scores.push_back(n.score);
    slot.weights = stable_softmax(scores);
    slot.aggregated.assign(store.dim(), 0.0);
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
      axpy(slot.weights[i], store.key(neighbors[i].entry_index), slot.aggregated);
      slot.neighbor_entries.push_back(neighbors[i].entry_index);
      slot.neighbor_ids.push_back(neighbors[i].source_id);
    }
    slot.label_word = neighbors.front().value_word;
    slot.empty = false;
  }
  return out;
}

KnnDistribution knn_from_neighbors(std::span<const Neighbor> neighbors, std::size_t num_classes) {
  if (neighbors.empty()) throw std::invalid_argument("knn distribution: no neighbours retrieved");
  KnnDistribution out;
  out.probs.assign(num_classes, 0.0);
  double max_score = neighbors.front().score;
  for (const auto& n : neighbors) max_score = std::max(max_score, n.score);
  double total = 0.0;
  for (const auto& n : neighbors) {
    if (n.label >= num_classes) throw std::out_of_range("knn distribution: neighbour label out of range");
    const double w = std::exp(n.score - max_score);
    out.probs[n.label] += w;
    total += w;
    out.contributing_neighbors.emplace_back(n.entry_index, n.score);
  }
  for (double& p : out.probs) p /= total;
  return out;
}

KnnDistribution knn_distribution(std::span<const double> query_hidden, const KnowledgeStore& store, std::size_t k,
                                 std::optional<std::uint64_t> exclude, double divisor) {
  if (store.empty()) throw std::invalid_argument("knn distribution: empty store");
  const auto neighbors = search(store, query_hidden, k, exclude, divisor);
  if (neighbors.empty()) throw std::invalid_argument("knn distribution: store is empty after exclusion");
  return knn_from_neighbors(neighbors, store.num_classes());
}

std::vector<Neighbor> top_k_by_scores(const KnowledgeStore& store, std::span<const double> scores, std::size_t k,
                                      std::optional<std::uint64_t> exclude) {
  check_same_dim(scores.size(), store.size(), "external scores");
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entry(i);
    if (exclude && e.source_id == *exclude) continue;
    all.push_back({i, scores[i], e.label, e.value_word, e.source_id});
  }
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.source_id < b.source_id;
                    });
  all.resize(take);
  return all;
}

double modulating_factor(double p_gold, double p_min) {
  if (!(p_gold >= 0.0 && p_gold <= 1.0)) {
    throw std::invalid_argument("modulating_factor: p_gold must lie in [0, 1]");
  }
  return -std::log(std::max(p_gold, p_min));
}

double retro_loss(double ce_loss, double factor, double beta) { return (1.0 + beta * factor) * ce_loss; }

Vector interpolate(std::span<const double> p_knn, std::span<const double> p_model, double lambda) {
  check_same_dim(p_knn.size(), p_model.size(), "interpolate");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("interpolate: lambda must lie in [0, 1]");
  Vector out(p_knn.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * p_knn[i] + (1.0 - lambda) * p_model[i];
  return out;
}

}  // namespace retro
