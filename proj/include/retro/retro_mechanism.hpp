#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "retro/encoder.hpp"
#include "retro/knowledge_store.hpp"
#include "retro/numerics.hpp"

namespace retro {

struct RetroConfig {
  std::size_t k = 16;          // neighbours for the kNN distribution
  std::size_t m = 1;           // neighbours per class for demonstrations
  double lambda = 0.2;         // interpolation weight on P_kNN
  double beta = 0.1;           // loss modulation scale
  double p_min = 1e-3;         // floor inside the modulating factor
  double sim_divisor = 0.0;    // <= 0 means sqrt(d)
  std::size_t refresh_period = 1;

  void validate() const;
  friend bool operator==(const RetroConfig&, const RetroConfig&) = default;
};

struct KnnDistribution {
  Vector probs;
  std::vector<std::pair<std::size_t, double>> contributing_neighbors;  // (entry index, score)
};

// m == 0 yields no slots. Empty partitions produce empty-marked slots.
DemoSlots build_neural_demonstration(std::span<const double> query_hidden, const KnowledgeStore& store,
                                     std::size_t m, std::optional<std::uint64_t> exclude = std::nullopt,
                                     double divisor = 0.0);

// Softmax-weighted label mass over the global top-k.
KnnDistribution knn_distribution(std::span<const double> query_hidden, const KnowledgeStore& store, std::size_t k,
                                 std::optional<std::uint64_t> exclude = std::nullopt, double divisor = 0.0);

// Same aggregation over already-scored neighbours (used for BM25 acquisition).
KnnDistribution knn_from_neighbors(std::span<const Neighbor> neighbors, std::size_t num_classes);

// Top-k entries by an externally supplied score per entry, same tie rule as search.
std::vector<Neighbor> top_k_by_scores(const KnowledgeStore& store, std::span<const double> scores, std::size_t k,
                                      std::optional<std::uint64_t> exclude = std::nullopt);

// F = -ln(max(p_gold, p_min))
double modulating_factor(double p_gold, double p_min);

// (1 + beta F) ce
double retro_loss(double ce_loss, double factor, double beta);

// lambda p_knn + (1 - lambda) p_model
Vector interpolate(std::span<const double> p_knn, std::span<const double> p_model, double lambda);

}  // namespace retro
