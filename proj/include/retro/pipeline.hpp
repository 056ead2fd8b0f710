#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "retro/encoder.hpp"
#include "retro/knowledge_store.hpp"
#include "retro/retro_mechanism.hpp"

namespace retro {

enum class Acquisition { RepSimilar, Bm25 };

struct PipelineFlags {
  bool use_demo = true;       // neural demonstrations at the input
  bool use_knn_train = true;  // modulating factor in the loss
  bool use_knn_test = true;   // interpolation at inference
  Acquisition acquisition = Acquisition::RepSimilar;
  // Let the modulating factor carry gradient through the query representation.
  bool differentiate_factor = false;

  friend bool operator==(const PipelineFlags&, const PipelineFlags&) = default;
};

// A store snapshot plus what BM25 acquisition needs to score against it.
struct StoreContext {
  const KnowledgeStore* store = nullptr;
  const Bm25Index* bm25 = nullptr;  // documents aligned with store entries
};

struct InstanceResult {
  double loss = 0.0;
  double ce = 0.0;
  double factor = 0.0;
  Vector p_model;
  std::optional<KnnDistribution> knn;
  Vector p_final;
  std::vector<std::uint64_t> retrieved_ids;
};

// Glue for one instance: query encoding, retrieval, demonstration-augmented
// forward, loss and prediction, with exact gradients through all of it.
// Store keys are constants; the query representation is not.
class RetroPipeline {
 public:
  RetroPipeline(const Prompting& prompting, RetroConfig config, PipelineFlags flags = {});

  const RetroConfig& config() const { return config_; }
  const PipelineFlags& flags() const { return flags_; }
  const Prompting& prompting() const { return *prompting_; }

  std::size_t demo_neighbors() const { return flags_.use_demo ? config_.m : 0; }
  double effective_beta() const { return flags_.use_knn_train ? config_.beta : 0.0; }
  double effective_lambda() const { return flags_.use_knn_test ? config_.lambda : 0.0; }

  // Training loss with leave-one-out retrieval. When `grad` is non-empty,
  // grad_scale * dLoss/dtheta is added to it.
  InstanceResult train_loss(const EncoderParams& params, const StoreContext& ctx, const Example& ex,
                            std::span<double> grad = {}, double grad_scale = 1.0) const;

  // Interpolated class distribution; `lambda` overrides the configured weight.
  InstanceResult predict(const EncoderParams& params, const StoreContext& ctx, const Example& ex,
                         std::optional<std::uint64_t> exclude = std::nullopt,
                         std::optional<double> lambda = std::nullopt) const;

  // P(gold | x) of the interpolated prediction and, when `grad` is non-empty,
  // its gradient added into `grad`.
  double gold_probability(const EncoderParams& params, const StoreContext& ctx, const Example& ex,
                          std::optional<std::uint64_t> exclude, std::span<double> grad = {}) const;

 private:
  struct Trace;
  Trace run(const EncoderParams& params, const StoreContext& ctx, const Example& ex,
            std::optional<std::uint64_t> exclude, bool need_knn, bool need_cache) const;
  void backprop(const Trace& tr, const EncoderParams& params, std::span<const double> dlogits,
                std::span<const double> dknn_scores, std::span<double> grad) const;

  const Prompting* prompting_;
  RetroConfig config_;
  PipelineFlags flags_;
};

}  // namespace retro
