#include "retro/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace retro {

struct RetroPipeline::Trace {
  ForwardCache raw_cache;
  EncodeOutput raw_out;
  bool augmented = false;
  ForwardCache aug_cache;
  EncodeOutput aug_out;
  DemoSlots slots;
  const KnowledgeStore* store = nullptr;
  std::size_t query_row = 0;  // hidden-state row used as the store query
  Vector query;
  double divisor = 1.0;
  bool normalized_query = false;
  std::vector<Neighbor> knn_neighbors;
  bool knn_differentiable = false;
  std::optional<KnnDistribution> knn;
  Vector p_model;
  std::vector<std::uint64_t> retrieved_ids;

  const EncodeOutput& model_out() const { return augmented ? aug_out : raw_out; }
};

RetroPipeline::RetroPipeline(const Prompting& prompting, RetroConfig config, PipelineFlags flags)
    : prompting_(&prompting), config_(config), flags_(flags) {
  config_.validate();
}

RetroPipeline::Trace RetroPipeline::run(const EncoderParams& params, const StoreContext& ctx, const Example& ex,
                                        std::optional<std::uint64_t> exclude, bool need_knn, bool need_cache) const {
  Trace tr;
  const auto wrapped = prompting_->wrap(ex);
  const auto raw = embed(wrapped, params);
  tr.raw_out = forward(raw, params, need_cache ? &tr.raw_cache : nullptr);

  const KnowledgeStore* store = ctx.store;
  if (store && !store->empty()) {
    tr.store = store;
    tr.query_row = store->key_mode() == KeyMode::PromptMask ? wrapped.mask_position : 0;
    const auto q = tr.raw_out.hidden_states.row(tr.query_row);
    tr.query.assign(q.begin(), q.end());
    tr.divisor = similarity_divisor(*store, config_.sim_divisor);
    tr.normalized_query = store->normalized_keys;

    if (demo_neighbors() > 0) {
      tr.slots = build_neural_demonstration(tr.query, *store, demo_neighbors(), exclude, config_.sim_divisor);
      for (const auto& s : tr.slots.slots) tr.retrieved_ids.insert(tr.retrieved_ids.end(), s.neighbor_ids.begin(), s.neighbor_ids.end());
    }
    if (need_knn) {
      if (flags_.acquisition == Acquisition::Bm25) {
        if (!ctx.bm25) throw std::invalid_argument("pipeline: BM25 acquisition needs a BM25 index over the store corpus");
        const auto scores = ctx.bm25->scores(example_text(ex));
        tr.knn_neighbors = top_k_by_scores(*store, scores, config_.k, exclude);
      } else {
        tr.knn_neighbors = search(*store, tr.query, config_.k, exclude, config_.sim_divisor);
        tr.knn_differentiable = true;
      }
      if (!tr.knn_neighbors.empty()) {
        tr.knn = knn_from_neighbors(tr.knn_neighbors, store->num_classes());
        for (const auto& n : tr.knn_neighbors) tr.retrieved_ids.push_back(n.source_id);
      }
    }
  }

  if (tr.slots.active() > 0) {
    tr.augmented = true;
    tr.aug_out = forward(concat_demonstrations(raw, tr.slots, params), params, need_cache ? &tr.aug_cache : nullptr);
  }
  tr.p_model = class_probs(tr.model_out().vocab_logits, prompting_->verbalizer);
  return tr;
}

void RetroPipeline::backprop(const Trace& tr, const EncoderParams& params, std::span<const double> dlogits,
                             std::span<const double> dknn_scores, std::span<double> grad) const {
  const std::size_t d = params.config().dim;
  Vector dquery(d, 0.0);  // gradient w.r.t. the query as used in scoring
  bool has_query_grad = false;

  if (tr.augmented) {
    DenseMatrix input_grad;
    backward(dlogits, nullptr, tr.aug_cache, params, grad, &input_grad);
    // Each active slot appended an aggregated row followed by its label-word row.
    std::size_t row = tr.raw_cache.hidden.rows();
    for (const auto& slot : tr.slots.slots) {
      if (slot.empty) continue;
      const auto g = input_grad.row(row);
      row += 2;
      // aggregated = sum_i alpha_i key_i with alpha = softmax(scores)
      const double g_agg = dot(g, slot.aggregated);
      for (std::size_t i = 0; i < slot.neighbor_entries.size(); ++i) {
        const auto key = tr.store->key(slot.neighbor_entries[i]);
        const double dscore = slot.weights[i] * (dot(g, key) - g_agg);
        if (dscore == 0.0) continue;
        axpy(dscore / tr.divisor, key, dquery);
        has_query_grad = true;
      }
    }
  }

  if (!dknn_scores.empty() && tr.knn_differentiable) {
    check_same_dim(dknn_scores.size(), tr.knn_neighbors.size(), "knn score gradient");
    for (std::size_t i = 0; i < dknn_scores.size(); ++i) {
      if (dknn_scores[i] == 0.0) continue;
      axpy(dknn_scores[i] / tr.divisor, tr.store->key(tr.knn_neighbors[i].entry_index), dquery);
      has_query_grad = true;
    }
  }

  const std::span<const double> raw_dlogits = tr.augmented ? std::span<const double>{} : dlogits;
  if (!has_query_grad) {
    if (!tr.augmented) backward(raw_dlogits, nullptr, tr.raw_cache, params, grad);
    return;
  }
  if (tr.normalized_query) {
    // q_hat = q / |q|  =>  dq = (dq_hat - q_hat (q_hat . dq_hat)) / |q|
    const double n = norm2(tr.query);
    if (n > 0.0) {
      Vector qhat = tr.query;
      scale(qhat, 1.0 / n);
      const double proj = dot(qhat, dquery);
      for (std::size_t c = 0; c < d; ++c) dquery[c] = (dquery[c] - qhat[c] * proj) / n;
    }
  }
  DenseMatrix dhidden(tr.raw_cache.hidden.rows(), d);
  std::copy(dquery.begin(), dquery.end(), dhidden.row(tr.query_row).begin());
  backward(raw_dlogits, &dhidden, tr.raw_cache, params, grad);
}

namespace {

// d softmax-mass(gold) / d score_i for the neighbours of a kNN distribution.
Vector gold_mass_score_grad(const std::vector<Neighbor>& neighbors, std::size_t gold, double p_gold) {
  double mx = neighbors.front().score;
  for (const auto& n : neighbors) mx = std::max(mx, n.score);
  Vector w(neighbors.size());
  double total = 0.0;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    w[i] = std::exp(neighbors[i].score - mx);
    total += w[i];
  }
  Vector out(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    const double alpha = w[i] / total;
    out[i] = alpha * ((neighbors[i].label == gold ? 1.0 : 0.0) - p_gold);
  }
  return out;
}

}  // namespace

InstanceResult RetroPipeline::train_loss(const EncoderParams& params, const StoreContext& ctx, const Example& ex,
                                         std::span<double> grad, double grad_scale) const {
  const bool want_grad = !grad.empty();
  const auto tr = run(params, ctx, ex, ex.source_id, /*need_knn=*/true, want_grad);
  const std::size_t gold = ex.label;
  const auto& verbalizer = prompting_->verbalizer;
  if (gold >= verbalizer.num_classes()) throw std::out_of_range("train_loss: gold label out of range");

  InstanceResult res;
  res.p_model = tr.p_model;
  res.ce = cross_entropy(tr.p_model, gold);
  const double beta = effective_beta();
  double p_knn_gold = 1.0;
  if (tr.knn) {
    p_knn_gold = tr.knn->probs[gold];
    res.factor = modulating_factor(p_knn_gold, config_.p_min);
  }
  res.loss = retro_loss(res.ce, res.factor, beta);
  if (!std::isfinite(res.loss)) throw NumericError("train_loss: non-finite loss");
  res.knn = tr.knn;
  res.p_final = tr.p_model;
  res.retrieved_ids = tr.retrieved_ids;
  if (!want_grad) return res;

  const double weight = 1.0 + beta * res.factor;
  Vector dlogits(params.config().vocab_size, 0.0);
  if (tr.p_model[gold] >= kCrossEntropyFloor) {
    for (std::size_t l = 0; l < verbalizer.num_classes(); ++l) {
      const double target = l == gold ? 1.0 : 0.0;
      dlogits[verbalizer.word(l)] = (weight * (tr.p_model[l] - target)) * grad_scale;
    }
  }
  Vector dknn;
  if (flags_.differentiate_factor && tr.knn && beta > 0.0 && p_knn_gold > config_.p_min) {
    // dL/dF = beta ce, dF/dp = -1/p
    dknn = gold_mass_score_grad(tr.knn_neighbors, gold, p_knn_gold);
    const double coeff = -beta * res.ce / p_knn_gold * grad_scale;
    for (double& v : dknn) v *= coeff;
  }
  backprop(tr, params, dlogits, dknn, grad);
  return res;
}

InstanceResult RetroPipeline::predict(const EncoderParams& params, const StoreContext& ctx, const Example& ex,
                                      std::optional<std::uint64_t> exclude, std::optional<double> lambda) const {
  const double lam = lambda.value_or(effective_lambda());
  const auto tr = run(params, ctx, ex, exclude, /*need_knn=*/lam > 0.0, false);
  InstanceResult res;
  res.p_model = tr.p_model;
  res.knn = tr.knn;
  res.retrieved_ids = tr.retrieved_ids;
  res.p_final = (lam > 0.0 && tr.knn) ? interpolate(tr.knn->probs, tr.p_model, lam) : tr.p_model;
  return res;
}

double RetroPipeline::gold_probability(const EncoderParams& params, const StoreContext& ctx, const Example& ex,
                                       std::optional<std::uint64_t> exclude, std::span<double> grad) const {
  const double lam = effective_lambda();
  const bool want_grad = !grad.empty();
  const auto tr = run(params, ctx, ex, exclude, lam > 0.0, want_grad);
  const std::size_t gold = ex.label;
  const bool use_knn = lam > 0.0 && tr.knn.has_value();
  const double p_model = tr.p_model[gold];
  const double p_knn = use_knn ? tr.knn->probs[gold] : 0.0;
  const double p = use_knn ? lam * p_knn + (1.0 - lam) * p_model : p_model;
  if (!want_grad) return p;

  const auto& verbalizer = prompting_->verbalizer;
  const double model_weight = use_knn ? 1.0 - lam : 1.0;
  Vector dlogits(params.config().vocab_size, 0.0);
  for (std::size_t l = 0; l < verbalizer.num_classes(); ++l) {
    const double target = l == gold ? 1.0 : 0.0;
    dlogits[verbalizer.word(l)] = model_weight * p_model * (target - tr.p_model[l]);
  }
  Vector dknn;
  if (use_knn && tr.knn_differentiable) {
    dknn = gold_mass_score_grad(tr.knn_neighbors, gold, p_knn);
    for (double& v : dknn) v *= lam;
  }
  backprop(tr, params, dlogits, dknn, grad);
  return p;
}

}  // namespace retro
