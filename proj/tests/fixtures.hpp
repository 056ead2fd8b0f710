#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <span>

#include "retro/dataset.hpp"
#include "retro/encoder.hpp"
#include "retro/memorization.hpp"
#include "retro/numerics.hpp"
#include "retro/synthetic.hpp"

namespace fixtures {

using namespace retro;

// A small synthetic task with a d=8 encoder, big enough init noise that
// gradients are far from zero.
struct TinyWorld {
  std::vector<Example> rows;
  Prompting prompting;
  EncoderParams params;
};

inline SyntheticConfig tiny_synthetic() {
  SyntheticConfig sc;
  sc.vocab_tokens = 30;
  sc.indicative_per_class = 5;
  sc.markers_per_class = 2;
  sc.min_len = 3;
  sc.max_len = 6;
  return sc;
}

inline EncoderConfig tiny_config(std::size_t vocab, std::size_t layers = 1) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.dim = 8;
  c.heads = 2;
  c.layers = layers;
  c.mlp_dim = 16;
  c.max_len = 16;
  c.max_len_extended = 20;
  c.init_std = 0.5;
  return c;
}

// Perturbs layer-norm gains and biases too so their gradients are generic.
inline void jitter(EncoderParams& p, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& v : p.values()) v += nd(rng);
}

inline std::unique_ptr<TinyWorld> tiny_world(std::uint64_t seed, std::size_t rows_per_class = 4, std::size_t layers = 1) {
  auto w = std::make_unique<TinyWorld>();
  w->rows = generate_synthetic(tiny_synthetic(), rows_per_class, seed).rows;
  const auto spec = synthetic_spec();
  const std::span<const Example> corpora[] = {w->rows};
  w->prompting.vocab = build_vocab(corpora, spec);
  w->prompting.tmpl = Template::parse(spec.template_text);
  w->prompting.verbalizer = Verbalizer::from_words(spec.label_words, w->prompting.vocab);
  w->prompting.max_len = 16;
  w->params = EncoderParams::initialized(tiny_config(w->prompting.vocab.size(), layers), seed);
  jitter(w->params, seed + 1000);
  return w;
}

// |a - b| / max(|a|, |b|) over whole vectors, with an absolute floor so
// all-zero gradients compare equal.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

// Evaluates f at params whose values are replaced by theta.
template <typename F>
double at_theta(EncoderParams& work, std::span<const double> theta, F&& f) {
  std::copy(theta.begin(), theta.end(), work.values().begin());
  return f(work);
}

// Average ranks (ties share the mean rank), 1-based.
inline std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = mean_rank;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  return pearson(ra, rb);
}

// 20 points in 2-D, labels from a noisy linear rule, so a few points sit on
// the wrong side of the boundary and carry most of the self-influence.
inline std::pair<DenseMatrix, std::vector<int>> logistic_toy(std::uint64_t seed, std::size_t n = 20) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  DenseMatrix x(n, 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = nd(rng);
    x(i, 1) = nd(rng);
    y[i] = 1.5 * x(i, 0) - x(i, 1) + 0.8 * nd(rng) > 0.0 ? 1 : 0;
  }
  return {x, y};
}

// P(y_i | x_i; theta_hat) - P(y_i | x_i; theta_hat without i), by exact refits.
inline std::vector<double> loo_probability_drop(const LogisticRegressionProblem& prob) {
  const auto full = prob.fit();
  std::vector<double> drop;
  for (std::size_t i = 0; i < prob.num_instances(); ++i) {
    std::vector<double> w(prob.num_instances(), 1.0);
    w[i] = 0.0;
    const auto loo = prob.fit(w);
    drop.push_back(prob.probability(i, full, {}) - prob.probability(i, loo, {}));
  }
  return drop;
}

}  // namespace fixtures
