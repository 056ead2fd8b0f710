#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "retro/example.hpp"
#include "retro/numerics.hpp"
#include "retro/tokenizer.hpp"

namespace retro {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t mlp_dim = 256;
  std::size_t max_len = 64;
  // Positional rows available once demonstrations are appended (max_len + 2L).
  std::size_t max_len_extended = 68;
  double init_std = 0.02;
  double ln_eps = 1e-5;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Offsets of every parameter block inside the flat parameter buffer.
struct LayerOffsets {
  std::size_t ln1_gain, ln1_bias;
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_gain, ln2_bias;
  std::size_t w1, b1, w2, b2;
  std::size_t begin, end;
};

struct ParamLayout {
  std::size_t embedding = 0;
  std::size_t positional = 0;
  std::vector<LayerOffsets> layers;
  std::size_t final_gain = 0;
  std::size_t final_bias = 0;
  std::size_t total = 0;

  static ParamLayout make(const EncoderConfig& cfg);
};

// All weights in one contiguous buffer. The MLM head is the embedding table
// itself (tied), so there is no separate output projection.
class EncoderParams {
 public:
  EncoderParams() = default;
  // All zeros, including layer-norm gains.
  explicit EncoderParams(const EncoderConfig& cfg);
  // N(0, init_std) for embeddings and projections, gains 1, biases 0.
  static EncoderParams initialized(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  ConstMatrixView matrix(std::size_t offset, std::size_t rows, std::size_t cols) const {
    return {values_.data() + offset, rows, cols};
  }
  MatrixView matrix(std::size_t offset, std::size_t rows, std::size_t cols) {
    return {values_.data() + offset, rows, cols};
  }
  std::span<const double> vec(std::size_t offset, std::size_t n) const { return {values_.data() + offset, n}; }

  ConstMatrixView embedding() const { return matrix(layout_.embedding, config_.vocab_size, config_.dim); }
  ConstMatrixView positional() const { return matrix(layout_.positional, config_.max_len_extended, config_.dim); }

  // FNV-1a over the raw parameter bytes.
  std::uint64_t checksum() const;

  void save(const std::filesystem::path& path) const;
  static EncoderParams load(const std::filesystem::path& path);

 private:
  EncoderConfig config_;
  ParamLayout layout_;
  std::vector<double> values_;
};

// Aligned with EncoderParams::values().
using ParamGradient = std::vector<double>;

inline constexpr std::int64_t kExternalRow = -1;

struct EmbeddedInput {
  DenseMatrix rows;  // seq_len x d
  std::size_t mask_position = 0;
  std::vector<std::size_t> positions;
  // Token id that produced each row, or kExternalRow for injected vectors.
  std::vector<std::int64_t> row_tokens;

  std::size_t length() const { return rows.rows(); }
};

EmbeddedInput embed(std::span<const TokenId> ids, std::size_t mask_position, const EncoderParams& params);
inline EmbeddedInput embed(const WrappedInput& w, const EncoderParams& params) {
  return embed(w.ids, w.mask_position, params);
}

struct EncodeOutput {
  DenseMatrix hidden_states;
  Vector mask_hidden;
  Vector vocab_logits;
};

struct LayerCache {
  DenseMatrix input;  // residual stream entering the layer
  DenseMatrix ln1_out, q, k, v, attn_out, mid;
  Vector ln1_mean, ln1_rstd;
  std::vector<DenseMatrix> attn;  // per head, T x T
  DenseMatrix ln2_out, mlp_pre, mlp_act;
  Vector ln2_mean, ln2_rstd;
};

// Activations kept by forward for backward.
struct ForwardCache {
  bool valid = false;
  std::size_t mask_position = 0;
  std::vector<std::size_t> positions;
  std::vector<std::int64_t> row_tokens;
  std::vector<LayerCache> layers;
  DenseMatrix final_input;
  Vector final_mean, final_rstd;
  DenseMatrix hidden;
};

// Pre-norm transformer; throws NumericError on a non-finite activation.
EncodeOutput forward(const EmbeddedInput& input, const EncoderParams& params, ForwardCache* cache = nullptr);

// Reverse mode through a cached forward. Gradients are accumulated into `grad`.
// `dlogits` may be empty (no gradient at the vocabulary logits); `dhidden`
// (seq_len x d) adds upstream gradient on the final hidden states. When
// `input_grad` is given it receives the gradient with respect to the input rows.
void backward(std::span<const double> dlogits, const DenseMatrix* dhidden, const ForwardCache& cache,
              const EncoderParams& params, std::span<double> grad, DenseMatrix* input_grad = nullptr);

// Restrict the vocabulary distribution to the label words and renormalise.
Vector class_probs(std::span<const double> vocab_logits, const Verbalizer& verbalizer);

// One neural demonstration per class: a weighted sum of retrieved keys followed
// by the class label word.
struct DemoSlot {
  bool empty = true;
  Vector aggregated;
  TokenId label_word = 0;
  Vector weights;
  std::vector<std::size_t> neighbor_entries;
  std::vector<std::uint64_t> neighbor_ids;
};

struct DemoSlots {
  std::vector<DemoSlot> slots;  // ascending class index

  std::size_t active() const;
};

// Appends [aggregated + pos, e(label_word) + pos] per non-empty slot after the
// sequence. Positions continue from the last input row.
EmbeddedInput concat_demonstrations(const EmbeddedInput& input, const DemoSlots& slots, const EncoderParams& params);

// Vocabulary, template and verbalizer together: what turns an Example into ids.
struct Prompting {
  Vocab vocab;
  Template tmpl;
  Verbalizer verbalizer;
  std::size_t max_len = 64;

  WrappedInput wrap(const Example& ex) const;
  std::size_t num_classes() const { return verbalizer.num_classes(); }
};

}  // namespace retro
