#include "retro/synthetic.hpp"

#include <cstdio>
#include <random>
#include <stdexcept>

namespace retro {

namespace {

std::string token_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%03zu", i);
  return buf;
}

struct Sampler {
  const SyntheticConfig& cfg;
  std::mt19937_64 rng;

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

  Example row(std::uint32_t label, bool atypical) {
    const std::size_t ind = cfg.indicative_per_class;
    const std::size_t markers_begin = 2 * ind;
    const std::size_t neutral_begin = markers_begin + 2 * cfg.markers_per_class;
    const std::size_t neutral = cfg.vocab_tokens - neutral_begin;
    const std::size_t len = cfg.min_len + pick(cfg.max_len - cfg.min_len + 1);
    std::string text;
    for (std::size_t i = 0; i < len; ++i) {
      std::size_t tok;
      if (atypical && uniform() < cfg.marker_rate) {
        tok = markers_begin + label * cfg.markers_per_class + pick(cfg.markers_per_class);
      } else if (uniform() < cfg.indicative_rate) {
        std::uint32_t lean = label;
        if (atypical && uniform() < cfg.atypical_flip) lean = 1 - label;
        tok = lean * ind + pick(ind);
      } else {
        tok = neutral_begin + pick(neutral);
      }
      if (!text.empty()) text.push_back(' ');
      text += token_name(tok);
    }
    Example ex;
    ex.texts = {text};
    ex.label = label;
    return ex;
  }
};

void check(const SyntheticConfig& cfg) {
  if (cfg.vocab_tokens <= 2 * (cfg.indicative_per_class + cfg.markers_per_class) || cfg.min_len == 0 ||
      cfg.max_len < cfg.min_len || cfg.markers_per_class == 0 || cfg.indicative_per_class == 0) {
    throw std::invalid_argument("synthetic config: inconsistent sizes");
  }
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& config, std::size_t rows_per_class, std::uint64_t seed) {
  check(config);
  Sampler s{config, std::mt19937_64(seed)};
  SyntheticData out;
  // Exactly round(fraction * n) atypical rows per class, at random positions.
  const auto atypical_count = static_cast<std::size_t>(config.atypical_fraction * static_cast<double>(rows_per_class) + 0.5);
  for (std::uint32_t label = 0; label < 2; ++label) {
    std::vector<bool> flags(rows_per_class, false);
    for (std::size_t i = 0; i < atypical_count; ++i) flags[i] = true;
    for (std::size_t i = flags.size(); i > 1; --i) {
      const std::size_t j = s.pick(i);
      const bool tmp = flags[i - 1];
      flags[i - 1] = flags[j];
      flags[j] = tmp;
    }
    for (bool atyp : flags) {
      out.rows.push_back(s.row(label, atyp));
      out.rows.back().source_id = out.rows.size() - 1;
      out.atypical.push_back(atyp ? 1.0 : 0.0);
    }
  }
  return out;
}

SyntheticData generate_synthetic_mixed(const SyntheticConfig& config, std::size_t rows, std::uint64_t seed) {
  check(config);
  Sampler s{config, std::mt19937_64(seed)};
  SyntheticData out;
  for (std::size_t i = 0; i < rows; ++i) {
    const auto label = static_cast<std::uint32_t>(s.pick(2));
    const bool atyp = s.uniform() < config.atypical_fraction;
    out.rows.push_back(s.row(label, atyp));
    out.rows.back().source_id = i;
    out.atypical.push_back(atyp ? 1.0 : 0.0);
  }
  return out;
}

DatasetSpec synthetic_spec() {
  DatasetSpec spec;
  spec.task_kind = TaskKind::SingleSentence;
  spec.num_classes = 2;
  spec.template_text = "{0} It was {MASK} .";
  spec.label_words = {"terrible", "great"};
  return spec;
}

}  // namespace retro
