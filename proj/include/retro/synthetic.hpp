#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "retro/dataset.hpp"
#include "retro/example.hpp"

namespace retro {

// Binary synthetic sentiment-like task. Tokens are "t000".."t199": the first
// 20 lean to class 0, the next 20 to class 1, the rest are neutral. A fraction
// of rows are atypical: their indicative tokens mostly come from the opposite
// class, and they carry a few tokens from a small per-class marker set, so the
// subpopulation is learnable only from its own few members.
struct SyntheticConfig {
  std::size_t vocab_tokens = 200;
  std::size_t indicative_per_class = 20;
  std::size_t markers_per_class = 5;
  std::size_t min_len = 8;
  std::size_t max_len = 16;
  double indicative_rate = 0.35;
  double atypical_fraction = 0.10;
  double atypical_flip = 0.8;     // indicative tokens drawn from the opposite class
  double marker_rate = 0.25;      // positions replaced by subpopulation markers
};

struct SyntheticData {
  std::vector<Example> rows;
  std::vector<double> atypical;  // 1.0 for atypical rows, aligned with rows
};

SyntheticData generate_synthetic(const SyntheticConfig& config, std::size_t rows_per_class, std::uint64_t seed);
SyntheticData generate_synthetic_mixed(const SyntheticConfig& config, std::size_t rows, std::uint64_t seed);

// Dataset spec matching the generated rows: "{0} It was {MASK} ." with terrible/great.
DatasetSpec synthetic_spec();

}  // namespace retro
