#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace retro {

// One labelled row: a single sentence, or a sentence pair.
struct Example {
  std::vector<std::string> texts;
  std::uint32_t label = 0;
  std::uint64_t source_id = 0;
};

}  // namespace retro
