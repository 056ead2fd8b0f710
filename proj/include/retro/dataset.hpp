#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retro/example.hpp"
#include "retro/tokenizer.hpp"

namespace retro {

enum class TaskKind { SingleSentence, SentencePair };

struct DatasetSpec {
  std::filesystem::path path;
  TaskKind task_kind = TaskKind::SingleSentence;
  std::size_t num_classes = 2;
  std::string template_text = "{0} It was {MASK} .";
  std::vector<std::string> label_words = {"terrible", "great"};

  void validate() const;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rows `text<TAB>label` or `text1<TAB>text2<TAB>label`; source ids are row indices.
std::vector<Example> load_dataset(const DatasetSpec& spec);
std::vector<Example> load_dataset(const std::filesystem::path& path, TaskKind kind, std::size_t num_classes);
void write_dataset(const std::filesystem::path& path, std::span<const Example> rows);

struct FewShotSplit {
  std::optional<std::size_t> shots;  // empty means "all"
  std::uint64_t seed = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
};

// Per class: seeded shuffle, first K rows to train, next K to dev.
FewShotSplit sample_few_shot(std::span<const Example> dataset, std::size_t num_classes,
                             std::optional<std::size_t> shots, std::uint64_t seed);

std::vector<Example> select(std::span<const Example> dataset, std::span<const std::size_t> indices);

// Vocabulary over every word of the given corpora, the template and the label words.
Vocab build_vocab(std::span<const std::span<const Example>> corpora, const DatasetSpec& spec);

}  // namespace retro
