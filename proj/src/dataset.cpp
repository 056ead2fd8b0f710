#include "retro/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>
#include <set>

namespace retro {

void DatasetSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("dataset spec: need at least two classes");
  if (label_words.size() != num_classes) {
    throw std::invalid_argument("dataset spec: " + std::to_string(label_words.size()) + " label words for " +
                                std::to_string(num_classes) + " classes");
  }
  const auto tmpl = Template::parse(template_text);
  const std::size_t want = task_kind == TaskKind::SentencePair ? 2 : 1;
  if (tmpl.num_inputs() != want) throw std::invalid_argument("dataset spec: template arity does not match task kind");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

std::vector<Example> load_dataset(const std::filesystem::path& path, TaskKind kind, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dataset " + path.string());
  const std::size_t columns = kind == TaskKind::SentencePair ? 3 : 2;
  std::vector<Example> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    auto fields = split_tabs(line);
    if (fields.size() != columns) {
      throw DataError(where + ": expected " + std::to_string(columns) + " tab-separated columns, found " +
                      std::to_string(fields.size()));
    }
    const auto& label_text = fields.back();
    long label = -1;
    const auto [ptr, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (ec != std::errc() || ptr != label_text.data() + label_text.size()) {
      throw DataError(where + ": label '" + label_text + "' is not an integer");
    }
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw DataError(where + ": label " + label_text + " outside [0, " + std::to_string(num_classes) + ")");
    }
    Example ex;
    ex.texts.assign(fields.begin(), fields.end() - 1);
    ex.label = static_cast<std::uint32_t>(label);
    ex.source_id = rows.size();
    rows.push_back(std::move(ex));
  }
  return rows;
}

std::vector<Example> load_dataset(const DatasetSpec& spec) {
  spec.validate();
  return load_dataset(spec.path, spec.task_kind, spec.num_classes);
}

void write_dataset(const std::filesystem::path& path, std::span<const Example> rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset " + path.string());
  for (const auto& ex : rows) {
    for (const auto& t : ex.texts) out << t << '\t';
    out << ex.label << '\n';
  }
}

FewShotSplit sample_few_shot(std::span<const Example> dataset, std::size_t num_classes,
                             std::optional<std::size_t> shots, std::uint64_t seed) {
  FewShotSplit split;
  split.shots = shots;
  split.seed = seed;
  if (!shots) {
    for (std::size_t i = 0; i < dataset.size(); ++i) split.train.push_back(i);
    return split;
  }
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].label >= num_classes) throw DataError("sample_few_shot: label out of range");
    by_class[dataset[i].label].push_back(i);
  }
  std::mt19937_64 rng(seed);
  const std::size_t k = *shots;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2 * k) {
      throw DataError("sample_few_shot: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                      " rows, need " + std::to_string(2 * k));
    }
    // Fisher-Yates with an explicit draw so the split does not depend on the
    // standard library's shuffle.
    for (std::size_t i = idx.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(idx[i - 1], idx[j]);
    }
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    split.dev.insert(split.dev.end(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                     idx.begin() + static_cast<std::ptrdiff_t>(2 * k));
  }
  return split;
}

std::vector<Example> select(std::span<const Example> dataset, std::span<const std::size_t> indices) {
  std::vector<Example> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(dataset[i]);
  return out;
}

Vocab build_vocab(std::span<const std::span<const Example>> corpora, const DatasetSpec& spec) {
  Vocab vocab;
  for (const auto& w : Template::parse(spec.template_text).literal_words()) vocab.add(w);
  for (const auto& w : spec.label_words) {
    for (const auto& piece : split_words(w)) vocab.add(piece);
  }
  for (const auto& corpus : corpora) {
    for (const auto& ex : corpus)
      for (const auto& t : ex.texts)
        for (const auto& w : split_words(t)) vocab.add(w);
  }
  return vocab;
}

}  // namespace retro
