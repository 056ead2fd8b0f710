#include <algorithm>
#include <cmath>
#include <map>

#include "retro/knowledge_store.hpp"

namespace retro {

Bm25Index::Bm25Index(std::span<const std::string> documents, double k1, double b) : k1_(k1), b_(b) {
  if (documents.empty()) throw std::invalid_argument("bm25: empty corpus");
  std::map<std::string, std::size_t> df;
  double total = 0.0;
  for (const auto& doc : documents) {
    std::map<std::string, std::size_t> tf;
    const auto words = split_words(doc);
    for (const auto& w : words) ++tf[w];
    for (const auto& [term, _] : tf) ++df[term];
    doc_terms_.emplace_back(tf.begin(), tf.end());
    doc_len_.push_back(words.size());
    total += static_cast<double>(words.size());
  }
  avg_len_ = total / static_cast<double>(documents.size());
  doc_freq_.assign(df.begin(), df.end());
}

double Bm25Index::idf(const std::string& term) const {
  const auto it = std::lower_bound(doc_freq_.begin(), doc_freq_.end(), term,
                                   [](const auto& p, const std::string& t) { return p.first < t; });
  const double n_t = (it != doc_freq_.end() && it->first == term) ? static_cast<double>(it->second) : 0.0;
  const double n = static_cast<double>(doc_terms_.size());
  return std::log((n - n_t + 0.5) / (n_t + 0.5) + 1.0);
}

Vector Bm25Index::scores(std::string_view query) const {
  std::map<std::string, std::size_t> query_tf;
  for (auto& w : split_words(query)) ++query_tf[w];
  Vector out(doc_terms_.size(), 0.0);
  for (const auto& [term, qtf] : query_tf) {
    const double w = idf(term) * static_cast<double>(qtf);
    for (std::size_t d = 0; d < doc_terms_.size(); ++d) {
      const auto& terms = doc_terms_[d];
      const auto it = std::lower_bound(terms.begin(), terms.end(), term,
                                       [](const auto& p, const std::string& t) { return p.first < t; });
      if (it == terms.end() || it->first != term) continue;
      const double tf = static_cast<double>(it->second);
      const double norm = avg_len_ > 0.0 ? static_cast<double>(doc_len_[d]) / avg_len_ : 0.0;
      out[d] += w * tf * (k1_ + 1.0) / (tf + k1_ * (1.0 - b_ + b_ * norm));
    }
  }
  return out;
}

Vector bm25_scores(std::string_view query, std::span<const std::string> corpus, double k1, double b) {
  return Bm25Index(corpus, k1, b).scores(query);
}

}  // namespace retro
