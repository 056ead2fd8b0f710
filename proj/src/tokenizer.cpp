#include "retro/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace retro {

namespace {

const char* const kSpecialNames[special::kCount] = {"[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]"};

bool is_punct(unsigned char c) { return c < 128 && std::ispunct(c) != 0; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      current.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return words;
}

Vocab::Vocab() {
  for (const char* name : kSpecialNames) add(name);
}

TokenId Vocab::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  if (auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  return std::nullopt;
}

TokenId Vocab::lookup(std::string_view token) const { return find(token).value_or(special::kUnk); }

const std::string& Vocab::token(TokenId id) const { return tokens_.at(id); }

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary file " + path.string());
  Vocab v;
  v.tokens_.clear();
  v.index_.clear();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno <= special::kCount && line != kSpecialNames[lineno - 1]) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected special token " +
                        kSpecialNames[lineno - 1]);
    }
    if (v.index_.contains(line)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": duplicate token '" + line + "'");
    }
    v.add(line);
  }
  if (v.size() < special::kCount) throw FormatError(path.string() + ": missing special tokens");
  return v;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.lookup(w));
  return ids;
}

Template Template::parse(std::string_view pattern) {
  Template t;
  t.pattern_ = std::string(pattern);
  std::size_t mask_count = 0;
  std::vector<bool> seen;
  std::string literal;
  auto flush = [&] {
    if (literal.find_first_not_of(" \t") != std::string::npos) {
      t.pieces_.push_back({Piece::Kind::Literal, literal, 0});
    }
    literal.clear();
  };
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] != '{') {
      literal.push_back(pattern[i]);
      continue;
    }
    const auto close = pattern.find('}', i);
    if (close == std::string_view::npos) throw FormatError("template: unterminated placeholder in '" + t.pattern_ + "'");
    const auto name = pattern.substr(i + 1, close - i - 1);
    flush();
    if (name == "MASK") {
      ++mask_count;
      t.pieces_.push_back({Piece::Kind::Mask, {}, 0});
    } else if (name.size() == 1 && (name[0] == '0' || name[0] == '1')) {
      const std::size_t slot = static_cast<std::size_t>(name[0] - '0');
      if (seen.size() <= slot) seen.resize(slot + 1, false);
      if (seen[slot]) throw FormatError("template: input slot {" + std::string(name) + "} used twice");
      seen[slot] = true;
      t.pieces_.push_back({Piece::Kind::Input, {}, slot});
    } else {
      throw FormatError("template: unknown placeholder {" + std::string(name) + "}");
    }
    i = close;
  }
  flush();
  if (mask_count != 1) throw FormatError("template: expected exactly one {MASK} in '" + t.pattern_ + "'");
  if (seen.empty() || !std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) {
    throw FormatError("template: input slots must be {0} or {0} and {1} in '" + t.pattern_ + "'");
  }
  t.num_inputs_ = seen.size();
  return t;
}

std::vector<std::string> Template::literal_words() const {
  std::vector<std::string> out;
  for (const auto& p : pieces_) {
    if (p.kind != Piece::Kind::Literal) continue;
    for (auto& w : split_words(p.text)) out.push_back(std::move(w));
  }
  return out;
}

std::vector<Template> load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read template file " + path.string());
  std::vector<Template> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(Template::parse(line));
  }
  return out;
}

WrappedInput apply_template(const Template& tmpl, std::span<const std::vector<TokenId>> inputs,
                            const Vocab& vocab, std::size_t max_len) {
  if (inputs.size() != tmpl.num_inputs()) {
    throw std::invalid_argument("apply_template: template takes " + std::to_string(tmpl.num_inputs()) +
                                " input(s), got " + std::to_string(inputs.size()));
  }
  std::vector<std::vector<TokenId>> literal_ids;
  std::size_t fixed = 2;  // [CLS] and [SEP]
  for (const auto& p : tmpl.pieces()) {
    if (p.kind == Template::Piece::Kind::Literal) {
      literal_ids.push_back(tokenize(p.text, vocab));
      fixed += literal_ids.back().size();
    } else if (p.kind == Template::Piece::Kind::Mask) {
      fixed += 1;
    }
  }
  if (fixed > max_len) {
    throw std::invalid_argument("apply_template: template alone needs " + std::to_string(fixed) +
                                " tokens, max_len is " + std::to_string(max_len));
  }

  std::vector<std::size_t> lengths;
  std::size_t total = fixed;
  for (const auto& in : inputs) {
    lengths.push_back(in.size());
    total += in.size();
  }
  while (total > max_len) {
    const auto longest = std::max_element(lengths.begin(), lengths.end());
    --*longest;
    --total;
  }

  WrappedInput out;
  out.ids.reserve(total);
  out.ids.push_back(special::kCls);
  std::size_t lit = 0;
  for (const auto& p : tmpl.pieces()) {
    switch (p.kind) {
      case Template::Piece::Kind::Literal:
        out.ids.insert(out.ids.end(), literal_ids[lit].begin(), literal_ids[lit].end());
        ++lit;
        break;
      case Template::Piece::Kind::Input: {
        const auto& in = inputs[p.slot];
        out.ids.insert(out.ids.end(), in.begin(), in.begin() + static_cast<std::ptrdiff_t>(lengths[p.slot]));
        break;
      }
      case Template::Piece::Kind::Mask:
        out.mask_position = out.ids.size();
        out.ids.push_back(special::kMask);
        break;
    }
  }
  out.ids.push_back(special::kSep);
  return out;
}

Verbalizer::Verbalizer(std::vector<TokenId> label_words, const Vocab& vocab) : words_(std::move(label_words)) {
  if (words_.empty()) throw std::invalid_argument("verbalizer: no label words");
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] >= vocab.size() || words_[i] < special::kCount) {
      throw std::invalid_argument("verbalizer: label word for class " + std::to_string(i) +
                                  " is not a regular vocabulary token");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (words_[i] == words_[j]) throw std::invalid_argument("verbalizer: label words must be distinct");
    }
  }
}

Verbalizer Verbalizer::from_words(std::span<const std::string> words, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : words) {
    const auto id = vocab.find(w);
    if (!id) throw std::invalid_argument("verbalizer: label word '" + w + "' is not in the vocabulary");
    ids.push_back(*id);
  }
  return Verbalizer(std::move(ids), vocab);
}

}  // namespace retro
