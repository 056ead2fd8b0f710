#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace retro {

using TokenId = std::uint32_t;

namespace special {
inline constexpr TokenId kCls = 0;
inline constexpr TokenId kSep = 1;
inline constexpr TokenId kMask = 2;
inline constexpr TokenId kPad = 3;
inline constexpr TokenId kUnk = 4;
inline constexpr std::size_t kCount = 5;
}  // namespace special

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lowercase, split on whitespace, punctuation characters become their own words.
std::vector<std::string> split_words(std::string_view text);

class Vocab {
 public:
  // Starts with the five special tokens in fixed order.
  Vocab();

  TokenId add(const std::string& token);
  std::optional<TokenId> find(std::string_view token) const;
  TokenId lookup(std::string_view token) const;  // UNK when absent
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line, line number is the id.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab);

class Template {
 public:
  struct Piece {
    enum class Kind { Literal, Input, Mask };
    Kind kind = Kind::Literal;
    std::string text;  // Literal only
    std::size_t slot = 0;  // Input only
  };

  // Literal text with {0}, {1} and {MASK} placeholders, e.g. "{0} It was {MASK} .".
  static Template parse(std::string_view pattern);

  const std::vector<Piece>& pieces() const { return pieces_; }
  std::size_t num_inputs() const { return num_inputs_; }
  const std::string& pattern() const { return pattern_; }

  // Every literal word, so vocabularies can be built to cover the template.
  std::vector<std::string> literal_words() const;

 private:
  std::vector<Piece> pieces_;
  std::size_t num_inputs_ = 0;
  std::string pattern_;
};

std::vector<Template> load_templates(const std::filesystem::path& path);

struct WrappedInput {
  std::vector<TokenId> ids;
  std::size_t mask_position = 0;
};

// [CLS] <template pieces> [SEP]; the longest input slot is trimmed from its end
// until the whole sequence fits in max_len.
WrappedInput apply_template(const Template& tmpl, std::span<const std::vector<TokenId>> inputs,
                            const Vocab& vocab, std::size_t max_len);

class Verbalizer {
 public:
  Verbalizer() = default;
  Verbalizer(std::vector<TokenId> label_words, const Vocab& vocab);
  static Verbalizer from_words(std::span<const std::string> words, const Vocab& vocab);

  TokenId word(std::size_t label) const { return words_.at(label); }
  std::size_t num_classes() const { return words_.size(); }
  const std::vector<TokenId>& words() const { return words_; }

 private:
  std::vector<TokenId> words_;
};

}  // namespace retro
