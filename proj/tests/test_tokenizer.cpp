#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "retro/tokenizer.hpp"

using namespace retro;

namespace {

Vocab movie_vocab() {
  Vocab v;
  for (const char* w : {"great", "film", "it", "was", "good", "movie", "terrible", "."}) v.add(w);
  return v;
}

}  // namespace

TEST_CASE("tokenize") {
  const auto v = movie_vocab();
  CHECK(tokenize("", v).empty());
  CHECK(tokenize("Good movie", v) == std::vector<TokenId>{*v.find("good"), *v.find("movie")});
  CHECK(tokenize("zzqx", v) == std::vector<TokenId>{special::kUnk});
  CHECK(split_words("It was great.") == std::vector<std::string>{"it", "was", "great", "."});
}

TEST_CASE("vocab round trip and validation") {
  const auto v = movie_vocab();
  const auto path = std::filesystem::temp_directory_path() / "retro_vocab_test.txt";
  v.save(path);
  CHECK(Vocab::load(path) == v);
  {
    std::ofstream f(path);
    f << "[CLS]\n[SEP]\n[MASK]\n[PAD]\n[UNK]\na\na\n";
  }
  CHECK_THROWS_AS(Vocab::load(path), FormatError);
  {
    std::ofstream f(path);
    f << "hello\n";
  }
  CHECK_THROWS_AS(Vocab::load(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("apply_template") {
  const auto v = movie_vocab();
  const auto tmpl = Template::parse("{0} It was {MASK}");
  const std::vector<std::vector<TokenId>> x{tokenize("great film", v)};
  const auto w = apply_template(tmpl, x, v, 64);
  const std::vector<TokenId> want{special::kCls, *v.find("great"), *v.find("film"), *v.find("it"),
                                  *v.find("was"), special::kMask, special::kSep};
  CHECK(w.ids == want);
  CHECK(w.mask_position == 5);

  const std::vector<std::vector<TokenId>> empty{{}};
  const auto e = apply_template(tmpl, empty, v, 64);
  CHECK(e.ids == std::vector<TokenId>{special::kCls, *v.find("it"), *v.find("was"), special::kMask, special::kSep});
  CHECK(e.mask_position == 3);

  const std::vector<std::vector<TokenId>> long_x{std::vector<TokenId>(2 * 16, *v.find("good"))};
  const auto t = apply_template(tmpl, long_x, v, 16);
  CHECK(t.ids.size() == 16);
  CHECK(t.ids[t.mask_position] == special::kMask);
  CHECK(t.ids.back() == special::kSep);

  const std::vector<std::vector<TokenId>> two{{}, {}};
  CHECK_THROWS_AS(apply_template(tmpl, two, v, 64), std::invalid_argument);
}

TEST_CASE("template parsing errors") {
  CHECK_THROWS(Template::parse("{0} no mask"));
  CHECK_THROWS(Template::parse("{0} {MASK} {MASK}"));
  CHECK_THROWS(Template::parse("{1} {MASK}"));
  CHECK(Template::parse("{0} ? {MASK} , {1}").num_inputs() == 2);
}

TEST_CASE("verbalizer") {
  const auto v = movie_vocab();
  const std::vector<std::string> words{"terrible", "great"};
  const auto verb = Verbalizer::from_words(words, v);
  CHECK(verb.num_classes() == 2);
  CHECK(verb.word(1) == *v.find("great"));
  const std::vector<std::string> dup{"great", "great"};
  CHECK_THROWS(Verbalizer::from_words(dup, v));
  const std::vector<std::string> missing{"great", "zzqx"};
  CHECK_THROWS(Verbalizer::from_words(missing, v));
}
