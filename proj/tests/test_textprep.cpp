#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "intentctx/rng.hpp"
#include "intentctx/textprep.hpp"
#include "test_support.hpp"

using namespace intentctx;

namespace {

const char* kGolden =
    "Já paguei o boleto da campanha ## porque ele ainda está pendente no site "
    "https://campanha.com/5cb4abba34070929d959d32d?";

}  // namespace

TEST(Preprocess, GoldenExample) {
  const PreprocessConfig config;
  EXPECT_EQ(preprocess_utterance(kGolden, config),
            (TokenList{"paguei", "boleto", "campanha", "porque", "ainda", "pendente"}));
}

TEST(Preprocess, EmptyInput) { EXPECT_TRUE(preprocess_utterance("", PreprocessConfig{}).empty()); }

TEST(Preprocess, HandAppliedStages) {
  PreprocessConfig config;
  config.stopwords = {"o"};
  EXPECT_EQ(preprocess_utterance("PAGUEI, O BOLETO!!!", config), (TokenList{"paguei", "boleto"}));
}

TEST(Preprocess, UnicodeLowercaseAndPunctuation) {
  PreprocessConfig config;
  config.stopwords = {};
  EXPECT_EQ(preprocess_utterance("ÇÃO «Ótimo» — NÃO…", config), (TokenList{"ção", "ótimo", "não"}));
  EXPECT_EQ(preprocess_utterance("a b\tc", config), (TokenList{"a", "b", "c"}));
}

TEST(Preprocess, UrlsRemoved) {
  PreprocessConfig config;
  config.stopwords = {};
  EXPECT_EQ(preprocess_utterance("veja www.exemplo.com.br/x e http://a.b", config), (TokenList{"veja", "e"}));
}

TEST(Preprocess, FlagsDisableStages) {
  PreprocessConfig config;
  config.stopwords = {};
  config.lowercase = false;
  config.strip_punctuation = false;
  config.strip_urls = false;
  EXPECT_EQ(preprocess_utterance("Oi, http://x.y", config), (TokenList{"Oi,", "http://x.y"}));
}

TEST(Preprocess, MalformedUtf8BecomesReplacementCharacter) {
  EXPECT_EQ(preprocess_utterance(std::string("ab\xC3"), PreprocessConfig{}), TokenList{"ab\xEF\xBF\xBD"});
  EXPECT_EQ(preprocess_utterance(std::string("\xFF x"), PreprocessConfig{}), (TokenList{"\xEF\xBF\xBD", "x"}));
}

TEST(Stopwords, DefaultListConstraints) {
  const auto& sw = default_stopwords();
  for (const char* w : {"já", "o", "da", "ele", "está", "no", "site"}) EXPECT_TRUE(sw.contains(w)) << w;
  for (const char* w : {"porque", "ainda"}) EXPECT_FALSE(sw.contains(w)) << w;
}

TEST(Stopwords, ShippedFileMatchesEmbeddedList) {
  const auto path = std::filesystem::path(INTENTCTX_DATA_DIR) / "stopwords_pt.txt";
  EXPECT_EQ(load_stopwords(path.string()), default_stopwords());
}

TEST(Stopwords, MissingFileIsValidationError) {
  EXPECT_THROW(load_stopwords("/nonexistent/stopwords.txt"), ValidationError);
}

// Random utterances mixing words, stopwords, punctuation, URLs and accents.
class PreprocessProperties : public ::testing::Test {
 protected:
  std::vector<std::string> samples() {
    const std::vector<std::string> pieces = {"Já",   "PAGUEI", "o",      "boleto", "##",    "ação", "Ótimo!",
                                             "site", "não",    "?",      ",",      "http://x.y/z", "www.a.b",
                                             "ELE",  "está",   "«ok»",   "—",      "ainda", "Porque", "123"};
    Rng rng(17);
    std::vector<std::string> out;
    for (int i = 0; i < 300; ++i) {
      std::string s;
      const auto n = rng.below(12);
      for (std::size_t k = 0; k < n; ++k) s += (k ? " " : "") + pieces[rng.below(pieces.size())];
      out.push_back(s);
    }
    return out;
  }
};

TEST_F(PreprocessProperties, Idempotent) {
  const PreprocessConfig config;
  for (const auto& s : samples()) {
    const auto once = preprocess_utterance(s, config);
    EXPECT_EQ(preprocess_utterance(join_tokens(once), config), once) << s;
  }
}

TEST_F(PreprocessProperties, LowercaseOutput) {
  const PreprocessConfig config;
  for (const auto& s : samples()) {
    for (const auto& tok : preprocess_utterance(s, config)) {
      EXPECT_EQ(preprocess_utterance(tok, PreprocessConfig{true, false, false, {}}), TokenList{tok});
    }
  }
}

TEST_F(PreprocessProperties, StopwordMonotonicity) {
  PreprocessConfig none;
  none.stopwords = {};
  const PreprocessConfig full;
  for (const auto& s : samples()) {
    auto all = preprocess_utterance(s, none);
    auto some = preprocess_utterance(s, full);
    // `some` is a subsequence of `all`.
    auto it = all.begin();
    for (const auto& tok : some) {
      it = std::find(it, all.end(), tok);
      ASSERT_NE(it, all.end()) << s;
      ++it;
    }
  }
}
