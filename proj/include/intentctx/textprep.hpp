#pragma once

#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "intentctx/detail/utf8.hpp"
#include "intentctx/error.hpp"

namespace intentctx {

using TokenList = std::vector<std::string>;

/// Default Portuguese stopwords. Mirrors data/stopwords_pt.txt.
inline const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> words = {
      "a", "à", "ao", "aos", "aquela", "aquelas", "aquele", "aqueles", "aquilo", "as", "às",
      "até", "com", "como", "da", "das", "de", "dela", "delas", "dele", "deles", "depois",
      "do", "dos", "e", "é", "ela", "elas", "ele", "eles", "em", "entre", "era", "eram",
      "essa", "essas", "esse", "esses", "esta", "está", "estamos", "estão", "estar", "estas",
      "estava", "estavam", "este", "estes", "esteve", "estive", "estou", "eu", "foi", "fomos",
      "for", "foram", "fosse", "fossem", "fui", "há", "isso", "isto", "já", "lhe", "lhes",
      "mais", "mas", "me", "mesmo", "meu", "meus", "minha", "minhas", "muito", "na", "não",
      "nas", "nem", "no", "nos", "nós", "nossa", "nossas", "nosso", "nossos", "num", "numa",
      "o", "os", "ou", "para", "pela", "pelas", "pelo", "pelos", "por", "qual", "quando",
      "que", "quem", "se", "sem", "ser", "será", "seu", "seus", "só", "sua", "suas",
      "também", "te", "tem", "temos", "tenho", "teu", "teus", "tu", "tua", "tuas", "um",
      "uma", "umas", "uns", "você", "vocês", "vos", "site"};
  return words;
}

/// Preprocessing switches. Stages always run in the order
/// lowercase, URL removal, punctuation removal, whitespace split, stopword removal.
struct PreprocessConfig {
  bool lowercase = true;
  bool strip_urls = true;
  bool strip_punctuation = true;
  std::set<std::string> stopwords = default_stopwords();
};

/// Reads a stopword file: UTF-8, one token per line, '#' starts a comment.
inline std::set<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open stopword file: " + path);
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto cps = detail::decode_utf8(line);
    std::size_t b = 0, e = cps.size();
    while (b < e && detail::is_space(cps[b])) ++b;
    while (e > b && detail::is_space(cps[e - 1])) --e;
    if (b < e) words.insert(detail::encode_utf8(std::u32string_view(cps).substr(b, e - b)));
  }
  return words;
}

namespace detail {

inline bool starts_with_at(const std::u32string& s, std::size_t pos, std::u32string_view prefix) {
  return s.size() - pos >= prefix.size() && std::u32string_view(s).substr(pos, prefix.size()) == prefix;
}

/// Blanks out http://, https:// and www. prefixed runs up to the next whitespace.
inline void blank_urls(std::u32string& s) {
  std::size_t i = 0;
  while (i < s.size()) {
    if (starts_with_at(s, i, U"http://") || starts_with_at(s, i, U"https://") ||
        starts_with_at(s, i, U"www.") || starts_with_at(s, i, U"HTTP://") ||
        starts_with_at(s, i, U"HTTPS://") || starts_with_at(s, i, U"WWW.")) {
      while (i < s.size() && !is_space(s[i])) s[i++] = U' ';
    } else {
      ++i;
    }
  }
}

}  // namespace detail

inline TokenList preprocess_utterance(std::string_view text, const PreprocessConfig& config) {
  auto cps = detail::decode_utf8(text);
  if (config.lowercase) {
    for (auto& cp : cps) cp = detail::to_lower(cp);
  }
  if (config.strip_urls) detail::blank_urls(cps);
  if (config.strip_punctuation) {
    std::erase_if(cps, [](char32_t cp) { return detail::is_punctuation(cp); });
  }
  TokenList tokens;
  std::u32string current;
  auto flush = [&] {
    if (current.empty()) return;
    auto token = detail::encode_utf8(current);
    current.clear();
    if (!config.stopwords.contains(token)) tokens.push_back(std::move(token));
  };
  for (char32_t cp : cps) {
    if (detail::is_space(cp)) {
      flush();
    } else {
      current.push_back(cp);
    }
  }
  flush();
  return tokens;
}

inline std::string join_tokens(const TokenList& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace intentctx
