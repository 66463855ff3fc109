#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "intentctx/corpus.hpp"
#include "intentctx/tensor.hpp"
#include "intentctx/textprep.hpp"
#include "intentctx/window.hpp"

namespace intentctx {

enum ReservedId : int { kClsId = 0, kSepId = 1, kUserId = 2, kSystemId = 3, kUnkId = 4, kPadId = 5 };

inline constexpr std::array<std::string_view, 6> kReservedTokens = {kClsToken, kSepToken, kUserToken,
                                                                    kSystemToken, kUnkToken, kPadToken};

/// Whole-word vocabulary. Ids 0..5 are the reserved special tokens.
class Vocab {
 public:
  Vocab() {
    for (auto tok : kReservedTokens) add(std::string(tok));
  }

  explicit Vocab(const std::vector<std::string>& words) : Vocab() {
    for (const auto& w : words) add(w);
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  bool contains(const std::string& token) const { return index_.contains(token); }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }

  std::vector<int> ids(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  nlohmann::json to_json(std::size_t width) const {
    nlohmann::json j;
    j["format"] = "intentctx-vocab";
    j["version"] = 1;
    j["d"] = width;
    j["reserved"] = std::vector<std::string>(kReservedTokens.begin(), kReservedTokens.end());
    nlohmann::json mapping = nlohmann::json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) mapping[tokens_[i]] = i;
    j["token_to_id"] = std::move(mapping);
    return j;
  }

  /// Serialized vocab file contents; byte-identical for identical vocabularies.
  std::string serialize(std::size_t width) const { return to_json(width).dump(1) + "\n"; }

  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tokens_) h = fnv1a(std::string_view(t.c_str(), t.size() + 1), h);
    return hex64(h);
  }

  static Vocab from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "intentctx-vocab") throw ValidationError("not an intentctx vocab file");
    const auto& mapping = j.at("token_to_id");
    std::vector<std::string> by_id(mapping.size());
    for (auto it = mapping.begin(); it != mapping.end(); ++it) {
      const auto i = it.value().get<std::size_t>();
      if (i >= by_id.size() || !by_id[i].empty()) throw ValidationError("vocab ids are not dense");
      by_id[i] = it.key();
    }
    for (std::size_t i = 0; i < kReservedTokens.size(); ++i) {
      if (i >= by_id.size() || by_id[i] != kReservedTokens[i]) throw ValidationError("vocab reserved ids are wrong");
    }
    return Vocab(std::vector<std::string>(by_id.begin() + kReservedTokens.size(), by_id.end()));
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open vocab file: " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("malformed vocab file " + path + ": " + e.what());
    }
  }

 private:
  void add(std::string token) {
    if (index_.contains(token)) return;
    index_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(token));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Counts preprocessed tokens in every user utterance and system response.
/// Ordering is (count desc, token asc); tokens below `min_count` are left to [UNK].
inline Vocab build_vocab(const Corpus& corpus, const PreprocessConfig& config, std::size_t min_count = 1) {
  if (corpus.dialogues().empty()) throw ValidationError("empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& d : corpus.dialogues()) {
    for (const auto& t : d.turns) {
      for (auto& tok : preprocess_utterance(t.user_utterance, config)) ++counts[tok];
      for (auto& tok : preprocess_utterance(t.system_response, config)) ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [tok, n] : ordered) {
    if (n >= min_count) words.push_back(tok);
  }
  return Vocab(words);
}

}  // namespace intentctx
