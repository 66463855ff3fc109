#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "intentctx/corpus.hpp"
#include "intentctx/error.hpp"
#include "intentctx/textprep.hpp"

namespace intentctx {

enum class ContextStrategy {
  WithoutContext,
  AllContext,
  UserContext,
  UserSystemContext,
  LastUserContext,
  LastSystemContext,
};

inline constexpr std::array<ContextStrategy, 6> kAllStrategies = {
    ContextStrategy::WithoutContext,    ContextStrategy::AllContext,      ContextStrategy::UserContext,
    ContextStrategy::UserSystemContext, ContextStrategy::LastUserContext, ContextStrategy::LastSystemContext,
};

/// CLI/config name.
constexpr std::string_view strategy_name(ContextStrategy s) {
  switch (s) {
    case ContextStrategy::WithoutContext: return "none";
    case ContextStrategy::AllContext: return "all";
    case ContextStrategy::UserContext: return "user";
    case ContextStrategy::UserSystemContext: return "user-system";
    case ContextStrategy::LastUserContext: return "last-user";
    case ContextStrategy::LastSystemContext: return "last-system";
  }
  return "?";
}

/// Row label used in comparison tables.
constexpr std::string_view strategy_display_name(ContextStrategy s) {
  switch (s) {
    case ContextStrategy::WithoutContext: return "without context";
    case ContextStrategy::AllContext: return "all context";
    case ContextStrategy::UserContext: return "user context";
    case ContextStrategy::UserSystemContext: return "user-system context";
    case ContextStrategy::LastUserContext: return "last-user context";
    case ContextStrategy::LastSystemContext: return "last-system context";
  }
  return "?";
}

inline std::string strategy_names_list() {
  std::string out;
  for (auto s : kAllStrategies) {
    if (!out.empty()) out += ", ";
    out += strategy_name(s);
  }
  return out;
}

inline ContextStrategy parse_strategy(std::string_view name) {
  for (auto s : kAllStrategies) {
    if (strategy_name(s) == name) return s;
  }
  throw ValidationError("unknown strategy '" + std::string(name) + "'; valid names: " + strategy_names_list());
}

enum class Speaker { User, System };

struct ContextUtterance {
  Speaker speaker;
  TokenList tokens;

  friend bool operator==(const ContextUtterance&, const ContextUtterance&) = default;
};

inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kUserToken = "[USER]";
inline constexpr std::string_view kSystemToken = "[SYSTEM]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::size_t kDefaultMaxSequenceLength = 128;

/// Selects and preprocesses the prior utterances visible at turn `turn_index` (1-based).
inline std::vector<ContextUtterance> build_context(const Dialogue& dialogue, std::size_t turn_index,
                                                   ContextStrategy strategy, const PreprocessConfig& config) {
  if (turn_index < 1 || turn_index > dialogue.turns.size()) {
    throw ValidationError("turn index " + std::to_string(turn_index) + " out of range for dialogue '" + dialogue.id +
                          "' with " + std::to_string(dialogue.turns.size()) + " turns");
  }
  std::vector<ContextUtterance> out;
  if (turn_index == 1) return out;
  const auto& prev = dialogue.turns[turn_index - 2];
  auto user = [&](const Turn& t) { out.push_back({Speaker::User, preprocess_utterance(t.user_utterance, config)}); };
  auto system = [&](const Turn& t) {
    out.push_back({Speaker::System, preprocess_utterance(t.system_response, config)});
  };
  switch (strategy) {
    case ContextStrategy::WithoutContext:
      break;
    case ContextStrategy::AllContext:
      for (std::size_t i = 0; i + 1 < turn_index; ++i) {
        user(dialogue.turns[i]);
        system(dialogue.turns[i]);
      }
      break;
    case ContextStrategy::UserContext:
      for (std::size_t i = 0; i + 1 < turn_index; ++i) user(dialogue.turns[i]);
      break;
    case ContextStrategy::UserSystemContext:
      user(prev);
      system(prev);
      break;
    case ContextStrategy::LastUserContext:
      user(prev);
      break;
    case ContextStrategy::LastSystemContext:
      system(prev);
      break;
  }
  return out;
}

/// Flat model input: `[CLS]` context... `[USER]` current... `[SEP]`.
struct TokenSequence {
  std::vector<std::string> tokens;
  std::vector<int> segment_ids;
  /// Half-open token index range of the current utterance's words.
  std::pair<std::size_t, std::size_t> current_span{0, 0};

  std::size_t size() const { return tokens.size(); }

  /// Canonical serialized form, used as the lookup key for precomputed vectors.
  std::string key() const { return join_tokens(tokens); }
};

/// Assembles the special-token sequence. When it would exceed `max_len`, context is
/// cut oldest-first: whole utterances go first, and the oldest surviving utterance
/// keeps its speaker marker plus its most recent words. The current utterance is never cut.
inline TokenSequence assemble_token_sequence(const std::vector<ContextUtterance>& context, const TokenList& current,
                                             std::size_t max_len = kDefaultMaxSequenceLength) {
  if (current.size() + 3 > max_len) {
    throw ValidationError("current utterance has " + std::to_string(current.size()) +
                          " tokens and does not fit max_len " + std::to_string(max_len) + "; raise max_len");
  }
  std::size_t budget = max_len - current.size() - 3;

  // Walk newest to oldest, keeping what fits.
  std::size_t first_kept = context.size();
  std::size_t partial_words = 0;  // words kept from context[first_kept] when it is cut
  for (std::size_t i = context.size(); i-- > 0;) {
    const std::size_t need = context[i].tokens.size() + 1;
    if (need <= budget) {
      budget -= need;
      first_kept = i;
      continue;
    }
    if (budget >= 2) {
      first_kept = i;
      partial_words = budget - 1;
    }
    break;
  }

  TokenSequence seq;
  auto push = [&](std::string_view tok, int segment) {
    seq.tokens.emplace_back(tok);
    seq.segment_ids.push_back(segment);
  };
  push(kClsToken, 0);
  for (std::size_t i = first_kept; i < context.size(); ++i) {
    const auto& utt = context[i];
    push(utt.speaker == Speaker::User ? kUserToken : kSystemToken, 0);
    std::size_t skip = 0;
    if (i == first_kept && partial_words > 0) skip = utt.tokens.size() - partial_words;
    for (std::size_t k = skip; k < utt.tokens.size(); ++k) push(utt.tokens[k], 0);
  }
  push(kUserToken, 1);
  seq.current_span.first = seq.tokens.size();
  for (const auto& tok : current) push(tok, 1);
  seq.current_span.second = seq.tokens.size();
  push(kSepToken, 1);
  return seq;
}

/// Context selection, preprocessing and assembly for one sample.
inline TokenSequence sample_sequence(const Corpus& corpus, SampleRef ref, ContextStrategy strategy,
                                     const PreprocessConfig& config, std::size_t max_len) {
  const auto& dialogue = corpus.dialogues().at(ref.dialogue);
  auto context = build_context(dialogue, ref.turn, strategy, config);
  auto current = preprocess_utterance(dialogue.turns.at(ref.turn - 1).user_utterance, config);
  return assemble_token_sequence(context, current, max_len);
}

}  // namespace intentctx
