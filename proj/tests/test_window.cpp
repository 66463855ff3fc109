#include <gtest/gtest.h>

#include <algorithm>

#include "intentctx/corpus.hpp"
#include "intentctx/window.hpp"

using namespace intentctx;

namespace {

PreprocessConfig plain() {
  PreprocessConfig c;
  c.stopwords = {};
  return c;
}

Dialogue three_turns() {
  return {"d", {{"u1 a", "s1 a", 0}, {"u2 b", "s2 b", 1}, {"u3 c", "s3 c", 0}}};
}

ContextUtterance U(TokenList t) { return {Speaker::User, std::move(t)}; }
ContextUtterance S(TokenList t) { return {Speaker::System, std::move(t)}; }

std::string joined(const TokenSequence& s) { return join_tokens(s.tokens); }

}  // namespace

TEST(Strategy, NamesRoundTrip) {
  EXPECT_EQ(kAllStrategies.size(), 6u);
  for (auto s : kAllStrategies) EXPECT_EQ(parse_strategy(strategy_name(s)), s);
  EXPECT_EQ(strategy_names_list(), "none, all, user, user-system, last-user, last-system");
}

TEST(Strategy, UnknownNameListsValidOnes) {
  try {
    parse_strategy("bogus");
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    for (auto s : kAllStrategies) EXPECT_NE(msg.find(strategy_name(s)), std::string::npos);
  }
}

TEST(BuildContext, FirstTurnHasNoContext) {
  const auto d = three_turns();
  for (auto s : kAllStrategies) EXPECT_TRUE(build_context(d, 1, s, plain()).empty());
}

TEST(BuildContext, AllContextAtTurnThree) {
  const auto ctx = build_context(three_turns(), 3, ContextStrategy::AllContext, plain());
  const std::vector<ContextUtterance> want = {U({"u1", "a"}), S({"s1", "a"}), U({"u2", "b"}), S({"s2", "b"})};
  EXPECT_EQ(ctx, want);
}

TEST(BuildContext, EachStrategyAtTurnThree) {
  const auto d = three_turns();
  const auto pp = plain();
  EXPECT_EQ(build_context(d, 3, ContextStrategy::LastSystemContext, pp), std::vector{S({"s2", "b"})});
  EXPECT_EQ(build_context(d, 3, ContextStrategy::LastUserContext, pp), std::vector{U({"u2", "b"})});
  EXPECT_EQ(build_context(d, 3, ContextStrategy::UserContext, pp), (std::vector{U({"u1", "a"}), U({"u2", "b"})}));
  EXPECT_EQ(build_context(d, 3, ContextStrategy::UserSystemContext, pp), (std::vector{U({"u2", "b"}), S({"s2", "b"})}));
  EXPECT_TRUE(build_context(d, 3, ContextStrategy::WithoutContext, pp).empty());
}

TEST(BuildContext, TurnOutOfRange) {
  EXPECT_THROW(build_context(three_turns(), 0, ContextStrategy::AllContext, plain()), ValidationError);
  EXPECT_THROW(build_context(three_turns(), 4, ContextStrategy::AllContext, plain()), ValidationError);
}

TEST(BuildContext, SubsetRelationsOnSyntheticDialogues) {
  SynthesisSpec spec;
  spec.dialogues = 30;
  spec.max_turns = 8;
  const auto c = generate_synthetic_corpus(spec, 5);
  const PreprocessConfig pp;
  auto contains_all = [](const std::vector<ContextUtterance>& big, const std::vector<ContextUtterance>& small) {
    return std::all_of(small.begin(), small.end(),
                       [&](const auto& u) { return std::find(big.begin(), big.end(), u) != big.end(); });
  };
  for (const auto& d : c.dialogues()) {
    for (std::size_t t = 1; t <= d.turns.size(); ++t) {
      const auto last_user = build_context(d, t, ContextStrategy::LastUserContext, pp);
      const auto last_system = build_context(d, t, ContextStrategy::LastSystemContext, pp);
      const auto user = build_context(d, t, ContextStrategy::UserContext, pp);
      const auto all = build_context(d, t, ContextStrategy::AllContext, pp);
      const auto user_system = build_context(d, t, ContextStrategy::UserSystemContext, pp);
      EXPECT_TRUE(contains_all(user, last_user));
      EXPECT_TRUE(contains_all(all, user));
      auto merged = last_user;
      merged.insert(merged.end(), last_system.begin(), last_system.end());
      EXPECT_EQ(user_system, merged);
    }
  }
}

TEST(Assemble, ContextThenCurrentSequence) {
  const std::vector<ContextUtterance> ctx = {U({"consultar", "pontuação", "mundo"}), S({"consultando", "pontos"})};
  const TokenList current = {"credito", "boleto", "faço", "pagamento", "desconto"};
  const auto seq = assemble_token_sequence(ctx, current, 128);
  const auto text = joined(seq);
  EXPECT_EQ(text.rfind("[CLS] [USER] consultar pontuação mundo [SYSTEM] consultando pontos [USER] credito boleto faço", 0),
            0u)
      << text;
  EXPECT_TRUE(text.ends_with("desconto [SEP]")) << text;
  // Segment 1 starts at the final [USER] marker.
  const std::vector<int> want = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1};
  EXPECT_EQ(seq.segment_ids, want);
  EXPECT_EQ(seq.current_span, (std::pair<std::size_t, std::size_t>{9, 14}));
}

TEST(Assemble, BaselineShape) {
  const auto seq = assemble_token_sequence({}, {"oi"}, 128);
  EXPECT_EQ(joined(seq), "[CLS] [USER] oi [SEP]");
  EXPECT_EQ(seq.segment_ids, (std::vector<int>{0, 1, 1, 1}));
}

TEST(Assemble, TruncationDropsOldestFirst) {
  const std::vector<ContextUtterance> ctx = {U({"old1", "old2", "old3"}), S({"new1", "new2"})};
  const TokenList current = {"cur1", "cur2"};
  // Full length: 1 + 4 + 3 + 1 + 2 + 1 = 12.
  EXPECT_EQ(assemble_token_sequence(ctx, current, 12).size(), 12u);

  const auto cut = assemble_token_sequence(ctx, current, 10);
  EXPECT_EQ(joined(cut), "[CLS] [USER] old3 [SYSTEM] new1 new2 [USER] cur1 cur2 [SEP]");

  const auto dropped = assemble_token_sequence(ctx, current, 9);
  EXPECT_EQ(joined(dropped), "[CLS] [SYSTEM] new1 new2 [USER] cur1 cur2 [SEP]");

  const auto bare = assemble_token_sequence(ctx, current, 5);
  EXPECT_EQ(joined(bare), "[CLS] [USER] cur1 cur2 [SEP]");
  EXPECT_THROW(assemble_token_sequence(ctx, current, 4), ValidationError);
}

TEST(Assemble, InvariantsAcrossLengths) {
  SynthesisSpec spec;
  spec.dialogues = 20;
  spec.max_turns = 10;
  spec.dependency = ContextDependency::LastUser;
  const auto c = generate_synthetic_corpus(spec, 9);
  const PreprocessConfig pp;
  for (std::size_t max_len : {6u, 9u, 14u, 128u}) {
    for (const auto& ref : c.samples()) {
      for (auto s : kAllStrategies) {
        const auto seq = sample_sequence(c, ref, s, pp, max_len);
        ASSERT_LE(seq.size(), max_len);
        EXPECT_EQ(seq.tokens.front(), "[CLS]");
        EXPECT_EQ(seq.tokens.back(), "[SEP]");
        EXPECT_EQ(std::count(seq.tokens.begin(), seq.tokens.end(), "[CLS]"), 1);
        EXPECT_EQ(std::count(seq.tokens.begin(), seq.tokens.end(), "[SEP]"), 1);
        // Current utterance intact.
        const auto current = preprocess_utterance(c.turn(ref).user_utterance, pp);
        EXPECT_EQ(TokenList(seq.tokens.begin() + static_cast<long>(seq.current_span.first),
                            seq.tokens.begin() + static_cast<long>(seq.current_span.second)),
                  current);
        // Segments: 0 up to the final [USER], 1 after.
        const auto marker = seq.current_span.first - 1;
        EXPECT_EQ(seq.tokens[marker], "[USER]");
        for (std::size_t i = 0; i < seq.size(); ++i) EXPECT_EQ(seq.segment_ids[i], i >= marker ? 1 : 0);
      }
    }
  }
}

TEST(Assemble, SpeakerMarkersFollowRoles) {
  const auto d = three_turns();
  const auto seq = assemble_token_sequence(build_context(d, 3, ContextStrategy::AllContext, plain()), {"u3", "c"}, 128);
  EXPECT_EQ(joined(seq), "[CLS] [USER] u1 a [SYSTEM] s1 a [USER] u2 b [SYSTEM] s2 b [USER] u3 c [SEP]");
}
