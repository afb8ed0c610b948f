#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "kblm/interactive.hpp"

using namespace kblm;

TEST(TypingSession, ScriptedReplayMatchesTheSimulator) {
  const auto c = fixture::generated_corpus(60, 71);
  ASSERT_GE(c.split.test.size(), 5u);
  for (auto v : fixture::kAllVariants) {
    const auto m = fixture::quick_train(v, c, 1);
    for (bool tab : {false, true}) {
      CompletionOptions opts;
      opts.count_accept_key = tab;
      for (std::size_t i = 0; i < 5; ++i) {
        const auto& d = c.split.test[i];
        TypingSession s(m, d.kb, {}, opts);
        scripted_keys(s, d.words);
        EXPECT_EQ(s.words(), d.words);
        EXPECT_EQ(s.tally(), simulate_corpus(m, {d}, {}, opts).tally) << to_string(v) << " " << d.id;
      }
    }
  }
}

TEST(TypingSession, AblatedSessionMatchesAblatedSimulation) {
  const auto c = fixture::generated_corpus(40, 72);
  const auto m = fixture::quick_train(Variant::ConditionalGrounded, c, 1);
  const AblationFlags abl{true, true};
  const auto& d = c.split.test[0];
  TypingSession s(m, d.kb, abl);
  scripted_keys(s, d.words);
  EXPECT_EQ(s.tally(), simulate_corpus(m, {d}, abl).tally);
}

TEST(TypingSession, KeyHandling) {
  const auto vocab = fixture::tiny_vocab();
  const auto m = fixture::random_model(Variant::Baseline, 73, vocab);
  TypingSession s(m, {});
  EXPECT_FALSE(s.press('\n'));
  EXPECT_FALSE(s.press('\t'));  // nothing displayed yet
  EXPECT_TRUE(s.press(' '));    // leading space is ignored
  EXPECT_TRUE(s.words().empty());
  EXPECT_TRUE(s.press('v'));
  ASSERT_TRUE(s.ghost());
  EXPECT_EQ(*s.ghost(), "ventricle");
  EXPECT_TRUE(s.press('\t'));
  EXPECT_EQ(s.prefix(), "ventricle");
  EXPECT_FALSE(s.ghost());
  s.press(' ');
  s.press_all("zz");
  EXPECT_FALSE(s.ghost());
  s.finish();
  EXPECT_EQ(s.words(), (std::vector<std::string>{"ventricle", "zz"}));
  const auto& t = s.tally();
  EXPECT_EQ(t.total_chars, 12u);
  EXPECT_EQ(t.accepted_chars, 8u);
  EXPECT_EQ(t.typed_keys, 4u);
  EXPECT_EQ(s.predictions(3).size(), 3u);
}

TEST(TypingSession, DistractionIsChargedWhenTypingContinues) {
  const Vocabulary v({"mildly", "moderately"});
  ModelConfig c;
  c.dim = 4;
  LanguageModel m(c, v);  // all-zero parameters: uniform distribution, ties to the lower id
  TypingSession s(m, {});
  s.press('m');
  EXPECT_EQ(*s.ghost(), "mildly");
  EXPECT_EQ(s.tally().distraction_chars, 0u);
  s.press('o');
  EXPECT_EQ(s.tally().distraction_chars, 5u);
  EXPECT_EQ(*s.ghost(), "moderately");
  s.press('\t');
  s.finish();
  EXPECT_EQ(s.tally().distraction_chars, 5u);
  EXPECT_EQ(s.tally().accepted_chars, 8u);
}
