#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "fixtures.hpp"
#include "kblm/qualitative.hpp"
#include "oracles.hpp"

using namespace kblm;

namespace {

// "lvedd 57.3 mm . the left ventricle is mildly dilated ." with lvedd aligned to
// position 1 and the grade word at position 8.
Document study_document() {
  auto d = make_document("q", split_whitespace("lvedd 57.3 mm . the left ventricle is mildly dilated ."),
                         {{"lvedd", 57.3}, {"rhythm", std::string("sinus")}});
  d.align.values["lvedd"] = {1};
  d.align.graded["lv_dilation"] = 8;
  return d;
}

SubstitutionStudy make_study() {
  SubstitutionStudy s;
  s.document = study_document();
  s.slot = 8;
  s.candidates = {"mildly", "normal", "the"};
  s.configurations = {{"small", {{"lvedd", 40.1}}}, {"large", {{"lvedd", 72.9}}}, {"added", {{"ef", 33.3}}}};
  return s;
}

}  // namespace

TEST(TopK, OrderAndTies) {
  const Vocabulary v({"a", "b", "c"});
  Vec d(6);
  d << 0.2, 0.3, 0.2, 0.25, 0.0, 0.05;
  const auto all = top_k(d, v, 4, false);
  ASSERT_EQ(all.size(), 4u);
  EXPECT_EQ(all[0].word, "b");
  EXPECT_EQ(all[1].word, "<num>");
  EXPECT_EQ(all[2].word, "a");
  EXPECT_EQ(all[3].word, "c");
  const auto words = top_k(d, v, 10, true);
  ASSERT_EQ(words.size(), 3u);
  EXPECT_EQ(words[2].rank, 3u);
  EXPECT_EQ(words[2].word, "c");
}

TEST(SuggestionList, WatchedWordsUseWordRanks) {
  const auto vocab = fixture::tiny_vocab();
  const auto m = fixture::random_model(Variant::ConditionalGrounded, 41, vocab, 1.0);
  auto doc = study_document();
  encode_document(doc, vocab);
  const auto list = suggestion_list(m, doc, 8, 5, {"mildly", "zebra"});
  ASSERT_EQ(list.top.size(), 5u);
  ASSERT_EQ(list.watched.size(), 2u);
  EXPECT_FALSE(list.watched[1].rank);
  ASSERT_TRUE(list.watched[0].rank);

  Vec dist;
  for_each_prediction(m, doc, {}, [&](std::size_t pos, const Token&, const Vec& d) {
    if (pos == 8) dist = d;
  });
  std::vector<bool> words(vocab.size());
  for (std::size_t j = 0; j < vocab.size(); ++j) words[j] = !vocab.is_special(static_cast<TokenId>(j));
  EXPECT_EQ(*list.watched[0].rank, oracle::sorted_rank(dist, *vocab.find("mildly"), &words));
  EXPECT_EQ(list.watched[0].probability, dist[*vocab.find("mildly")]);
}

TEST(Substitution, ApplyConfigurationRewritesKbAndText) {
  const auto d = apply_configuration(study_document(), {"x", {{"lvedd", 61.0}, {"ef", 30.5}}});
  EXPECT_EQ(d.words[1], "61");
  EXPECT_EQ(std::get<double>(d.kb[0].value), 61.0);
  ASSERT_EQ(d.kb.size(), 3u);
  EXPECT_EQ(d.kb[2].attribute, "ef");
  EXPECT_EQ(d.raw_text.substr(0, 12), "lvedd 61 mm ");
  EXPECT_FALSE(d.encoded());
}

TEST(Substitution, RowsRenormalize) {
  const auto vocab = fixture::tiny_vocab();
  for (auto v : fixture::kAllVariants) {
    const auto m = fixture::random_model(v, 42, vocab, 1.0);
    const auto r = substitution_study(m, make_study());
    ASSERT_EQ(r.doc_prob.size(), 3u);
    for (const auto& row : r.doc_prob) {
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
      for (double p : row) EXPECT_GE(p, 0.0);
    }
  }
}

TEST(Substitution, CellsAreDocumentProbabilities) {
  const auto vocab = fixture::tiny_vocab();
  const auto m = fixture::random_model(Variant::ConditionalGrounded, 43, vocab, 1.0);
  const auto study = make_study();
  const auto r = substitution_study(m, study);
  auto d = apply_configuration(study.document, study.configurations[1]);
  d.words[8] = "normal";
  encode_document(d, vocab);
  EXPECT_EQ(r.doc_log_prob[1][1], doc_log_probability(m, d));

  Vec dist;
  for_each_prediction(m, d, {}, [&](std::size_t pos, const Token&, const Vec& x) {
    if (pos == 8) dist = x;
  });
  EXPECT_EQ(r.slot_prob[1][2], dist[*vocab.find("the")]);
}

TEST(Substitution, IgnoringValuesMakesMaskedValueChangesInvisible) {
  const auto vocab = fixture::tiny_vocab();
  for (auto v : {Variant::Grounded, Variant::ConditionalGrounded}) {
    const auto m = fixture::random_model(v, 44, vocab, 1.0);
    auto study = make_study();
    study.configurations = {{"small", {{"lvedd", 40.1}}}, {"large", {{"lvedd", 72.9}}}};
    const auto plain = substitution_study(m, study);
    EXPECT_NE(plain.doc_prob[0], plain.doc_prob[1]) << to_string(v);
    const auto ablated = substitution_study(m, study, {false, true});
    EXPECT_EQ(ablated.doc_prob[0], ablated.doc_prob[1]) << to_string(v);
    EXPECT_EQ(ablated.doc_log_prob[0], ablated.doc_log_prob[1]) << to_string(v);
  }
}

TEST(Substitution, DefaultsToTheOriginalConfiguration) {
  const auto vocab = fixture::tiny_vocab();
  const auto m = fixture::random_model(Variant::Baseline, 45, vocab);
  auto study = make_study();
  study.configurations.clear();
  const auto r = substitution_study(m, study);
  EXPECT_EQ(r.configurations, std::vector<std::string>{"original"});
}

TEST(Substitution, InvalidStudiesAreRejected) {
  const auto vocab = fixture::tiny_vocab();
  const auto m = fixture::random_model(Variant::Baseline, 46, vocab);
  auto oov = make_study();
  oov.candidates = {"mildly", "severely"};
  EXPECT_THROW(substitution_study(m, oov), std::invalid_argument);
  auto special = make_study();
  special.candidates = {"<unk>"};
  EXPECT_THROW(substitution_study(m, special), std::invalid_argument);
  auto slot = make_study();
  slot.slot = 99;
  EXPECT_THROW(substitution_study(m, slot), std::out_of_range);
  auto none = make_study();
  none.candidates.clear();
  EXPECT_THROW(substitution_study(m, none), std::invalid_argument);
}

TEST(Substitution, JsonAndCsv) {
  const auto vocab = fixture::tiny_vocab();
  const auto m = fixture::random_model(Variant::Baseline, 47, vocab);
  const auto r = substitution_study(m, make_study());
  const auto j = to_json(r);
  EXPECT_EQ(j.at("doc_prob").size(), 3u);
  EXPECT_EQ(j.at("candidates")[1], "normal");
  std::ostringstream os;
  write_substitution_csv(os, r);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "configuration,mildly,normal,the");
}

TEST(LikelihoodRatio, SelfRatioIsOne) {
  const auto vocab = fixture::tiny_vocab();
  const auto m = fixture::random_model(Variant::ConditionalGrounded, 48, vocab, 1.0);
  auto d = study_document();
  encode_document(d, vocab);
  const auto r = likelihood_ratio(m, m, d);
  ASSERT_EQ(r.tokens.size(), d.tokens.size() + 1);
  EXPECT_EQ(r.tokens.back(), "<eos>");
  for (double x : r.ratios()) EXPECT_EQ(x, 1.0);
}

TEST(LikelihoodRatio, LogProductEqualsNllDifference) {
  const auto vocab = fixture::tiny_vocab();
  const auto a = fixture::random_model(Variant::ConditionalGrounded, 49, vocab, 1.0);
  const auto b = fixture::random_model(Variant::Baseline, 50, vocab, 1.0);
  auto rng = make_rng(49, 0);
  const auto d = fixture::random_doc(rng, vocab, 25, "r");
  const auto r = likelihood_ratio(a, b, d);
  const double sum = std::accumulate(r.log_ratio.begin(), r.log_ratio.end(), 0.0);
  const double diff = sequence_nll(b, d).total - sequence_nll(a, d).total;
  EXPECT_NEAR(sum, diff, 1e-9);
  // ablated comparison of one model against itself
  const auto s = likelihood_ratio(a, a, d, {}, {true, false});
  EXPECT_NEAR(std::accumulate(s.log_ratio.begin(), s.log_ratio.end(), 0.0),
              sequence_nll(a, d, {true, false}).total - sequence_nll(a, d).total, 1e-9);
}

TEST(LikelihoodRatio, VocabularyMismatchIsRejected) {
  const auto a = fixture::random_model(Variant::Baseline, 1, fixture::tiny_vocab());
  const auto b = fixture::random_model(Variant::Baseline, 1, Vocabulary({"x"}));
  auto d = make_document("v", {"x"}, {});
  encode_document(d, a.vocab());
  EXPECT_THROW(likelihood_ratio(a, b, d), std::invalid_argument);
}

TEST(LikelihoodRatio, TsvOutput) {
  RatioSeries s{{"the", "<eos>"}, {0.0, std::log(2.0)}};
  std::ostringstream os;
  write_ratio_tsv(os, s);
  EXPECT_EQ(os.str(), "token\tratio\nthe\t1\n<eos>\t2\n");
}
