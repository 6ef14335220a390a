#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <sstream>

#include "lvqa/scoring.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace lvqa {
namespace {

AnswerRecord rec(Outcome o) {
  AnswerRecord r;
  r.outcome = o;
  return r;
}

std::vector<AnswerRecord> recs(std::initializer_list<Outcome> os) {
  std::vector<AnswerRecord> v;
  for (auto o : os) v.push_back(rec(o));
  return v;
}

TEST(Counts, SpecimenMultisets) {
  auto r = aggregate(recs({Outcome::kTP, Outcome::kFN, Outcome::kTN, Outcome::kFP}));
  EXPECT_EQ(r.counts, (ConfusionCounts{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(*r.precision, 0.5);
  EXPECT_DOUBLE_EQ(*r.recall, 0.5);
  EXPECT_DOUBLE_EQ(*r.f1, 0.5);

  auto u = aggregate(recs({Outcome::kTN, Outcome::kTN}));
  EXPECT_EQ(u.counts, (ConfusionCounts{0, 0, 2, 0}));
  EXPECT_FALSE(u.precision);
  EXPECT_FALSE(u.recall);
  EXPECT_FALSE(u.f1);
  EXPECT_EQ(or_zero(u.f1), 0.0);

  auto empty = aggregate(std::vector<AnswerRecord>{});
  EXPECT_EQ(empty.counts.total(), 0);
  EXPECT_FALSE(empty.f1);
}

TEST(Counts, PartialDefinedness) {
  // Precision defined, recall defined, F1 undefined when tp = 0.
  ConfusionCounts c{0, 2, 0, 3};
  EXPECT_EQ(c.precision(), Fraction::of(0, 2));
  EXPECT_EQ(c.recall(), Fraction::of(0, 3));
  EXPECT_FALSE(c.f1());
  ConfusionCounts only_fn{0, 0, 0, 4};
  EXPECT_FALSE(only_fn.precision());
  EXPECT_TRUE(only_fn.recall());
}

TEST(Counts, MatchRationalOracleOnRandomMultisets) {
  std::mt19937 rng(47);
  std::uniform_int_distribution<int> len(0, 40), pick(0, 3);
  const Outcome all[] = {Outcome::kTP, Outcome::kFP, Outcome::kTN, Outcome::kFN};
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<AnswerRecord> v;
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) {
      const Outcome o = all[pick(rng)];
      v.push_back(rec(o));
      (o == Outcome::kTP ? tp : o == Outcome::kFP ? fp : o == Outcome::kTN ? tn : fn)++;
    }
    auto c = tally(v);
    ASSERT_EQ(c, (ConfusionCounts{tp, fp, tn, fn}));
    const auto want = oracle::prf(tp, fp, fn);
    auto same = [](std::optional<Fraction> got, std::optional<oracle::Q> q) {
      return got.has_value() == q.has_value() && (!got || (got->num == q->n && got->den == q->d));
    };
    ASSERT_TRUE(same(c.precision(), want.p)) << tp << " " << fp << " " << fn;
    ASSERT_TRUE(same(c.recall(), want.r)) << tp << " " << fp << " " << fn;
    ASSERT_TRUE(same(c.f1(), want.f1)) << tp << " " << fp << " " << fn;
  }
}

TEST(Aggregation, MicroPoolsMacroAverages) {
  std::vector<ScoreReport> members = {report_from_counts({1, 0, 0, 1}, Scope::kImage),
                                      report_from_counts({3, 1, 2, 0}, Scope::kImage),
                                      report_from_counts({0, 0, 5, 0}, Scope::kImage)};
  auto micro = aggregate_micro(members, Scope::kGroup);
  EXPECT_EQ(micro.counts, (ConfusionCounts{4, 1, 7, 1}));
  EXPECT_DOUBLE_EQ(*micro.f1, 8.0 / 10.0);
  EXPECT_EQ(micro.scope, Scope::kGroup);
  auto macro = aggregate_macro(members, Scope::kGroup);
  // Third member has undefined F1 and is left out of the mean.
  EXPECT_DOUBLE_EQ(*macro.f1, (2.0 / 3.0 + 6.0 / 7.0) / 2.0);
  EXPECT_EQ(macro.counts, micro.counts);
}

TEST(SwapTest, FailureRateCountsStrictWins) {
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 62; ++i) pairs.push_back({0.9, 0.5});
  for (int i = 0; i < 3; ++i) pairs.push_back({0.4, 0.6});
  auto r = swap_failure_rate(pairs);
  EXPECT_EQ(r.n_failures, 3);
  EXPECT_EQ(r.n_cases, 65);
  EXPECT_NEAR(r.failure_rate, 4.62, 0.005);

  std::vector<std::pair<double, double>> one{{0.9, 0.95}};
  EXPECT_DOUBLE_EQ(swap_failure_rate(one).failure_rate, 100.0);
  std::vector<std::pair<double, double>> tie{{0.7, 0.7}};
  EXPECT_DOUBLE_EQ(swap_failure_rate(tie).failure_rate, 0.0);
  EXPECT_THROW(swap_failure_rate(std::vector<std::pair<double, double>>{}), EmptyInputError);
}

TEST(ScoreCsv, RoundTripsCountsAndUndefinedCells) {
  std::vector<ItemScore> rows = {{"a", "g1", report_from_counts({2, 1, 3, 1}, Scope::kImage)},
                                 {"b", "g1", report_from_counts({0, 0, 2, 0}, Scope::kImage)}};
  std::ostringstream out;
  write_scores_csv(out, rows);
  const auto text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), kScoreCsvHeader);
  EXPECT_NE(text.find("b,g1,0,0,2,0,NA,NA,NA"), std::string::npos);
  std::istringstream in(text);
  auto back = read_scores_csv(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].report.counts, rows[0].report.counts);
  EXPECT_EQ(back[0].id(), "a/g1");
  EXPECT_DOUBLE_EQ(*back[0].report.f1, 4.0 / 6.0);
  EXPECT_FALSE(back[1].report.f1);
}

TEST(ScoreCsv, RejectsMalformedRows) {
  std::istringstream missing("source_id,generator_id,tp\na,b,1\n");
  EXPECT_THROW(read_scores_csv(missing), SchemaError);
  std::istringstream negative(std::string(kScoreCsvHeader) + "\na,b,-1,0,0,0,NA,NA,NA\n");
  EXPECT_THROW(read_scores_csv(negative), SchemaError);
  std::istringstream empty("");
  EXPECT_THROW(read_scores_csv(empty), SchemaError);
}

TEST(Csv, QuotedFieldsKeepCommas) {
  auto f = csv::split(R"(a,"b, c",d)");
  EXPECT_EQ(f, (std::vector<std::string>{"a", "b, c", "d"}));
  EXPECT_EQ(csv::number(0.5), "0.5");
  EXPECT_EQ(csv::number(std::optional<double>{}), "NA");
}

TEST(BaselineImport, PairsVariantsPerItem) {
  std::istringstream in(
      "source_id,generator_id,description_variant,score\n"
      "s2,g,swapped,0.3\ns1,g,correct,0.9\ns1,g,swapped,0.95\ns2,g,correct,0.8\n");
  auto pairs = read_baseline_scores(in);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].source_id, "s1");
  EXPECT_DOUBLE_EQ(pairs[0].swapped, 0.95);
  EXPECT_DOUBLE_EQ(pairs[1].correct, 0.8);

  std::istringstream lonely("source_id,generator_id,description_variant,score\ns1,g,correct,0.9\n");
  EXPECT_THROW(read_baseline_scores(lonely), SchemaError);
  std::istringstream dup(
      "source_id,generator_id,description_variant,score\ns1,g,correct,0.9\ns1,g,correct,0.8\n");
  EXPECT_THROW(read_baseline_scores(dup), SchemaError);
  std::istringstream bad(
      "source_id,generator_id,description_variant,score\ns1,g,other,0.9\n");
  EXPECT_THROW(read_baseline_scores(bad), SchemaError);
}

}  // namespace
}  // namespace lvqa
