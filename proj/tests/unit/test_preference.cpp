#include <gtest/gtest.h>

#include <cmath>

#include "clinalign/preference.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace clinalign;

namespace {

const SealedKey kKey{{"t1", "craft"}, {"t2", "ti"}, {"t3", "zero-shot"}};

RankingRecord rec(std::string c, std::string rater, std::vector<std::string> order) {
  RankingRecord r{std::move(c), std::move(rater), std::move(order), {}, ""};
  r.presentation = r.order;
  return r;
}

std::vector<std::vector<long double>> smoothed(const WinCounts& w, double eps = 0.5) {
  std::vector<std::vector<long double>> out(w.methods.size(), std::vector<long double>(w.methods.size(), 0));
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j)
      if (i != j) out[i][j] = w.wins[i][j] + eps;
  return out;
}

}  // namespace

TEST(Pairs, FullExpansionGivesMChooseTwo) {
  std::vector<RankingRecord> r{rec("c1", "r1", {"t1", "t2", "t3"})};
  const auto w = rankings_to_pairs(r, kKey);
  EXPECT_EQ(w.total(), 3.0);
  EXPECT_EQ(w.wins[w.index("craft")][w.index("ti")], 1.0);
  EXPECT_EQ(w.wins[w.index("craft")][w.index("zero-shot")], 1.0);
  EXPECT_EQ(w.wins[w.index("ti")][w.index("zero-shot")], 1.0);
  const auto top = rankings_to_pairs(r, kKey, PairExpansion::kTopOnly);
  EXPECT_EQ(top.total(), 2.0);
  EXPECT_EQ(top.wins[top.index("ti")][top.index("zero-shot")], 0.0);
}

TEST(Pairs, InvalidRecordsRejected) {
  EXPECT_THROW(validate_ranking(rec("c", "r", {"t1"})), Error);
  EXPECT_THROW(validate_ranking(rec("c", "r", {"t1", "t1"})), Error);
  auto r = rec("c", "r", {"t1", "t2"});
  r.presentation = {"t1", "t3"};
  EXPECT_THROW(validate_ranking(r), Error);
  std::vector<RankingRecord> bad{rec("c", "r", {"t1", "t9"})};
  EXPECT_THROW(rankings_to_pairs(bad, kKey), Error);
  EXPECT_THROW(ranking_from_json(json{{"case_id", "c"}}), Error);
}

TEST(BradleyTerry, TwoMethodsClosedForm) {
  auto w = empty_counts({"a", "b"});
  w.wins[0][1] = 30;
  w.wins[1][0] = 10;
  const auto r = fit_bt(w);
  ASSERT_TRUE(r.converged);
  // MLE ratio equals the smoothed win ratio
  EXPECT_NEAR(r.strengths[0] / r.strengths[1], 30.5 / 10.5, 1e-8);
  EXPECT_NEAR(r.strengths[0] + r.strengths[1], 1.0, 1e-15);
}

TEST(BradleyTerry, LogLikelihoodNonDecreasing) {
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    auto w = empty_counts({"a", "b", "c", "d", "e"});
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        if (i != j) w.wins[i][j] = static_cast<double>(rng.below(30));
    const auto r = fit_bt(w);
    for (std::size_t i = 1; i < r.log_likelihood.size(); ++i)
      EXPECT_GE(r.log_likelihood[i], r.log_likelihood[i - 1] - 1e-12);
    EXPECT_TRUE(r.converged);
  }
}

TEST(BradleyTerry, ThreeMethodsMatchGridOracle) {
  Rng rng(8);
  for (int k = 0; k < 5; ++k) {
    auto w = empty_counts({"a", "b", "c"});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        if (i != j) w.wins[i][j] = static_cast<double>(rng.below(40));
    const auto r = fit_bt(w);
    const auto [d1, d2] = oracle::bt_grid_3(smoothed(w));
    EXPECT_NEAR(std::log(r.strengths[1] / r.strengths[0]), static_cast<double>(d1), 1e-6);
    EXPECT_NEAR(std::log(r.strengths[2] / r.strengths[0]), static_cast<double>(d2), 1e-6);
  }
}

TEST(BradleyTerry, RelabelingPermutesStrengths) {
  auto w = empty_counts({"a", "b", "c"});
  w.wins = {{0, 5, 9}, {3, 0, 7}, {1, 2, 0}};
  auto p = empty_counts({"c", "a", "b"});
  const std::size_t map[3] = {1, 2, 0};  // new index of old method
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) p.wins[map[i]][map[j]] = w.wins[i][j];
  const auto r = fit_bt(w), q = fit_bt(p);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.strengths[i], q.strengths[map[i]], 1e-10);
}

TEST(BradleyTerry, EqualWinsGiveEqualStrengths) {
  auto w = empty_counts({"a", "b", "c", "d"});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (i != j) w.wins[i][j] = 6;
  const auto r = fit_bt(w);
  for (double s : r.strengths) EXPECT_NEAR(s, 0.25, 1e-12);
}

TEST(BradleyTerry, UnsmoothedDominanceIsFlaggedUnbounded) {
  auto w = empty_counts({"a", "b"});
  w.wins[0][1] = 10;
  BTOptions opt;
  opt.smoothing = 0;
  opt.max_iterations = 50;
  const auto r = fit_bt(w, opt);
  EXPECT_FALSE(r.bounded);
  EXPECT_TRUE(fit_bt(w).bounded);
}

TEST(BradleyTerry, MethodWithNoComparisonsIsAnError) {
  auto w = empty_counts({"a", "b", "c"});
  w.wins[0][1] = 3;
  EXPECT_THROW(fit_bt(w), Error);
}

TEST(Top1, RatesAndBootstrapBracket) {
  std::vector<RankingRecord> r;
  for (int i = 0; i < 30; ++i) {
    const std::vector<std::string> order = i % 3 == 0 ? std::vector<std::string>{"t2", "t1", "t3"}
                                                       : std::vector<std::string>{"t1", "t2", "t3"};
    r.push_back(rec("c" + std::to_string(i), "r1", order));
  }
  const auto rows = top1_rate(r, kKey, 1000, 0.95, 7);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& row : rows) {
    EXPECT_LE(row.ci.lo, row.rate);
    EXPECT_GE(row.ci.hi, row.rate);
    if (row.method == "craft") {
      EXPECT_NEAR(row.rate, 20.0 / 30, 1e-15);
    }
    if (row.method == "zero-shot") {
      EXPECT_EQ(row.rate, 0.0);
      EXPECT_EQ(row.ci.hi, 0.0);
    }
  }
}

TEST(RankDistribution, RowsSumToOne) {
  std::vector<RankingRecord> r{rec("c1", "r1", {"t1", "t2", "t3"}), rec("c2", "r1", {"t3", "t1", "t2"})};
  const auto d = rank_distribution(r, kKey);
  EXPECT_EQ(d.at("craft"), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(d.at("ti"), (std::vector<double>{0, 0.5, 0.5}));
}

TEST(RaterAgreement, IdenticalRankingsAgreeFully) {
  std::vector<RankingRecord> r{rec("c1", "r1", {"t1", "t2", "t3"}), rec("c1", "r2", {"t1", "t2", "t3"}),
                               rec("c2", "r1", {"t1", "t2", "t3"}), rec("c2", "r2", {"t3", "t2", "t1"})};
  const auto a = rater_agreement(r, kKey);
  EXPECT_EQ(a.shared_cases, 2u);
  EXPECT_EQ(a.top1_agreement, 0.5);
  EXPECT_EQ(a.mean_kendall_tau, 0.0);
}

TEST(PreferenceVsCas, MethodSetsMustMatch) {
  auto w = empty_counts({"a", "b", "c"});
  w.wins = {{0, 9, 9}, {2, 0, 9}, {1, 2, 0}};
  const auto bt = fit_bt(w);
  const auto c = preference_vs_cas(bt, {{"a", 0.5}, {"b", 0.4}, {"c", 0.3}});
  EXPECT_NEAR(c.spearman_rho, 1.0, 1e-12);
  EXPECT_THROW(preference_vs_cas(bt, {{"a", 0.5}, {"b", 0.4}}), Error);
}
