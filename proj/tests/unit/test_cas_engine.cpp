#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "clinalign/cas_engine.hpp"
#include "fixtures.hpp"

using namespace clinalign;

TEST(Cosine, BasicValues) {
  EXPECT_DOUBLE_EQ(cosine(Vector{0.3, -2, 5}, Vector{0.3, -2, 5}), 1.0);
  EXPECT_DOUBLE_EQ(cosine(Vector{1, 0}, Vector{0, 1}), 0.0);
  EXPECT_NEAR(cosine(Vector{1, 0}, Vector{1, 1}), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Cosine, ZeroVectorIsUndefined) {
  EXPECT_THROW(cosine(Vector{0, 0}, Vector{1, 1}), UndefinedError);
  EXPECT_THROW(cosine(Vector{1}, Vector{1, 1}), Error);
}

TEST(Cosine, SymmetricAndScaleInvariant) {
  Rng rng(5);
  for (int k = 0; k < 100; ++k) {
    Vector a(8), b(8);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    const double lambda = 0.01 + 100 * rng.uniform();
    Vector la = a;
    for (auto& v : la) v *= lambda;
    EXPECT_DOUBLE_EQ(cosine(a, b), cosine(b, a));
    EXPECT_NEAR(cosine(la, b), cosine(a, b), 1e-12);
  }
}

TEST(Cosine, FloatStorageAccumulatesInDouble) {
  std::vector<float> a(4096, 1e-3f), b(4096, 1e-3f);
  b[0] = 2e-3f;
  const double want = [&] {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      d += double(a[i]) * b[i];
      na += double(a[i]) * a[i];
      nb += double(b[i]) * b[i];
    }
    return d / (std::sqrt(na) * std::sqrt(nb));
  }();
  EXPECT_EQ(cosine(std::span<const float>(a), std::span<const float>(b)), want);
}

namespace {

ProbeModel two_class_probe(std::string encoder = "eval") {
  auto p = zero_probe(std::move(encoder), {"benign", "malignant"}, 2);
  p.weights << 1, 0, 0, 1;
  return p;
}

}  // namespace

TEST(ScoreSample, ReferenceRowAveragesToReferenceCas) {
  EXPECT_NEAR(macro_average(0.166, 0.158, 0.520, 0.824), 0.417, 0.0005);
}

TEST(ScoreSample, ReferenceEqualToGeneratedGivesUnitSfs) {
  const Vector g{0.2, 0.9}, p{1, 1}, c{0.5, 2};
  const auto r = score_sample({"eval", g, p, c, std::span<const double>(g)}, two_class_probe(), "malignant");
  EXPECT_DOUBLE_EQ(*r.sfs, 1.0);
  EXPECT_DOUBLE_EQ(r.dd, 1.0);
  EXPECT_DOUBLE_EQ(*r.cas, (r.vdc + r.ccs + r.dd + *r.sfs) / 4.0);
}

TEST(ScoreSample, ZeroComponentsGiveZeroCas) { EXPECT_EQ(macro_average(0, 0, 0, 0), 0.0); }

TEST(ScoreSample, NoReferenceLeavesCasUndefined) {
  const Vector g{0.2, 0.9}, p{1, 1}, c{0.5, 2};
  const auto r = score_sample({"eval", g, p, c, std::nullopt}, two_class_probe(), "benign");
  EXPECT_FALSE(r.sfs.has_value());
  EXPECT_FALSE(r.cas.has_value());
  EXPECT_DOUBLE_EQ(r.dd, 0.0);
}

TEST(ScoreSample, ProbeFromOtherSpaceIsABindingError) {
  const Vector g{0.2, 0.9};
  EXPECT_THROW(score_sample({"critic", g, g, g, std::nullopt}, two_class_probe("eval"), "benign"), BindingError);
}

TEST(ScoreSample, ProbModeReturnsSoftmaxProbability) {
  const Vector g{2.0, 0.0};
  const auto r = score_sample({"eval", g, g, g, std::nullopt}, two_class_probe(), "benign", DdMode::kProb);
  EXPECT_NEAR(r.dd, 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(Roles, CriticEqualToMetricRejected) {
  RoleBindings same{{{Role::kTrainingCritic, "medsiglip"}, {Role::kMetricEvaluator, "medsiglip"}}};
  EXPECT_THROW(same.validate(), BindingError);
  RoleBindings ok{{{Role::kTrainingCritic, "medsiglip"}, {Role::kMetricEvaluator, "siglip"},
                   {Role::kOutOfFamilyEvaluator, "metaclip2"}}};
  EXPECT_NO_THROW(ok.validate());
  RoleBindings oof{{{Role::kTrainingCritic, "medsiglip"}, {Role::kMetricEvaluator, "siglip"},
                    {Role::kOutOfFamilyEvaluator, "medsiglip"}}};
  EXPECT_THROW(oof.validate(), BindingError);
  EXPECT_THROW(parse_role("critic"), BindingError);
}

TEST(ScoreSet, SingleRowSummaryEqualsRow) {
  const ScoreTable t{{"a", "craft", 0.1, 0.2, 1, 0.7, 0.5}};
  const auto s = score_set(t);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].vdc, 0.1);
  EXPECT_EQ(s[0].cas, 0.5);
  EXPECT_EQ(s[0].dd_accuracy, 1.0);
}

TEST(ScoreSet, PermutationAndDuplicationInvariant) {
  Rng rng(9);
  ScoreTable t;
  for (int i = 0; i < 200; ++i) {
    ScoreRow r{"id" + std::to_string(i), i % 3 ? "craft" : "ti", rng.uniform(), rng.uniform(),
               double(rng.below(2)), rng.uniform(), 0};
    r.cas = macro_average(r.vdc, r.ccs, r.dd, r.sfs);
    t.push_back(r);
  }
  const auto base = score_set(t);
  auto shuffled = t;
  rng.shuffle(shuffled);
  const auto perm = score_set(shuffled);
  ASSERT_EQ(base.size(), perm.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_EQ(base[i].method, perm[i].method);
    EXPECT_EQ(base[i].cas, perm[i].cas);
    EXPECT_EQ(base[i].vdc, perm[i].vdc);
    EXPECT_EQ(base[i].dd_accuracy, perm[i].dd_accuracy);
  }
  auto doubled = t;
  doubled.insert(doubled.end(), t.begin(), t.end());
  const auto dup = score_set(doubled);
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_NEAR(base[i].cas, dup[i].cas, 1e-12);
    EXPECT_EQ(dup[i].n, 2 * base[i].n);
  }
}

TEST(ScoreDataset, LooksUpPromptsChecklistsAndReferences) {
  const std::string enc = "siglip";
  auto gen = make_matrix(enc, {"g1", "g2"}, {{1, 0}, {0, 1}});
  auto prompts = make_matrix(enc, {"r1", "r2"}, {{1, 1}, {0, 1}});
  auto checks = make_matrix(enc, {"benign", "malignant"}, {{1, 0}, {1, 1}});
  auto refs = make_matrix(enc, {"r1", "r2"}, {{1, 0}, {1, 0}});
  std::vector<SampleMeta> meta{{"g1", Split::kGenerated, "benign", "craft", "r1"},
                               {"g2", Split::kGenerated, "malignant", "ti", "r2"}};
  const RoleBindings roles{{{Role::kTrainingCritic, "medsiglip"}, {Role::kMetricEvaluator, enc}}};
  const auto table = score_dataset({&gen, meta, &prompts, &checks, &refs}, two_class_probe(enc), roles);
  ASSERT_EQ(table.size(), 2u);
  EXPECT_NEAR(table[0].vdc, 1 / std::sqrt(2.0), 1e-7);
  EXPECT_DOUBLE_EQ(table[0].ccs, 1.0);
  EXPECT_DOUBLE_EQ(table[0].sfs, 1.0);
  EXPECT_DOUBLE_EQ(table[0].dd, 1.0);
  EXPECT_DOUBLE_EQ(table[1].vdc, 1.0);
  EXPECT_DOUBLE_EQ(table[1].sfs, 0.0);
  for (const auto& r : table) EXPECT_NEAR(r.cas, (r.vdc + r.ccs + r.dd + r.sfs) / 4, 1e-15);

  const RoleBindings bad{{{Role::kTrainingCritic, enc}, {Role::kMetricEvaluator, enc}}};
  EXPECT_THROW(score_dataset({&gen, meta, &prompts, &checks, &refs}, two_class_probe(enc), bad), BindingError);
  auto critic_gen = gen;
  critic_gen.encoder_id = "medsiglip";
  EXPECT_THROW(score_dataset({&critic_gen, meta, &prompts, &checks, &refs}, two_class_probe(enc), roles),
               BindingError);
}
