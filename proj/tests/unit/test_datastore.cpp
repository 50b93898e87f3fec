#include <gtest/gtest.h>

#include <set>

#include "clinalign/datastore.hpp"
#include "fixtures.hpp"

using namespace clinalign;

TEST(Emb1, HeaderAndRowsRoundTrip) {
  fixture::TempDir dir;
  const std::vector<float> data{1, 2, 3, 4, 5, 6, 7, 8};
  write_file(dir / "m.emb", encode_emb1(2, 4, data));
  const auto m = load_embeddings(dir / "m.emb", "enc");
  EXPECT_EQ(m.rows, 2u);
  EXPECT_EQ(m.dim, 4u);
  EXPECT_EQ(m.data, data);
  EXPECT_EQ(m.ids, (std::vector<std::string>{"0", "1"}));
}

TEST(Emb1, TruncatedMatrixIsRejected) {
  fixture::TempDir dir;
  std::string bytes = encode_emb1(2, 4, std::vector<float>(8, 1.0f));
  const std::uint32_t three = 3;
  std::memcpy(bytes.data() + 4, &three, 4);
  write_file(dir / "t.emb", bytes);
  try {
    load_embeddings(dir / "t.emb");
    FAIL() << "expected a load error";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated matrix"), std::string::npos);
  }
}

TEST(Emb1, BadMagicAndTrailingBytes) {
  fixture::TempDir dir;
  write_file(dir / "bad.emb", std::string("EMB2") + std::string(8, '\0'));
  EXPECT_THROW(load_embeddings(dir / "bad.emb"), LoadError);
  write_file(dir / "long.emb", encode_emb1(1, 2, std::vector<float>{1, 2}) + std::string(4, '\0'));
  EXPECT_THROW(load_embeddings(dir / "long.emb"), LoadError);
}

TEST(Emb1, NonFiniteValueNamesTheRow) {
  fixture::TempDir dir;
  std::vector<float> data(9, 0.5f);
  data[7] = std::numeric_limits<float>::quiet_NaN();
  write_file(dir / "nan.emb", encode_emb1(3, 3, data));
  try {
    load_embeddings(dir / "nan.emb");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(Emb1, LoadSaveIsByteIdenticalOnRandomMatrices) {
  fixture::TempDir dir;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto rows = 1 + rng.below(20), dim = 1 + rng.below(16);
    auto m = fixture::random_matrix("enc", rows, dim, seed * 7 + 1);
    const auto path = dir / ("r" + std::to_string(seed) + ".emb");
    save_embeddings_with_ids(path, m);
    const std::string original = read_file(path);
    const auto loaded = load_embeddings(path, "enc");
    EXPECT_EQ(loaded.ids, m.ids);
    const auto again = dir / "again.emb";
    save_embeddings(again, loaded);
    EXPECT_EQ(read_file(again), original) << "seed " << seed;
  }
}

TEST(Emb1, SidecarRowCountMustMatch) {
  fixture::TempDir dir;
  auto m = fixture::random_matrix("enc", 3, 2, 1);
  save_embeddings_with_ids(dir / "m.emb", m);
  write_file(meta_sidecar(dir / "m.emb"), "{\"id\":\"only\"}\n");
  EXPECT_THROW(load_embeddings(dir / "m.emb"), LoadError);
}

TEST(EmbeddingMatrix, DuplicateIdsRejected) {
  auto m = fixture::random_matrix("enc", 2, 2, 3);
  m.ids = {"a", "a"};
  EXPECT_THROW(m.validate(), LoadError);
}

TEST(SampleMeta, RealSamplesCannotCarryMethod) {
  json j = {{"id", "x"}, {"split", "train"}, {"label", "a"}, {"source_method", "craft"}};
  EXPECT_THROW(sample_meta_from_json(j), LoadError);
  j["split"] = "generated";
  EXPECT_EQ(sample_meta_from_json(j).source_method.value(), "craft");
}

namespace {

DatasetManifest shaped_manifest(const std::vector<std::pair<std::string, std::size_t>>& train_counts) {
  DatasetManifest m;
  m.name = "fixture";
  for (const auto& [label, n] : train_counts) {
    m.label_set.push_back(label);
    for (std::size_t i = 0; i < n; ++i) m.samples.push_back({label + "_" + std::to_string(i), Split::kTrain, label, {}, {}});
    m.samples.push_back({label + "_test", Split::kTest, label, {}, {}});
  }
  m.recount();
  m.validate();
  return m;
}

std::vector<std::string> train_ids(const DatasetManifest& m) {
  std::vector<std::string> out;
  for (const auto& s : m.samples)
    if (s.split == Split::kTrain) out.push_back(s.id);
  return out;
}

}  // namespace

TEST(KShot, TenShotOnFourClasses) {
  const auto m = shaped_manifest({{"a", 12}, {"b", 10}, {"c", 30}, {"d", 11}});
  const auto sub = kshot_subset(m, 10, 42);
  EXPECT_EQ(sub.manifest.split_total("train"), 40u);
  EXPECT_TRUE(sub.short_classes.empty());
  EXPECT_EQ(sub.manifest.split_total("test"), 4u);
}

TEST(KShot, DeterministicUnderSeed) {
  const auto m = shaped_manifest({{"a", 40}, {"b", 25}});
  EXPECT_EQ(train_ids(kshot_subset(m, 10, 7).manifest), train_ids(kshot_subset(m, 10, 7).manifest));
  EXPECT_NE(train_ids(kshot_subset(m, 10, 7).manifest), train_ids(kshot_subset(m, 10, 8).manifest));
}

TEST(KShot, OrigaShapedTwentyShot) {
  const auto m = shaped_manifest({{"Non-glaucoma", 318}, {"Glaucoma", 136}});
  const auto sub = kshot_subset(m, 20, 3);
  // exhaustive recount
  std::map<std::string, std::size_t> per;
  std::set<std::string> ids;
  for (const auto& s : sub.manifest.samples)
    if (s.split == Split::kTrain) {
      ++per[s.label];
      EXPECT_TRUE(ids.insert(s.id).second);
      EXPECT_EQ(s.id.rfind(s.label + "_", 0), 0u);
    }
  EXPECT_EQ(ids.size(), 40u);
  EXPECT_EQ(per["Glaucoma"], 20u);
  EXPECT_EQ(per["Non-glaucoma"], 20u);
}

TEST(KShot, ShortClassesKeepEverythingAndAreFlagged) {
  const auto m = shaped_manifest({{"a", 5}, {"b", 30}});
  const auto sub = kshot_subset(m, 10, 1);
  EXPECT_EQ(sub.short_classes, std::vector<std::string>{"a"});
  EXPECT_EQ(sub.manifest.counts.at("train").at("a"), 5u);
  EXPECT_EQ(sub.manifest.counts.at("train").at("b"), 10u);
}

TEST(KShot, DifferentSeedsSameCounts) {
  const auto m = shaped_manifest({{"a", 17}, {"b", 9}, {"c", 50}});
  for (std::uint64_t s = 0; s < 10; ++s)
    EXPECT_EQ(kshot_subset(m, 12, s).manifest.counts, kshot_subset(m, 12, 99).manifest.counts);
}

TEST(KShot, ZeroIsAnError) {
  const auto m = shaped_manifest({{"a", 3}, {"b", 3}});
  EXPECT_THROW(kshot_subset(m, 0, 1), Error);
}

TEST(KShot, IndependentOfSampleOrder) {
  auto m = shaped_manifest({{"a", 30}, {"b", 30}});
  auto shuffled = m;
  std::reverse(shuffled.samples.begin(), shuffled.samples.end());
  auto a = train_ids(kshot_subset(m, 5, 11).manifest), b = train_ids(kshot_subset(shuffled, 5, 11).manifest);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(Manifest, CountsMustReconcileWithSamples) {
  auto m = shaped_manifest({{"a", 3}, {"b", 2}});
  m.counts["train"]["a"] = 4;
  EXPECT_THROW(m.validate(), LoadError);
}

TEST(Manifest, ReconcileAgainstMatrixRows) {
  const auto m = shaped_manifest({{"a", 3}, {"b", 2}});
  auto mat = fixture::random_matrix("enc", 5, 3, 1);
  mat.ids = train_ids(m);
  EXPECT_NO_THROW(m.reconcile(mat, "train"));
  mat.ids.back() = "stranger";
  EXPECT_THROW(m.reconcile(mat, "train"), LoadError);
  EXPECT_THROW(m.reconcile(fixture::random_matrix("enc", 4, 3, 1), "train"), LoadError);
}

TEST(Manifest, JsonRoundTrip) {
  auto m = shaped_manifest({{"x", 2}, {"y", 1}});
  m.embeddings.push_back({"train.emb", "siglip", "train"});
  const auto back = manifest_from_json(to_json(m));
  EXPECT_EQ(back.label_set, m.label_set);
  EXPECT_EQ(back.counts, m.counts);
  EXPECT_EQ(back.samples.size(), m.samples.size());
  EXPECT_EQ(back.embeddings.at(0).encoder_id, "siglip");
}

TEST(Manifest, UndeclaredLabelRejected) {
  auto m = shaped_manifest({{"a", 2}, {"b", 2}});
  m.samples.push_back({"z", Split::kTest, "zzz", {}, {}});
  m.recount();
  EXPECT_THROW(m.validate(), LoadError);
}

TEST(ScoreCsv, HeaderAndRoundTrip) {
  ScoreTable t{{"g1", "craft", 0.1, 0.2, 1.0, 0.9, 0.55}, {"g,2", "ti", 0.25, 0.5, 0.0, 0.75, 0.375}};
  const auto text = write_score_csv(t);
  EXPECT_EQ(text.substr(0, text.find('\n')), "id,method,vdc,ccs,dd,sfs,cas");
  const auto back = parse_score_csv(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].id, "g,2");
  EXPECT_DOUBLE_EQ(back[1].cas, 0.375);
  EXPECT_THROW(parse_score_csv("a,b\n"), LoadError);
}
