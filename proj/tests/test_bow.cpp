#include "vslam/bow.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "vslam/errors.hpp"

using namespace vslam;

namespace {

// 10 well-separated float clusters along the first axis.
DescriptorArray planted_clusters(std::mt19937_64& rng, int per_cluster,
                                 double noise) {
  std::normal_distribution<double> gauss(0.0, noise);
  DescriptorArray arr = DescriptorArray::make_float(8);
  for (int c = 0; c < 10; ++c) {
    for (int i = 0; i < per_cluster; ++i) {
      std::vector<float> d(8, 0.0f);
      d[0] = static_cast<float>(20.0 * c + gauss(rng));
      d[1] = static_cast<float>(gauss(rng));
      arr.push_float(d.data());
    }
  }
  return arr;
}

FeatureSet set_from(const DescriptorArray& arr, std::vector<int> rows) {
  FeatureSet s;
  s.descriptors = arr.variant() == DescriptorVariant::kFloat
                      ? DescriptorArray::make_float(arr.length())
                      : DescriptorArray::make_binary(arr.length());
  for (int r : rows) {
    s.keypoints.push_back({});
    if (arr.variant() == DescriptorVariant::kFloat) {
      s.descriptors.push_float(arr.float_row(r));
    } else {
      s.descriptors.push_binary(arr.word_row(r));
    }
  }
  return s;
}

}  // namespace

TEST(Vocabulary, PlantedClustersRecovered) {
  std::mt19937_64 rng(3);
  const DescriptorArray training = planted_clusters(rng, 50, 0.5);
  const Vocabulary vocab = Vocabulary::build(training, 1, 10, 99);
  ASSERT_EQ(vocab.leaf_count(), 10u);

  // Each true center must have a vocabulary center within the intra-cluster
  // radius, and the mapping must be one-to-one.
  std::set<std::int32_t> used;
  for (int c = 0; c < 10; ++c) {
    Descriptor probe;
    probe.variant = DescriptorVariant::kFloat;
    probe.length = 8;
    probe.floats.assign(8, 0.0f);
    probe.floats[0] = static_cast<float>(20.0 * c);
    double best = 1e300;
    std::int32_t best_node = -1;
    for (std::int32_t id = 0; id < static_cast<std::int32_t>(vocab.node_count());
         ++id) {
      if (!vocab.node(id).children.empty() || id == 0) continue;
      const double d = descriptor_distance(probe, vocab.node(id).center);
      if (d < best) {
        best = d;
        best_node = id;
      }
    }
    EXPECT_LT(best, 2.0) << "cluster " << c;
    EXPECT_TRUE(used.insert(best_node).second);
  }
}

TEST(Vocabulary, QuantizeConsistentWithinCluster) {
  std::mt19937_64 rng(5);
  const DescriptorArray training = planted_clusters(rng, 40, 0.4);
  const Vocabulary vocab = Vocabulary::build(training, 1, 10, 7);
  // Rows come in cluster blocks of 40.
  for (int c = 0; c < 10; ++c) {
    const WordId w0 = vocab.quantize(training.row(40 * c)).first;
    for (int i = 1; i < 40; ++i) {
      EXPECT_EQ(vocab.quantize(training.row(40 * c + i)).first, w0);
    }
    if (c > 0) {
      EXPECT_NE(vocab.quantize(training.row(0)).first, w0);
    }
  }
}

TEST(Vocabulary, TooFewDescriptorsThrows) {
  DescriptorArray arr = DescriptorArray::make_float(4);
  std::vector<float> d(4, 0.0f);
  for (int i = 0; i < 5; ++i) arr.push_float(d.data());
  EXPECT_THROW(Vocabulary::build(arr, 2, 10, 0), TooFewDescriptors);
}

TEST(Vocabulary, DeterministicUnderFixedSeed) {
  std::mt19937_64 rng(7);
  const DescriptorArray training = planted_clusters(rng, 30, 0.5);
  const Vocabulary a = Vocabulary::build(training, 2, 4, 123);
  const Vocabulary b = Vocabulary::build(training, 2, 4, 123);
  ASSERT_EQ(a.node_count(), b.node_count());
  for (std::size_t i = 0; i < a.node_count(); ++i) {
    const auto& na = a.node(static_cast<std::int32_t>(i));
    const auto& nb = b.node(static_cast<std::int32_t>(i));
    EXPECT_EQ(na.parent, nb.parent);
    EXPECT_EQ(na.weight, nb.weight);
    EXPECT_EQ(na.center.floats, nb.center.floats);
  }
}

TEST(Vocabulary, DeepBinaryBuildRespectsLeafBound) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::uint64_t> bits;
  DescriptorArray arr = DescriptorArray::make_binary(64);
  for (int i = 0; i < 100000; ++i) {
    const std::uint64_t w = bits(rng);
    arr.push_binary(&w);
  }
  const Vocabulary vocab = Vocabulary::build(arr, 6, 10, 5);
  EXPECT_LE(vocab.leaf_count(), 1000000u);
  EXPECT_LE(vocab.leaf_count(), 100000u);
  EXPECT_GT(vocab.leaf_count(), 1000u);
}

TEST(ToBow, EmptyFeaturesGiveEmptyVector) {
  std::mt19937_64 rng(13);
  const DescriptorArray training = planted_clusters(rng, 30, 0.5);
  const Vocabulary vocab = Vocabulary::build(training, 1, 10, 3);
  FeatureSet empty;
  empty.descriptors = DescriptorArray::make_float(8);
  EXPECT_TRUE(vocab.to_bow(empty).empty());
}

TEST(ToBow, EqualDescriptorsGiveSingleWordWeightOne) {
  std::mt19937_64 rng(17);
  const DescriptorArray training = planted_clusters(rng, 30, 0.5);
  const Vocabulary vocab = Vocabulary::build(training, 1, 10, 3);
  const FeatureSet set = set_from(training, {0, 0, 0, 0});
  const BowVector bow = vocab.to_bow(set);
  ASSERT_EQ(bow.size(), 1u);
  EXPECT_DOUBLE_EQ(bow.begin()->second, 1.0);
}

TEST(ToBow, DuplicationInvariant) {
  std::mt19937_64 rng(19);
  const DescriptorArray training = planted_clusters(rng, 30, 0.5);
  const Vocabulary vocab = Vocabulary::build(training, 1, 10, 3);
  const FeatureSet once = set_from(training, {0, 35, 70, 120});
  const FeatureSet twice = set_from(training, {0, 35, 70, 120, 0, 35, 70, 120});
  const BowVector a = vocab.to_bow(once);
  const BowVector b = vocab.to_bow(twice);
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [w, v] : a) {
    EXPECT_NEAR(b.at(w), v, 1e-15);
  }
}

TEST(ToBow, PermutationInvariant) {
  std::mt19937_64 rng(23);
  const DescriptorArray training = planted_clusters(rng, 30, 0.5);
  const Vocabulary vocab = Vocabulary::build(training, 2, 4, 3);
  const FeatureSet a = set_from(training, {0, 31, 65, 99, 140, 250});
  const FeatureSet b = set_from(training, {250, 99, 0, 140, 31, 65});
  EXPECT_EQ(vocab.to_bow(a), vocab.to_bow(b));
}

TEST(ToBow, VariantMismatchThrows) {
  std::mt19937_64 rng(29);
  const DescriptorArray training = planted_clusters(rng, 30, 0.5);
  const Vocabulary vocab = Vocabulary::build(training, 1, 10, 3);
  FeatureSet bad;
  bad.descriptors = DescriptorArray::make_binary(64);
  std::uint64_t w = 5;
  bad.keypoints.push_back({});
  bad.descriptors.push_binary(&w);
  EXPECT_THROW(vocab.to_bow(bad), VariantMismatch);
}

TEST(L2Score, KnownValues) {
  BowVector a{{1, 1.0}};
  BowVector b{{2, 1.0}};
  EXPECT_DOUBLE_EQ(l2_score(a, a), 1.0);
  EXPECT_NEAR(l2_score(a, b), 1.0 - 0.5 * std::sqrt(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(l2_score({}, a), 0.0);
  EXPECT_DOUBLE_EQ(l2_score(a, {}), 0.0);
  EXPECT_DOUBLE_EQ(l2_score({}, {}), 0.0);
}

TEST(L2Score, SymmetricBoundedScaleInvariant) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::uniform_int_distribution<int> word(0, 30);
  for (int trial = 0; trial < 200; ++trial) {
    BowVector a, b;
    for (int i = 0; i < 8; ++i) a[word(rng)] += u(rng);
    for (int i = 0; i < 8; ++i) b[word(rng)] += u(rng);
    const double ab = l2_score(a, b);
    EXPECT_DOUBLE_EQ(ab, l2_score(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    // Positive scaling before normalization changes nothing.
    BowVector scaled = a;
    for (auto& [w, v] : scaled) v *= 17.5;
    EXPECT_NEAR(l2_score(scaled, b), ab, 1e-12);
    EXPECT_NEAR(l2_score(a, a), 1.0, 1e-12);
  }
}

TEST(Database, SelfQueryRanksFirstWithScoreOne) {
  std::mt19937_64 rng(37);
  const DescriptorArray training = planted_clusters(rng, 50, 0.5);
  const Vocabulary vocab = Vocabulary::build(training, 2, 4, 3);
  KeyFrameDatabase db;
  std::uniform_int_distribution<int> row(0, training.count() - 1);
  std::vector<BowVector> bows;
  for (int kf = 0; kf < 50; ++kf) {
    std::vector<int> rows;
    for (int i = 0; i < 12; ++i) rows.push_back(row(rng));
    const BowVector bow = vocab.to_bow(set_from(training, rows));
    bows.push_back(bow);
    db.add(kf, bow);
  }
  for (int kf = 0; kf < 50; ++kf) {
    const auto results = db.query(bows[kf], 0.05);
    ASSERT_FALSE(results.empty());
    EXPECT_EQ(results.front().keyframe_id, kf);
    EXPECT_NEAR(results.front().score, 1.0, 1e-12);
  }
}

TEST(Database, RankingMatchesBruteForce) {
  std::mt19937_64 rng(41);
  const DescriptorArray training = planted_clusters(rng, 50, 0.5);
  const Vocabulary vocab = Vocabulary::build(training, 2, 4, 3);
  KeyFrameDatabase db;
  std::uniform_int_distribution<int> row(0, training.count() - 1);
  std::vector<BowVector> bows;
  for (int kf = 0; kf < 50; ++kf) {
    std::vector<int> rows;
    for (int i = 0; i < 10; ++i) rows.push_back(row(rng));
    bows.push_back(vocab.to_bow(set_from(training, rows)));
    db.add(kf, bows.back());
  }
  std::vector<int> probe_rows;
  for (int i = 0; i < 10; ++i) probe_rows.push_back(row(rng));
  const BowVector probe = vocab.to_bow(set_from(training, probe_rows));

  const auto results = db.query(probe, 0.0);

  // Exhaustive oracle over all stored keyframes.
  std::vector<std::pair<double, int>> expected;
  for (int kf = 0; kf < 50; ++kf) {
    bool shares = false;
    for (const auto& [w, v] : probe) {
      if (bows[kf].count(w)) {
        shares = true;
        break;
      }
    }
    if (shares) expected.push_back({l2_score(probe, bows[kf]), kf});
  }
  std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  ASSERT_EQ(results.size(), expected.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    EXPECT_EQ(results[i].keyframe_id, expected[i].second);
    EXPECT_DOUBLE_EQ(results[i].score, expected[i].first);
  }
}

TEST(Database, EmptyDatabaseGivesNoCandidates) {
  KeyFrameDatabase db;
  BowVector probe{{3, 1.0}};
  EXPECT_TRUE(db.query(probe, 0.0).empty());
}

TEST(Database, RemoveErasesEntries) {
  KeyFrameDatabase db;
  BowVector a{{1, 0.5}, {2, 0.5}};
  db.add(7, a);
  ASSERT_EQ(db.query(a, 0.0).size(), 1u);
  db.remove(7);
  EXPECT_TRUE(db.query(a, 0.0).empty());
}

TEST(Vocabulary, SaveLoadPreservesQuantization) {
  std::mt19937_64 rng(43);
  for (auto variant : {DescriptorVariant::kFloat, DescriptorVariant::kBinary}) {
    DescriptorArray training =
        variant == DescriptorVariant::kFloat
            ? planted_clusters(rng, 40, 0.5)
            : DescriptorArray::make_binary(64);
    if (variant == DescriptorVariant::kBinary) {
      std::uniform_int_distribution<std::uint64_t> bits;
      for (int i = 0; i < 500; ++i) {
        const std::uint64_t w = bits(rng);
        training.push_binary(&w);
      }
    }
    const Vocabulary vocab = Vocabulary::build(training, 2, 5, 17);
    const std::string path = ::testing::TempDir() + "/vocab.txt";
    vocab.save(path);
    const Vocabulary back = Vocabulary::load(path);
    ASSERT_EQ(back.node_count(), vocab.node_count());
    ASSERT_EQ(back.leaf_count(), vocab.leaf_count());
    for (int i = 0; i < training.count(); i += 7) {
      const auto [w1, idf1] = vocab.quantize(training.row(i));
      const auto [w2, idf2] = back.quantize(training.row(i));
      EXPECT_EQ(w1, w2);
      EXPECT_EQ(idf1, idf2);
    }
  }
}
