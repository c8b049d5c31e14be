#include "vslam/features.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>

#include "vslam/errors.hpp"

using namespace vslam;

namespace {

Descriptor float_desc(std::initializer_list<float> values) {
  Descriptor d;
  d.variant = DescriptorVariant::kFloat;
  d.length = static_cast<int>(values.size());
  d.floats = values;
  return d;
}

Descriptor binary_desc(std::uint64_t bits, int length) {
  Descriptor d;
  d.variant = DescriptorVariant::kBinary;
  d.length = length;
  d.words = {bits};
  return d;
}

FeatureSet float_set(const std::vector<std::vector<float>>& descs) {
  FeatureSet set;
  set.descriptors =
      DescriptorArray::make_float(static_cast<int>(descs[0].size()));
  for (std::size_t i = 0; i < descs.size(); ++i) {
    Keypoint kp;
    kp.x = static_cast<double>(i);
    kp.y = 0.0;
    set.keypoints.push_back(kp);
    set.descriptors.push_float(descs[i].data());
  }
  return set;
}

}  // namespace

TEST(DescriptorDistance, FloatEuclidean) {
  EXPECT_DOUBLE_EQ(descriptor_distance(float_desc({0, 0, 0, 0}),
                                       float_desc({3, 4, 0, 0})),
                   5.0);
}

TEST(DescriptorDistance, BinaryHamming) {
  EXPECT_DOUBLE_EQ(
      descriptor_distance(binary_desc(0b1010, 4), binary_desc(0b1010, 4)),
      0.0);
  EXPECT_DOUBLE_EQ(
      descriptor_distance(binary_desc(0b1111, 4), binary_desc(0b0000, 4)),
      4.0);
}

TEST(DescriptorDistance, VariantMismatchThrows) {
  EXPECT_THROW(
      descriptor_distance(float_desc({1, 2}), binary_desc(0b01, 2)),
      VariantMismatch);
  EXPECT_THROW(
      descriptor_distance(float_desc({1, 2}), float_desc({1, 2, 3})),
      VariantMismatch);
}

TEST(DescriptorDistance, MetricOnRandomTriples) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 2.0);
  std::uniform_int_distribution<std::uint64_t> bits;
  for (int trial = 0; trial < 1000; ++trial) {
    Descriptor fa = float_desc({0, 0, 0}), fb = fa, fc = fa;
    for (int i = 0; i < 3; ++i) {
      fa.floats[i] = static_cast<float>(gauss(rng));
      fb.floats[i] = static_cast<float>(gauss(rng));
      fc.floats[i] = static_cast<float>(gauss(rng));
    }
    const double ab = descriptor_distance(fa, fb);
    const double ba = descriptor_distance(fb, fa);
    const double ac = descriptor_distance(fa, fc);
    const double cb = descriptor_distance(fc, fb);
    EXPECT_DOUBLE_EQ(ab, ba);
    EXPECT_DOUBLE_EQ(descriptor_distance(fa, fa), 0.0);
    EXPECT_LE(ab, ac + cb + 1e-9);

    const Descriptor ba_ = binary_desc(bits(rng), 64);
    const Descriptor bb_ = binary_desc(bits(rng), 64);
    const Descriptor bc_ = binary_desc(bits(rng), 64);
    EXPECT_DOUBLE_EQ(descriptor_distance(ba_, bb_),
                     descriptor_distance(bb_, ba_));
    EXPECT_DOUBLE_EQ(descriptor_distance(ba_, ba_), 0.0);
    EXPECT_LE(descriptor_distance(ba_, bb_),
              descriptor_distance(ba_, bc_) + descriptor_distance(bc_, bb_));
  }
}

TEST(MatchDescriptors, IdenticalSetsMatchIdentically) {
  const FeatureSet set = float_set({{0, 0}, {4, 0}, {0, 4}, {4, 4}});
  const auto matches = match_descriptors(set, set, {1.0, 2.0}, false);
  ASSERT_EQ(matches.size(), 4u);
  for (const auto& m : matches) {
    EXPECT_EQ(m.query_index, m.train_index);
    EXPECT_DOUBLE_EQ(m.distance, 0.0);
  }
}

TEST(MatchDescriptors, AllBeyondThresholdGivesEmpty) {
  const FeatureSet a = float_set({{0, 0}, {100, 0}});
  const FeatureSet b = float_set({{0, 50}, {100, 50}});
  EXPECT_TRUE(match_descriptors(a, b, {1.0, 2.0}, false).empty());
}

TEST(MatchDescriptors, NoisyCopyRecoversIdentity) {
  // 20 points with spacing > 2*th_high and noise < th_low / 2.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> noise(-0.2, 0.2);
  std::vector<std::vector<float>> clean, noisy;
  for (int i = 0; i < 20; ++i) {
    std::vector<float> d(8, 0.0f);
    d[i % 8] = static_cast<float>(10.0 * (1 + i / 8));
    clean.push_back(d);
    std::vector<float> n = d;
    for (auto& v : n) v += static_cast<float>(noise(rng));
    noisy.push_back(n);
  }
  const FeatureSet query = float_set(clean);
  const FeatureSet train = float_set(noisy);
  const MatchThresholds th{1.0, 2.0};
  const auto matches = match_descriptors(query, train, th, true);
  ASSERT_EQ(matches.size(), 20u);

  // Brute-force mutual-NN oracle.
  for (const auto& m : matches) {
    EXPECT_EQ(m.query_index, m.train_index);
    double best = 1e30;
    int best_j = -1;
    for (int j = 0; j < train.size(); ++j) {
      const double d =
          query.descriptors.distance(m.query_index, train.descriptors, j);
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    EXPECT_EQ(best_j, m.train_index);
    EXPECT_DOUBLE_EQ(best, m.distance);
  }
}

TEST(MatchDescriptors, SwapSymmetry) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0.0, 3.0);
  std::vector<std::vector<float>> da, db;
  for (int i = 0; i < 15; ++i) {
    std::vector<float> a(4), b(4);
    for (int k = 0; k < 4; ++k) {
      a[k] = static_cast<float>(gauss(rng));
      b[k] = static_cast<float>(gauss(rng));
    }
    da.push_back(a);
    db.push_back(b);
  }
  const FeatureSet a = float_set(da);
  const FeatureSet b = float_set(db);
  const MatchThresholds th{2.0, 4.0};
  const auto fwd = match_descriptors(a, b, th, false);
  const auto bwd = match_descriptors(b, a, th, false);
  ASSERT_EQ(fwd.size(), bwd.size());
  for (const auto& m : fwd) {
    const bool found =
        std::any_of(bwd.begin(), bwd.end(), [&](const FeatureMatch& r) {
          return r.query_index == m.train_index &&
                 r.train_index == m.query_index &&
                 r.distance == m.distance;
        });
    EXPECT_TRUE(found);
  }
}

TEST(AdaptThresholds, SaturatesAtBreakpoints) {
  AdaptiveConfig cfg;
  cfg.th_min = 1.0;
  cfg.th_max = 4.0;
  cfg.ratio_floor = 0.2;
  cfg.ratio_ceil = 0.8;
  // margin 0.9 >= ceil: safe regime, tightest thresholds.
  EXPECT_DOUBLE_EQ(adapt_thresholds(100, 10, cfg).th_low, 1.0);
  // margin 0.1 <= floor: losing track, loosest thresholds.
  EXPECT_DOUBLE_EQ(adapt_thresholds(100, 90, cfg).th_low, 4.0);
  // Zero map points: loosest.
  EXPECT_DOUBLE_EQ(adapt_thresholds(0, 0, cfg).th_low, 4.0);
}

TEST(AdaptThresholds, MidpointOfRamp) {
  AdaptiveConfig cfg;
  cfg.th_min = 1.0;
  cfg.th_max = 4.0;
  cfg.ratio_floor = 0.2;
  cfg.ratio_ceil = 0.8;
  // margin 0.5 is the ramp midpoint.
  const auto th = adapt_thresholds(100, 50, cfg);
  EXPECT_DOUBLE_EQ(th.th_low, 2.5);
  EXPECT_DOUBLE_EQ(th.th_high, std::min(1.5 * 2.5, cfg.th_max));
}

TEST(AdaptThresholds, MonotoneAndBounded) {
  AdaptiveConfig cfg;
  cfg.th_min = 0.5;
  cfg.th_max = 3.0;
  cfg.ratio_floor = 0.1;
  cfg.ratio_ceil = 0.95;
  double prev_low = cfg.th_max + 1.0;
  for (int k = 0; k <= 100; ++k) {
    const auto th = adapt_thresholds(100, 100 - k, cfg);  // margin = k/100
    EXPECT_LE(th.th_low, prev_low);
    EXPECT_GE(th.th_low, cfg.th_min);
    EXPECT_LE(th.th_high, cfg.th_max);
    EXPECT_LE(th.th_low, th.th_high);
    prev_low = th.th_low;
  }
}

TEST(AdaptThresholds, ValidatesConfig) {
  AdaptiveConfig bad;
  bad.th_min = 2.0;
  bad.th_max = 1.0;
  EXPECT_THROW(adapt_thresholds(10, 0, bad), std::invalid_argument);
}

namespace {

FeatureSet random_feature_set(std::mt19937_64& rng, int count,
                              DescriptorVariant variant, int len) {
  std::uniform_real_distribution<double> coord(0.0, 640.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::uint64_t> bits;
  FeatureSet set;
  set.descriptors = variant == DescriptorVariant::kFloat
                        ? DescriptorArray::make_float(len)
                        : DescriptorArray::make_binary(len);
  for (int i = 0; i < count; ++i) {
    Keypoint kp;
    kp.x = coord(rng);
    kp.y = coord(rng);
    kp.response = std::abs(gauss(rng));
    kp.orientation = gauss(rng);
    kp.octave = i % 8;
    set.keypoints.push_back(kp);
    if (variant == DescriptorVariant::kFloat) {
      std::vector<float> d(len);
      for (auto& v : d) v = static_cast<float>(gauss(rng));
      set.descriptors.push_float(d.data());
    } else {
      std::vector<std::uint64_t> w((len + 63) / 64);
      for (auto& v : w) v = bits(rng);
      const int tail = len % 64;
      if (tail) w.back() &= (std::uint64_t{1} << tail) - 1;
      set.descriptors.push_binary(w.data());
    }
  }
  return set;
}

}  // namespace

TEST(FeatureFile, TwoRecordParse) {
  const std::string path = ::testing::TempDir() + "/two.feat";
  {
    std::ofstream out(path);
    out << "FEAT v1 2 float 3\n";
    out << "10.5 20.25 0.75 1.5 2 1 2.5 -3\n";
    out << "1 2 3 4 5 0.25 0 9\n";
  }
  const FeatureSet set = read_feature_file(path);
  ASSERT_EQ(set.size(), 2);
  EXPECT_DOUBLE_EQ(set.keypoints[0].x, 10.5);
  EXPECT_DOUBLE_EQ(set.keypoints[0].y, 20.25);
  EXPECT_DOUBLE_EQ(set.keypoints[0].response, 0.75);
  EXPECT_DOUBLE_EQ(set.keypoints[0].orientation, 1.5);
  EXPECT_EQ(set.keypoints[0].octave, 2);
  EXPECT_FLOAT_EQ(set.descriptors.float_row(0)[2], -3.0f);
  EXPECT_EQ(set.keypoints[1].octave, 5);
}

TEST(FeatureFile, EmptyFeatureSetIsValid) {
  const std::string path = ::testing::TempDir() + "/empty.feat";
  {
    std::ofstream out(path);
    out << "FEAT v1 0 float 4\n";
  }
  const FeatureSet set = read_feature_file(path);
  EXPECT_EQ(set.size(), 0);
  EXPECT_EQ(set.descriptors.length(), 4);
}

TEST(FeatureFile, RoundTripBitIdentical) {
  std::mt19937_64 rng(13);
  for (auto variant : {DescriptorVariant::kFloat, DescriptorVariant::kBinary}) {
    const int len = variant == DescriptorVariant::kFloat ? 16 : 256;
    const FeatureSet set = random_feature_set(rng, 1000, variant, len);
    const std::string path = ::testing::TempDir() + "/roundtrip.feat";
    write_feature_file(set, path);
    const FeatureSet back = read_feature_file(path);
    ASSERT_EQ(back.size(), set.size());
    for (int i = 0; i < set.size(); ++i) {
      EXPECT_EQ(back.keypoints[i].x, set.keypoints[i].x);
      EXPECT_EQ(back.keypoints[i].y, set.keypoints[i].y);
      EXPECT_EQ(back.keypoints[i].response, set.keypoints[i].response);
      EXPECT_EQ(back.keypoints[i].orientation, set.keypoints[i].orientation);
      EXPECT_EQ(back.keypoints[i].octave, set.keypoints[i].octave);
      if (variant == DescriptorVariant::kFloat) {
        for (int k = 0; k < len; ++k) {
          EXPECT_EQ(back.descriptors.float_row(i)[k],
                    set.descriptors.float_row(i)[k]);
        }
      } else {
        for (int k = 0; k < (len + 63) / 64; ++k) {
          EXPECT_EQ(back.descriptors.word_row(i)[k],
                    set.descriptors.word_row(i)[k]);
        }
      }
    }
  }
}

TEST(FeatureFile, MalformedFilesCarryDiagnostics) {
  const std::string dir = ::testing::TempDir();
  const std::string bad_header = dir + "/bad_header.feat";
  {
    std::ofstream out(bad_header);
    out << "FEET v1 1 float 2\n0 0 0 0 0 1 2\n";
  }
  EXPECT_THROW(read_feature_file(bad_header), MalformedFile);

  const std::string short_record = dir + "/short.feat";
  {
    std::ofstream out(short_record);
    out << "FEAT v1 1 float 4\n0 0 0 0 0 1 2\n";
  }
  try {
    read_feature_file(short_record);
    FAIL() << "expected MalformedFile";
  } catch (const MalformedFile& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos)
        << "diagnostic should carry the line number: " << e.what();
  }
}

TEST(FileProvider, MissingFrameThrows) {
  const std::string dir = ::testing::TempDir() + "/featdir";
  std::filesystem::create_directories(dir);
  write_feature_file(FeatureSet{{}, DescriptorArray::make_float(4)},
                     dir + "/7.feat");
  const auto provider = provider_from_files(dir);
  EXPECT_NO_THROW(provider->extract({7, nullptr}));
  EXPECT_THROW(provider->extract({8, nullptr}), MissingFrame);
}

namespace {

GrayImage checkerboard(int width, int height, int square) {
  GrayImage img(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      img.at(x, y) = ((x / square + y / square) % 2 == 0) ? 0.9 : 0.1;
    }
  }
  return img;
}

}  // namespace

TEST(NativeProvider, UniformImageHasNoKeypoints) {
  const GrayImage img(120, 100, 0.5);
  const auto provider = provider_native(NativeFeatureConfig{});
  const FeatureSet set = provider->extract({0, &img});
  EXPECT_EQ(set.size(), 0);
}

TEST(NativeProvider, CheckerboardCornersInsideBorders) {
  const GrayImage img = checkerboard(160, 128, 16);
  const auto provider = provider_native(NativeFeatureConfig{});
  const FeatureSet set = provider->extract({0, &img});
  ASSERT_GT(set.size(), 0);
  for (const Keypoint& kp : set.keypoints) {
    EXPECT_GE(kp.x, 0.0);
    EXPECT_LT(kp.x, 160.0);
    EXPECT_GE(kp.y, 0.0);
    EXPECT_LT(kp.y, 128.0);
  }
  EXPECT_EQ(set.descriptors.variant(), DescriptorVariant::kBinary);
  EXPECT_EQ(set.descriptors.length(), 256);
}

TEST(NativeProvider, Deterministic) {
  const GrayImage img = checkerboard(160, 128, 16);
  const auto provider = provider_native(NativeFeatureConfig{});
  const FeatureSet a = provider->extract({0, &img});
  const FeatureSet b = provider->extract({0, &img});
  ASSERT_EQ(a.size(), b.size());
  for (int i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.keypoints[i].x, b.keypoints[i].x);
    EXPECT_EQ(a.keypoints[i].y, b.keypoints[i].y);
    for (int w = 0; w < 4; ++w) {
      EXPECT_EQ(a.descriptors.word_row(i)[w], b.descriptors.word_row(i)[w]);
    }
  }
}

TEST(NativeProvider, TooSmallImageThrows) {
  const GrayImage img(16, 16, 0.5);
  const auto provider = provider_native(NativeFeatureConfig{});
  EXPECT_THROW(provider->extract({0, &img}), ImageTooSmall);
}
