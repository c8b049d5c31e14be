#include "vslam/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "vslam/errors.hpp"

using namespace vslam;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  const std::string dir = ::testing::TempDir() + "/" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_kitti_fixture(const std::string& dir, bool with_calib = true,
                         bool with_poses = true) {
  fs::create_directories(dir + "/image_0");
  GrayImage img(8, 8, 0.5);
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "/image_0/%06d.pgm", i);
    img.at(i, i) = 1.0;
    write_pgm(img, dir + name);
  }
  if (with_calib) {
    std::ofstream calib(dir + "/calib.txt");
    calib << "P0: 100 0 4 0 0 100 4 0 0 0 1 0\n";
    calib << "P1: 100 0 4 -50 0 100 4 0 0 0 1 0\n";
  }
  if (with_poses) {
    std::ofstream poses(dir + "/poses.txt");
    poses << "1 0 0 0 0 1 0 0 0 0 1 0\n";
    poses << "1 0 0 0.5 0 1 0 0 0 0 1 0\n";
    poses << "1.0000002 0 0 1.0 0 0.9999999 0 0 0 0 1 0\n";
  }
}

void write_euroc_fixture(const std::string& dir, bool collide = false,
                         bool bad_quat = false) {
  fs::create_directories(dir + "/mav0/cam0/data");
  fs::create_directories(dir + "/mav0/state_groundtruth_estimate0");
  {
    std::ofstream yaml(dir + "/mav0/cam0/sensor.yaml");
    yaml << "sensor_type: camera\n";
    yaml << "intrinsics: [458.654, 457.296, 367.215, 248.375]\n";
    yaml << "resolution: [752, 480]\n";
  }
  {
    std::ofstream csv(dir + "/mav0/cam0/data.csv");
    csv << "#timestamp [ns],filename\n";
    csv << "1000000000,f0.png\n";
    csv << (collide ? "1000000000,f1.png\n" : "1100000000,f1.png\n");
    csv << "1200000000,f2.png\n";
  }
  {
    std::ofstream gt(dir + "/mav0/state_groundtruth_estimate0/data.csv");
    gt << "#timestamp,px,py,pz,qw,qx,qy,qz\n";
    gt << "1000000000,0,0,0,1,0,0,0\n";
    gt << (bad_quat ? "1100000000,0.1,0,0,1.2,0,0,0\n"
                    : "1100000000,0.1,0,0,1,0,0,0\n");
    gt << "1200000000,0.2,0,0,1,0,0,0\n";
  }
}

}  // namespace

TEST(OpenKitti, MinimalFixtureRoundTrip) {
  const std::string dir = fresh_dir("kitti_ok");
  write_kitti_fixture(dir);
  const SequenceSource src = open_kitti(dir);
  EXPECT_EQ(src.frames.size(), 3u);
  ASSERT_TRUE(src.ground_truth.has_value());
  EXPECT_EQ(src.ground_truth->size(), 3u);
  EXPECT_DOUBLE_EQ(src.calibration.fx, 100.0);
  EXPECT_EQ(src.calibration.width, 8);
  // Parsed rotations come out orthonormal even from perturbed input rows.
  for (const auto& s : src.ground_truth->samples) {
    const Eigen::Matrix3d r = s.pose_wc.rotation();
    EXPECT_LT((r.transpose() * r - Eigen::Matrix3d::Identity()).norm(), 1e-6);
  }
  const auto img = src.load_image(src.frames[0]);
  ASSERT_TRUE(img.has_value());
  EXPECT_EQ(img->width, 8);
}

TEST(OpenKitti, MissingCalibThrows) {
  const std::string dir = fresh_dir("kitti_nocalib");
  write_kitti_fixture(dir, /*with_calib=*/false);
  EXPECT_THROW(open_kitti(dir), MalformedCalib);
}

TEST(OpenKitti, MissingImagesThrows) {
  const std::string dir = fresh_dir("kitti_noimg");
  fs::create_directories(dir);
  EXPECT_THROW(open_kitti(dir), MissingImages);
}

TEST(OpenEuroc, MinimalFixture) {
  const std::string dir = fresh_dir("euroc_ok");
  write_euroc_fixture(dir);
  const SequenceSource src = open_euroc(dir);
  EXPECT_EQ(src.frames.size(), 3u);
  EXPECT_DOUBLE_EQ(src.frames[0].timestamp, 1.0);
  for (std::size_t i = 1; i < src.frames.size(); ++i) {
    EXPECT_GT(src.frames[i].timestamp, src.frames[i - 1].timestamp);
  }
  ASSERT_TRUE(src.ground_truth.has_value());
  EXPECT_EQ(src.ground_truth->size(), 3u);
  EXPECT_EQ(src.calibration.width, 752);
}

TEST(OpenEuroc, TimestampCollisionRejected) {
  const std::string dir = fresh_dir("euroc_collide");
  write_euroc_fixture(dir, /*collide=*/true);
  EXPECT_THROW(open_euroc(dir), MalformedFile);
}

TEST(OpenEuroc, BadQuaternionRejected) {
  const std::string dir = fresh_dir("euroc_badq");
  write_euroc_fixture(dir, false, /*bad_quat=*/true);
  EXPECT_THROW(open_euroc(dir), MalformedFile);
}

TEST(GenerateSynthetic, CirclePathCloses) {
  SyntheticSpec spec;
  spec.frame_count = 100;
  spec.revolutions = 1.0;
  const SyntheticDataset ds = generate_synthetic(spec);
  ASSERT_TRUE(ds.source.ground_truth.has_value());
  const auto& gt = ds.source.ground_truth->samples;
  const Eigen::Vector3d first = gt.front().pose_wc.translation();
  const Eigen::Vector3d last = gt.back().pose_wc.translation();
  // One full revolution: endpoints coincide up to path discretization.
  EXPECT_LT((first - last).norm(), 2.0 * M_PI * spec.radius / 99.0 + 1e-9);
}

TEST(GenerateSynthetic, DeterministicUnderSeed) {
  SyntheticSpec spec;
  spec.frame_count = 50;
  spec.landmark_count = 200;
  const SyntheticDataset a = generate_synthetic(spec);
  const SyntheticDataset b = generate_synthetic(spec);
  ASSERT_EQ(a.world.landmarks.size(), b.world.landmarks.size());
  for (const auto& [id, p] : a.world.landmarks) {
    EXPECT_EQ(p, b.world.landmarks.at(id));
  }
  for (std::size_t i = 0; i < a.world.poses_cw.size(); ++i) {
    EXPECT_EQ(a.world.poses_cw[i].translation(),
              b.world.poses_cw[i].translation());
  }
}

TEST(GenerateSynthetic, VisibilityFloorEnforced) {
  SyntheticSpec spec;
  spec.frame_count = 120;
  spec.landmark_count = 500;
  spec.min_visible = 40;
  const SyntheticDataset ds = generate_synthetic(spec);
  const auto provider =
      provider_synthetic(ds.world, ds.source.calibration);
  for (const SequenceFrame& f : ds.source.frames) {
    const FeatureSet set = provider->extract({f.id, nullptr});
    EXPECT_GE(set.size(), spec.min_visible) << "frame " << f.id;
  }
}

TEST(SyntheticProvider, LandmarkBehindCameraAbsent) {
  SyntheticWorld world;
  world.poses_cw.push_back(PoseSE3::identity());
  world.landmarks.emplace(0, Eigen::Vector3d(0, 0, 5));    // ahead
  world.landmarks.emplace(1, Eigen::Vector3d(0, 0, -5));   // behind
  CameraIntrinsics cam;
  cam.fx = cam.fy = 400;
  cam.cx = 320;
  cam.cy = 240;
  cam.width = 640;
  cam.height = 480;
  const auto provider = provider_synthetic(world, cam);
  const FeatureSet set = provider->extract({0, nullptr});
  EXPECT_EQ(set.size(), 1);
}

TEST(SyntheticProvider, MatchingRecoversCommonVisibility) {
  SyntheticSpec spec;
  spec.frame_count = 60;
  spec.landmark_count = 300;
  const SyntheticDataset ds = generate_synthetic(spec);
  const auto provider =
      provider_synthetic(ds.world, ds.source.calibration);
  const FeatureSet a = provider->extract({10, nullptr});
  const FeatureSet b = provider->extract({12, nullptr});

  // Visibility oracle: landmark ids recoverable from the descriptors.
  auto ids_of = [&](const FeatureSet& set) {
    std::set<std::int64_t> ids;
    for (int i = 0; i < set.size(); ++i) {
      const float* row = set.descriptors.float_row(i);
      int slot = 0;
      for (int k = 0; k < set.descriptors.length(); ++k) {
        if (row[k] != 0.0f) slot = k;
      }
      const double tier =
          row[slot] / ds.world.descriptor_amplitude - 1.0;
      ids.insert(slot + kSyntheticDescriptorLength *
                            static_cast<std::int64_t>(std::lround(tier)));
    }
    return ids;
  };
  const auto ids_a = ids_of(a);
  const auto ids_b = ids_of(b);
  std::set<std::int64_t> common;
  std::set_intersection(ids_a.begin(), ids_a.end(), ids_b.begin(), ids_b.end(),
                        std::inserter(common, common.begin()));

  const auto matches = match_descriptors(a, b, {1.0, 2.0}, false);
  EXPECT_EQ(matches.size(), common.size());
  for (const auto& m : matches) {
    EXPECT_DOUBLE_EQ(m.distance, 0.0);
  }
}

TEST(SyntheticProvider, NoiseWithinMarginKeepsAssociation) {
  SyntheticSpec clean_spec;
  clean_spec.frame_count = 40;
  clean_spec.landmark_count = 250;
  SyntheticSpec noisy_spec = clean_spec;
  noisy_spec.descriptor_noise_sigma = 0.1;
  const SyntheticDataset clean = generate_synthetic(clean_spec);
  const SyntheticDataset noisy = generate_synthetic(noisy_spec);
  const auto clean_provider =
      provider_synthetic(clean.world, clean.source.calibration);
  const auto noisy_provider =
      provider_synthetic(noisy.world, noisy.source.calibration);

  const MatchThresholds th{1.0, 2.0};
  for (FrameId f : {5, 20}) {
    const auto ca = clean_provider->extract({f, nullptr});
    const auto cb = clean_provider->extract({f + 1, nullptr});
    const auto na = noisy_provider->extract({f, nullptr});
    const auto nb = noisy_provider->extract({f + 1, nullptr});
    const auto clean_matches = match_descriptors(ca, cb, th, true);
    const auto noisy_matches = match_descriptors(na, nb, th, true);
    ASSERT_EQ(clean_matches.size(), noisy_matches.size());
    for (std::size_t i = 0; i < clean_matches.size(); ++i) {
      EXPECT_EQ(clean_matches[i].query_index, noisy_matches[i].query_index);
      EXPECT_EQ(clean_matches[i].train_index, noisy_matches[i].train_index);
    }
  }
}

TEST(SyntheticProvider, DeterministicWithNoise) {
  SyntheticSpec spec;
  spec.frame_count = 10;
  spec.landmark_count = 100;
  spec.descriptor_noise_sigma = 0.5;
  const SyntheticDataset ds = generate_synthetic(spec);
  const auto provider =
      provider_synthetic(ds.world, ds.source.calibration);
  const FeatureSet a = provider->extract({3, nullptr});
  const FeatureSet b = provider->extract({3, nullptr});
  ASSERT_EQ(a.size(), b.size());
  for (int i = 0; i < a.size(); ++i) {
    for (int k = 0; k < a.descriptors.length(); ++k) {
      EXPECT_EQ(a.descriptors.float_row(i)[k], b.descriptors.float_row(i)[k]);
    }
  }
}

TEST(SyntheticDataset, DiskRoundTrip) {
  SyntheticSpec spec;
  spec.frame_count = 20;
  spec.landmark_count = 120;
  const SyntheticDataset ds = generate_synthetic(spec);
  const std::string dir = fresh_dir("synth_ds");
  write_synthetic_dataset(ds, dir);

  const SequenceSource back = open_synth_dir(dir);
  EXPECT_EQ(back.frames.size(), ds.source.frames.size());
  EXPECT_DOUBLE_EQ(back.calibration.fx, ds.source.calibration.fx);
  ASSERT_TRUE(back.ground_truth.has_value());
  EXPECT_EQ(back.ground_truth->size(), ds.source.ground_truth->size());

  const SyntheticWorld world = load_world_for(back, dir);
  EXPECT_EQ(world.landmarks.size(), ds.world.landmarks.size());
  EXPECT_EQ(world.poses_cw.size(), ds.world.poses_cw.size());

  // Feature files written on disk reproduce the in-memory provider.
  const auto file_provider = provider_from_files(dir + "/features");
  const auto mem_provider =
      provider_synthetic(ds.world, ds.source.calibration);
  const FeatureSet from_file = file_provider->extract({7, nullptr});
  const FeatureSet from_mem = mem_provider->extract({7, nullptr});
  ASSERT_EQ(from_file.size(), from_mem.size());
  for (int i = 0; i < from_file.size(); ++i) {
    EXPECT_EQ(from_file.descriptors.float_row(i)[0],
              from_mem.descriptors.float_row(i)[0]);
  }
}

TEST(ImageIo, AsciiPgmAndRejections) {
  const std::string dir = fresh_dir("image_io");
  {
    std::ofstream out(dir + "/ascii.pgm");
    out << "P2\n# comment\n3 2\n255\n0 128 255\n64 32 16\n";
  }
  const GrayImage img = read_gray_image(dir + "/ascii.pgm");
  ASSERT_EQ(img.width, 3);
  ASSERT_EQ(img.height, 2);
  EXPECT_DOUBLE_EQ(img.at(1, 0), 128.0 / 255.0);
  EXPECT_DOUBLE_EQ(img.at(2, 0), 1.0);

  {
    std::ofstream out(dir + "/deep.pgm");
    out << "P2\n2 1\n65535\n0 65535\n";
  }
  EXPECT_THROW(read_gray_image(dir + "/deep.pgm"), MalformedFile);
  {
    std::ofstream out(dir + "/garbage.bin");
    out << "XX not an image";
  }
  EXPECT_THROW(read_gray_image(dir + "/garbage.bin"), MalformedFile);
  EXPECT_THROW(read_gray_image(dir + "/missing.png"), IoError);
}

TEST(ImageIo, PngRoundTrip) {
  const std::string dir = fresh_dir("png_io");
  GrayImage img(17, 11);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      img.at(x, y) = ((x * 13 + y * 7) % 256) / 255.0;
    }
  }
  write_png(img, dir + "/img.png");
  const GrayImage back = read_gray_image(dir + "/img.png");
  ASSERT_EQ(back.width, img.width);
  ASSERT_EQ(back.height, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    EXPECT_NEAR(back.pixels[i], img.pixels[i], 0.5 / 255.0);
  }
}
