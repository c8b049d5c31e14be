#include "vslam/map.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "vslam/errors.hpp"

using namespace vslam;

namespace {

Frame make_frame(FrameId id, int keypoints, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Frame f;
  f.id = id;
  f.timestamp = static_cast<double>(id) * 0.1;
  f.features.descriptors = DescriptorArray::make_float(8);
  for (int i = 0; i < keypoints; ++i) {
    Keypoint kp;
    kp.x = 10.0 * i;
    kp.y = 5.0;
    f.features.keypoints.push_back(kp);
    std::vector<float> d(8);
    for (auto& v : d) v = static_cast<float>(gauss(rng));
    f.features.descriptors.push_float(d.data());
  }
  f.pose_cw = PoseSE3::identity();
  f.reset_links();
  return f;
}

std::string snapshot_string(const Map& map) {
  const std::string path = ::testing::TempDir() + "/snap.txt";
  map.write_snapshot(path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(MapStore, FirstKeyFrameIsIsolated) {
  std::mt19937_64 rng(1);
  Map map;
  const Frame f = make_frame(0, 30, rng);
  const KeyFrameId kf = map.insert_keyframe(f);
  EXPECT_TRUE(map.neighbors(kf, 1).empty());
  EXPECT_TRUE(map.audit().empty());
}

TEST(MapStore, InsertWithoutPoseThrows) {
  std::mt19937_64 rng(2);
  Map map;
  Frame f = make_frame(0, 5, rng);
  f.pose_cw.reset();
  EXPECT_THROW(map.insert_keyframe(f), NoPose);
}

TEST(MapStore, SharedPointsGiveSymmetricEdgeWeight) {
  std::mt19937_64 rng(3);
  Map map;
  const KeyFrameId a = map.insert_keyframe(make_frame(0, 50, rng));
  const KeyFrameId b = map.insert_keyframe(make_frame(1, 50, rng));
  for (int i = 0; i < 40; ++i) {
    map.add_map_point(Eigen::Vector3d(i, 0, 5), {{a, i}, {b, i}});
  }
  EXPECT_EQ(map.covisibility_weight(a, b), 40);
  EXPECT_EQ(map.covisibility_weight(b, a), 40);

  // Brute-force recount.
  int shared = 0;
  for (MapPointId pid : map.point_ids()) {
    const MapPoint& p = map.point(pid);
    if (p.observations.count(a) && p.observations.count(b)) ++shared;
  }
  EXPECT_EQ(shared, 40);
  EXPECT_TRUE(map.audit().empty());
}

TEST(MapStore, BelowCovisMinIsIsolated) {
  std::mt19937_64 rng(4);
  MapConfig cfg;
  cfg.covis_min = 15;
  Map map(cfg);
  const KeyFrameId a = map.insert_keyframe(make_frame(0, 30, rng));
  const KeyFrameId b = map.insert_keyframe(make_frame(1, 30, rng));
  for (int i = 0; i < 5; ++i) {
    map.add_map_point(Eigen::Vector3d(i, 0, 5), {{a, i}, {b, i}});
  }
  EXPECT_EQ(map.covisibility_weight(a, b), 5);
  EXPECT_TRUE(map.neighbors(a, cfg.covis_min).empty());
  const Neighborhood hood = map.local_neighborhood(a);
  EXPECT_EQ(hood.keyframes, std::vector<KeyFrameId>{a});
  EXPECT_EQ(hood.points.size(), 5u);
}

TEST(MapStore, AddRemovePointRestoresByteEquivalentState) {
  std::mt19937_64 rng(5);
  Map map;
  const KeyFrameId a = map.insert_keyframe(make_frame(0, 20, rng));
  const KeyFrameId b = map.insert_keyframe(make_frame(1, 20, rng));
  map.add_map_point(Eigen::Vector3d(0, 0, 4), {{a, 0}, {b, 0}});
  const std::string before = snapshot_string(map);
  const MapPointId extra =
      map.add_map_point(Eigen::Vector3d(1, 0, 4), {{a, 1}, {b, 1}});
  map.remove_map_point(extra);
  EXPECT_EQ(snapshot_string(map), before);
  EXPECT_TRUE(map.audit().empty());
}

TEST(MapStore, TwoObservationAddIncrementsWeightByOne) {
  std::mt19937_64 rng(6);
  Map map;
  const KeyFrameId a = map.insert_keyframe(make_frame(0, 20, rng));
  const KeyFrameId b = map.insert_keyframe(make_frame(1, 20, rng));
  map.add_map_point(Eigen::Vector3d(0, 0, 4), {{a, 0}, {b, 0}});
  const int w0 = map.covisibility_weight(a, b);
  map.add_map_point(Eigen::Vector3d(1, 0, 4), {{a, 1}, {b, 1}});
  EXPECT_EQ(map.covisibility_weight(a, b), w0 + 1);
}

TEST(MapStore, DanglingKeyFrameRejected) {
  std::mt19937_64 rng(7);
  Map map;
  const KeyFrameId a = map.insert_keyframe(make_frame(0, 20, rng));
  EXPECT_THROW(
      map.add_map_point(Eigen::Vector3d(0, 0, 4), {{a, 0}, {a + 99, 1}}),
      DanglingKeyFrame);
}

TEST(MapStore, LocalNeighborhoodOnChain) {
  std::mt19937_64 rng(8);
  MapConfig cfg;
  cfg.covis_min = 2;
  Map map(cfg);
  const KeyFrameId a = map.insert_keyframe(make_frame(0, 30, rng));
  const KeyFrameId b = map.insert_keyframe(make_frame(1, 30, rng));
  const KeyFrameId c = map.insert_keyframe(make_frame(2, 30, rng));
  // A-B share 3 points, B-C share 3 points, A-C share none.
  for (int i = 0; i < 3; ++i) {
    map.add_map_point(Eigen::Vector3d(i, 0, 5), {{a, i}, {b, i}});
    map.add_map_point(Eigen::Vector3d(i, 1, 5), {{b, 10 + i}, {c, i}});
  }
  const Neighborhood at_b = map.local_neighborhood(b);
  EXPECT_EQ(at_b.keyframes, (std::vector<KeyFrameId>{a, b, c}));
  EXPECT_EQ(at_b.points.size(), 6u);

  const Neighborhood at_a = map.local_neighborhood(a);
  EXPECT_EQ(at_a.keyframes, (std::vector<KeyFrameId>{a, b}));
  // A's own points plus everything B sees.
  EXPECT_EQ(at_a.points.size(), 6u);

  EXPECT_THROW(map.local_neighborhood(999), UnknownKeyFrame);
}

TEST(MapStore, CullKeepsUniqueViews) {
  std::mt19937_64 rng(9);
  Map map;
  std::vector<KeyFrameId> kfs;
  for (int k = 0; k < 4; ++k) {
    kfs.push_back(map.insert_keyframe(make_frame(k, 30, rng)));
  }
  // Every point seen by exactly two keyframes: nothing redundant.
  for (int k = 0; k + 1 < 4; ++k) {
    for (int i = 0; i < 5; ++i) {
      map.add_map_point(Eigen::Vector3d(i, k, 5),
                        {{kfs[k], 5 * (k > 0) + i}, {kfs[k + 1], i}});
    }
  }
  EXPECT_TRUE(map.cull_keyframes().empty());
  EXPECT_TRUE(map.audit().empty());
}

TEST(MapStore, CullRemovesDuplicateKeyFrame) {
  std::mt19937_64 rng(10);
  MapConfig cfg;
  cfg.redundancy_fraction = 0.9;
  cfg.redundancy_observers = 3;
  Map map(cfg);
  std::vector<KeyFrameId> kfs;
  for (int k = 0; k < 4; ++k) {
    kfs.push_back(map.insert_keyframe(make_frame(k, 30, rng)));
  }
  // Every point observed by all four keyframes: the two unprotected ones are
  // redundant; removing the first drops the other back under the policy.
  for (int i = 0; i < 10; ++i) {
    map.add_map_point(
        Eigen::Vector3d(i, 0, 5),
        {{kfs[0], i}, {kfs[1], i}, {kfs[2], i}, {kfs[3], i}});
  }
  const auto removed = map.cull_keyframes();
  ASSERT_EQ(removed.size(), 1u);
  EXPECT_EQ(removed[0], kfs[2]);
  EXPECT_TRUE(map.audit().empty());
  for (MapPointId pid : map.point_ids()) {
    EXPECT_GE(map.point(pid).observations.size(), 1u);
  }
}

TEST(MapStore, AuditDetectsCorruptedBacklink) {
  std::mt19937_64 rng(11);
  Map map;
  const KeyFrameId a = map.insert_keyframe(make_frame(0, 20, rng));
  const KeyFrameId b = map.insert_keyframe(make_frame(1, 20, rng));
  const MapPointId p =
      map.add_map_point(Eigen::Vector3d(0, 0, 4), {{a, 0}, {b, 0}});
  EXPECT_TRUE(map.audit().empty());
  map.debug_break_backlink(p, b);
  const auto violations = map.audit();
  EXPECT_FALSE(violations.empty());
}

TEST(MapStore, MergePointsUnionsObservations) {
  std::mt19937_64 rng(12);
  Map map;
  const KeyFrameId a = map.insert_keyframe(make_frame(0, 20, rng));
  const KeyFrameId b = map.insert_keyframe(make_frame(1, 20, rng));
  const KeyFrameId c = map.insert_keyframe(make_frame(2, 20, rng));
  const MapPointId p =
      map.add_map_point(Eigen::Vector3d(0, 0, 4), {{a, 0}, {b, 0}});
  const MapPointId q =
      map.add_map_point(Eigen::Vector3d(0, 0, 4.01), {{b, 1}, {c, 0}});
  ASSERT_TRUE(map.merge_points(p, q));
  EXPECT_FALSE(map.has_point(q));
  const MapPoint& kept = map.point(p);
  EXPECT_EQ(kept.observations.size(), 3u);  // a, b, c
  EXPECT_TRUE(map.audit().empty());
}

TEST(MapStore, RandomizedWorkloadKeepsAuditClean) {
  std::mt19937_64 rng(13);
  Map map;
  std::uniform_int_distribution<int> op_dist(0, 9);
  FrameId next_frame = 0;

  auto free_slot = [&](KeyFrameId kf) -> int {
    const auto& links = map.keyframe(kf).map_point_links;
    for (std::size_t i = 0; i < links.size(); ++i) {
      if (links[i] == kNoPoint) return static_cast<int>(i);
    }
    return -1;
  };

  for (int step = 0; step < 200; ++step) {
    const auto kf_ids = map.keyframe_ids();
    const auto pt_ids = map.point_ids();
    const int op = op_dist(rng);
    if (op <= 2 || kf_ids.size() < 2) {
      Frame f = make_frame(next_frame++, 40, rng);
      // Link some existing points into the new frame.
      std::size_t li = 0;
      for (MapPointId pid : pt_ids) {
        if (li >= 10 || li >= f.map_point_links.size()) break;
        if (rng() % 3 == 0) f.map_point_links[li] = pid;
        ++li;
      }
      map.insert_keyframe(f);
    } else if (op <= 5) {
      std::map<KeyFrameId, int> obs;
      for (KeyFrameId kf : kf_ids) {
        if (rng() % 2 == 0) continue;
        const int slot = free_slot(kf);
        if (slot >= 0) obs[kf] = slot;
        if (obs.size() == 4) break;
      }
      if (!obs.empty()) {
        map.add_map_point(Eigen::Vector3d(rng() % 10, rng() % 10, 5), obs);
      }
    } else if (op == 6 && !pt_ids.empty()) {
      map.remove_map_point(pt_ids[rng() % pt_ids.size()]);
    } else if (op == 7 && pt_ids.size() >= 2) {
      const MapPointId x = pt_ids[rng() % pt_ids.size()];
      const MapPointId y = pt_ids[rng() % pt_ids.size()];
      if (x != y) map.merge_points(x, y);
    } else if (op == 8 && !pt_ids.empty() && !kf_ids.empty()) {
      const MapPointId pid = pt_ids[rng() % pt_ids.size()];
      const auto& obs = map.point(pid).observations;
      if (!obs.empty()) {
        map.remove_observation(pid, obs.begin()->first);
      }
    } else if (map.keyframe_count() >= 3) {
      map.cull_keyframes();
    }
    const auto violations = map.audit();
    ASSERT_TRUE(violations.empty())
        << "step " << step << ": " << violations.front();
  }
}

TEST(MapStore, SnapshotFormat) {
  std::mt19937_64 rng(14);
  Map map;
  const KeyFrameId a = map.insert_keyframe(make_frame(0, 10, rng));
  const KeyFrameId b = map.insert_keyframe(make_frame(1, 10, rng));
  map.add_map_point(Eigen::Vector3d(1, 2, 3), {{a, 0}, {b, 0}});
  const std::string snap = snapshot_string(map);
  EXPECT_EQ(snap.rfind("MAP v1\n", 0), 0u);
  EXPECT_NE(snap.find("KF 0 "), std::string::npos);
  EXPECT_NE(snap.find("MP 0 "), std::string::npos);
}

TEST(MapStore, RepresentativeDescriptorMinimizesMedianDistance) {
  std::mt19937_64 rng(15);
  Map map;
  std::vector<KeyFrameId> kfs;
  for (int k = 0; k < 3; ++k) {
    kfs.push_back(map.insert_keyframe(make_frame(k, 10, rng)));
  }
  const MapPointId pid = map.add_map_point(
      Eigen::Vector3d(0, 0, 5), {{kfs[0], 0}, {kfs[1], 0}, {kfs[2], 0}});
  const MapPoint& p = map.point(pid);

  // Oracle: recompute medians over the three observation descriptors.
  std::vector<Descriptor> descs;
  for (const auto& [kf, idx] : p.observations) {
    descs.push_back(map.keyframe(kf).features.descriptors.row(idx));
  }
  double best_median = 1e300;
  int best = -1;
  for (std::size_t i = 0; i < descs.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < descs.size(); ++j) {
      if (i != j) d.push_back(descriptor_distance(descs[i], descs[j]));
    }
    std::sort(d.begin(), d.end());
    if (d[d.size() / 2] < best_median) {
      best_median = d[d.size() / 2];
      best = static_cast<int>(i);
    }
  }
  EXPECT_EQ(descriptor_distance(p.representative, descs[best]), 0.0);
}
