#include "vslam/local_mapping.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "vslam/errors.hpp"

namespace vslam {

LocalMapper::LocalMapper(Map& map, const CameraIntrinsics& cam,
                         const MappingConfig& cfg)
    : map_(map), cam_(cam), cfg_(cfg) {}

namespace {

// Fundamental matrix between two calibrated views from their poses.
Eigen::Matrix3d fundamental_between(const PoseSE3& pose_a,
                                    const PoseSE3& pose_b,
                                    const CameraIntrinsics& cam) {
  const PoseSE3 rel = pose_b * pose_a.inverse();  // camera a -> camera b
  const Eigen::Vector3d t = rel.translation();
  Eigen::Matrix3d t_skew;
  t_skew << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
  const Eigen::Matrix3d e = t_skew * rel.rotation();
  const Eigen::Matrix3d k_inv = cam.k_matrix().inverse();
  return k_inv.transpose() * e * k_inv;
}

double sampson_sq(const Eigen::Matrix3d& f, const Eigen::Vector2d& a,
                  const Eigen::Vector2d& b) {
  const Eigen::Vector3d x1(a.x(), a.y(), 1.0);
  const Eigen::Vector3d x2(b.x(), b.y(), 1.0);
  const Eigen::Vector3d fx1 = f * x1;
  const Eigen::Vector3d ftx2 = f.transpose() * x2;
  const double num = x2.dot(fx1);
  const double den = fx1.head<2>().squaredNorm() + ftx2.head<2>().squaredNorm();
  if (den < 1e-30) return 1e30;
  return num * num / den;
}

}  // namespace

std::vector<MapPointId> LocalMapper::triangulate_new_points(
    KeyFrameId kf_id, const std::vector<KeyFrameId>& neighbors,
    const MatchThresholds& th) {
  std::vector<MapPointId> created;
  if (!map_.has_keyframe(kf_id)) return created;

  for (const KeyFrameId n_id : neighbors) {
    if (n_id == kf_id || !map_.has_keyframe(n_id)) continue;
    const KeyFrame& kf = map_.keyframe(kf_id);
    const KeyFrame& nb = map_.keyframe(n_id);
    if ((kf.pose_cw.center() - nb.pose_cw.center()).norm() < 1e-9) continue;

    // Unassociated keypoints on both sides.
    std::vector<int> kf_free, nb_free;
    for (int i = 0; i < kf.features.size(); ++i) {
      if (kf.map_point_links[i] == kNoPoint) kf_free.push_back(i);
    }
    for (int i = 0; i < nb.features.size(); ++i) {
      if (nb.map_point_links[i] == kNoPoint) nb_free.push_back(i);
    }
    if (kf_free.empty() || nb_free.empty()) continue;

    FeatureSet kf_sub, nb_sub;
    kf_sub.descriptors =
        kf.features.descriptors.variant() == DescriptorVariant::kFloat
            ? DescriptorArray::make_float(kf.features.descriptors.length())
            : DescriptorArray::make_binary(kf.features.descriptors.length());
    nb_sub.descriptors =
        kf_sub.descriptors.variant() == DescriptorVariant::kFloat
            ? DescriptorArray::make_float(kf.features.descriptors.length())
            : DescriptorArray::make_binary(kf.features.descriptors.length());
    for (int i : kf_free) {
      kf_sub.keypoints.push_back(kf.features.keypoints[i]);
      if (kf_sub.descriptors.variant() == DescriptorVariant::kFloat) {
        kf_sub.descriptors.push_float(kf.features.descriptors.float_row(i));
      } else {
        kf_sub.descriptors.push_binary(kf.features.descriptors.word_row(i));
      }
    }
    for (int i : nb_free) {
      nb_sub.keypoints.push_back(nb.features.keypoints[i]);
      if (nb_sub.descriptors.variant() == DescriptorVariant::kFloat) {
        nb_sub.descriptors.push_float(nb.features.descriptors.float_row(i));
      } else {
        nb_sub.descriptors.push_binary(nb.features.descriptors.word_row(i));
      }
    }

    const auto matches = match_descriptors(kf_sub, nb_sub, th, true);
    if (matches.empty()) continue;
    const Eigen::Matrix3d f =
        fundamental_between(kf.pose_cw, nb.pose_cw, cam_);
    const double gate_sq = cfg_.epipolar_gate_px * cfg_.epipolar_gate_px;
    const double reproj_sq = cfg_.reproj_max_px * cfg_.reproj_max_px;

    for (const FeatureMatch& m : matches) {
      const int ki = kf_free[m.query_index];
      const int ni = nb_free[m.train_index];
      // Earlier neighbors may have claimed these keypoints.
      if (map_.keyframe(kf_id).map_point_links[ki] != kNoPoint) continue;
      if (map_.keyframe(n_id).map_point_links[ni] != kNoPoint) continue;
      const Keypoint& ka = kf.features.keypoints[ki];
      const Keypoint& kb = nb.features.keypoints[ni];
      const Eigen::Vector2d pa(ka.x, ka.y);
      const Eigen::Vector2d pb(kb.x, kb.y);
      if (sampson_sq(f, pa, pb) > gate_sq) continue;
      const auto point = triangulate(pa, pb, kf.pose_cw, nb.pose_cw, cam_);
      if (!point) continue;
      const auto proj_a = project(*point, kf.pose_cw, cam_);
      const auto proj_b = project(*point, nb.pose_cw, cam_);
      if (!proj_a || !proj_b) continue;
      if ((*proj_a - pa).squaredNorm() > reproj_sq) continue;
      if ((*proj_b - pb).squaredNorm() > reproj_sq) continue;
      created.push_back(
          map_.add_map_point(*point, {{kf_id, ki}, {n_id, ni}}));
    }
  }
  return created;
}

int LocalMapper::fuse_duplicates(KeyFrameId kf_id,
                                 const std::vector<KeyFrameId>& neighbors,
                                 const MatchThresholds& th) {
  if (!map_.has_keyframe(kf_id)) return 0;
  int fused = 0;
  const double radius_sq = cfg_.fuse_radius_px * cfg_.fuse_radius_px;

  std::set<MapPointId> neighbor_points;
  for (const KeyFrameId n_id : neighbors) {
    if (n_id == kf_id || !map_.has_keyframe(n_id)) continue;
    for (MapPointId pid : map_.keyframe(n_id).map_point_links) {
      if (pid != kNoPoint) neighbor_points.insert(pid);
    }
  }

  for (const MapPointId pid : neighbor_points) {
    if (!map_.has_point(pid)) continue;  // merged meanwhile
    const KeyFrame& kf = map_.keyframe(kf_id);
    const MapPoint& p = map_.point(pid);
    if (p.observations.count(kf_id)) continue;
    const auto px = project(p.position, kf.pose_cw, cam_);
    if (!px || !cam_.contains(*px)) continue;

    MapPointId best_target = kNoPoint;
    double best_dist = th.th_low;
    for (int k = 0; k < kf.features.size(); ++k) {
      const MapPointId target = kf.map_point_links[k];
      if (target == kNoPoint || target == pid) continue;
      const Keypoint& kp = kf.features.keypoints[k];
      const double dx = kp.x - px->x();
      const double dy = kp.y - px->y();
      if (dx * dx + dy * dy > radius_sq) continue;
      const double d =
          descriptor_distance(p.representative, map_.point(target).representative);
      if (d < best_dist) {
        best_dist = d;
        best_target = target;
      }
    }
    if (best_target == kNoPoint) continue;
    // Keep the point with more observations (older id on ties).
    const auto& a = map_.point(best_target);
    const auto& b = map_.point(pid);
    MapPointId keep = best_target, absorb = pid;
    if (b.observations.size() > a.observations.size() ||
        (b.observations.size() == a.observations.size() && pid < best_target)) {
      keep = pid;
      absorb = best_target;
    }
    if (map_.merge_points(keep, absorb)) ++fused;
  }
  return fused;
}

SolveReport LocalMapper::local_bundle_adjustment(KeyFrameId kf_id) {
  const Neighborhood hood = map_.local_neighborhood(kf_id);

  std::map<KeyFrameId, int> pose_index;
  ReprojectionProblem pb;
  pb.camera = cam_;
  auto pose_slot = [&](KeyFrameId id, bool fixed) {
    auto it = pose_index.find(id);
    if (it != pose_index.end()) return it->second;
    const int idx = static_cast<int>(pb.poses.size());
    pose_index.emplace(id, idx);
    pb.poses.push_back(map_.keyframe(id).pose_cw);
    pb.pose_fixed.push_back(fixed);
    return idx;
  };
  const std::set<KeyFrameId> local(hood.keyframes.begin(),
                                   hood.keyframes.end());
  // The two oldest keyframes pin the global gauge and the monocular scale.
  std::vector<KeyFrameId> all_ids = map_.keyframe_ids();
  std::set<KeyFrameId> anchors;
  for (std::size_t i = 0; i < all_ids.size() && i < 2; ++i) {
    anchors.insert(all_ids[i]);
  }
  for (KeyFrameId id : hood.keyframes) pose_slot(id, anchors.count(id) > 0);

  std::map<MapPointId, int> point_index;
  for (MapPointId pid : hood.points) {
    const MapPoint& p = map_.point(pid);
    const int li = static_cast<int>(pb.points.size());
    point_index.emplace(pid, li);
    pb.points.push_back(p.position);
    pb.point_fixed.push_back(false);
    for (const auto& [obs_kf, kp_idx] : p.observations) {
      // Observers outside the neighborhood participate as fixed poses.
      const int pi = pose_slot(obs_kf, local.count(obs_kf) == 0 ||
                                           anchors.count(obs_kf) > 0);
      const Keypoint& kp = map_.keyframe(obs_kf).features.keypoints[kp_idx];
      pb.observations.push_back({pi, li, {kp.x, kp.y}});
    }
  }
  // Gauge fallback for a fully free neighborhood.
  if (std::none_of(pb.pose_fixed.begin(), pb.pose_fixed.end(),
                   [](bool b) { return b; })) {
    pb.pose_fixed.front() = true;
  }

  const SolveReport report = solve_lm(pb, cfg_.lm);
  for (const auto& [id, idx] : pose_index) {
    if (!pb.pose_fixed[idx]) map_.set_keyframe_pose(id, pb.poses[idx]);
  }
  for (const auto& [pid, idx] : point_index) {
    map_.set_point_position(pid, pb.points[idx]);
  }
  return report;
}

MappingReport LocalMapper::process_keyframe(KeyFrameId kf,
                                            const MatchThresholds& th) {
  MappingReport report;
  std::vector<KeyFrameId> neighbors;
  for (KeyFrameId id : map_.local_neighborhood(kf).keyframes) {
    if (id != kf) neighbors.push_back(id);
  }
  report.new_points =
      static_cast<int>(triangulate_new_points(kf, neighbors, th).size());
  report.fused_points = fuse_duplicates(kf, neighbors, th);
  const SolveReport ba = local_bundle_adjustment(kf);
  report.ba_initial_cost = ba.initial_cost;
  report.ba_final_cost = ba.final_cost;
  report.culled = map_.cull_keyframes();
  return report;
}

}  // namespace vslam
