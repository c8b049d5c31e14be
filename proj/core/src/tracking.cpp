#include "vslam/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "vslam/errors.hpp"

namespace vslam {

Tracker::Tracker(Map& map, const CameraIntrinsics& cam,
                 const TrackerConfig& cfg)
    : map_(map), cam_(cam), cfg_(cfg), thresholds_(cfg.thresholds) {
  if (cfg_.adaptive) {
    cfg_.adaptive_cfg.validate();
    // No map yet: the controller's zero-map-point answer (th_max) applies.
    thresholds_ = adapt_thresholds(0, 0, cfg_.adaptive_cfg);
  }
}

PoseSE3 Tracker::predict_pose() const {
  if (mode_ != TrackerMode::kOk) {
    throw WrongMode("predict_pose requires Ok mode");
  }
  return velocity_ * last_pose_;
}

std::optional<InitializationResult> Tracker::initialize(Frame& f1, Frame& f2) {
  last_init_matches_ = 0;
  if (f1.features.size() == 0 || f2.features.size() == 0) return std::nullopt;
  const auto matches =
      match_descriptors(f1.features, f2.features, thresholds_, false);
  last_init_matches_ = static_cast<int>(matches.size());
  if (matches.size() < 8) return std::nullopt;

  std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> pixel_pairs;
  pixel_pairs.reserve(matches.size());
  for (const FeatureMatch& m : matches) {
    const Keypoint& a = f1.features.keypoints[m.query_index];
    const Keypoint& b = f2.features.keypoints[m.train_index];
    pixel_pairs.emplace_back(Eigen::Vector2d(a.x, a.y),
                             Eigen::Vector2d(b.x, b.y));
  }
  const auto two_view = estimate_two_view(pixel_pairs, cam_, cfg_.ransac);
  if (!two_view) return std::nullopt;

  const PoseSE3 pose1 = PoseSE3::identity();
  const PoseSE3 pose2 = two_view->relative_pose;
  struct Seed {
    int kp1, kp2;
    Eigen::Vector3d point;
  };
  std::vector<Seed> seeds;
  std::vector<double> depths;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (!two_view->inlier_mask[i]) continue;
    const auto point = triangulate(pixel_pairs[i].first, pixel_pairs[i].second,
                                   pose1, pose2, cam_);
    if (!point) continue;
    seeds.push_back({matches[i].query_index, matches[i].train_index, *point});
    depths.push_back(point->z());
  }
  if (static_cast<int>(seeds.size()) < cfg_.init_min_points) {
    return std::nullopt;
  }

  // Fix the monocular gauge: median scene depth in the first view becomes 1.
  std::nth_element(depths.begin(), depths.begin() + depths.size() / 2,
                   depths.end());
  const double median_depth = depths[depths.size() / 2];
  if (median_depth <= kDepthEpsilon) return std::nullopt;
  const double inv_depth = 1.0 / median_depth;
  for (Seed& s : seeds) s.point *= inv_depth;
  const PoseSE3 pose2_scaled(pose2.unit_quaternion(),
                             pose2.translation() * inv_depth);

  f1.pose_cw = pose1;
  f2.pose_cw = pose2_scaled;
  f1.reset_links();
  f2.reset_links();
  const KeyFrameId kf1 = map_.insert_keyframe(f1);
  const KeyFrameId kf2 = map_.insert_keyframe(f2);
  for (const Seed& s : seeds) {
    const MapPointId pid =
        map_.add_map_point(s.point, {{kf1, s.kp1}, {kf2, s.kp2}});
    f1.map_point_links[s.kp1] = pid;
    f2.map_point_links[s.kp2] = pid;
  }

  mode_ = TrackerMode::kOk;
  last_pose_ = pose2_scaled;
  // Seed the constant-velocity model with the per-frame share of the
  // initialization motion.
  const double gap = std::max<double>(1.0, static_cast<double>(f2.id - f1.id));
  velocity_ = PoseSE3::exp(pose2_scaled.log() / gap);
  reference_kf_ = kf2;
  frames_since_kf_ = 0;
  last_frame_ = f2;

  InitializationResult out;
  out.first_keyframe = kf1;
  out.second_keyframe = kf2;
  out.triangulated_points = static_cast<int>(seeds.size());
  return out;
}

std::vector<Tracker::WindowMatch> Tracker::match_by_projection(
    const Frame& frame, const std::vector<MapPointId>& points,
    const PoseSE3& pose, double limit, double window_px,
    const std::vector<bool>& taken, int* attempted) const {
  std::vector<WindowMatch> out;
  const double window_sq = window_px * window_px;
  // Best candidate per keypoint; resolved by distance then point id.
  std::map<int, WindowMatch> per_keypoint;
  for (const MapPointId pid : points) {
    if (!map_.has_point(pid)) continue;
    const MapPoint& point = map_.point(pid);
    const auto px = project(point.position, pose, cam_);
    if (!px || !cam_.contains(*px)) continue;
    if (attempted) ++(*attempted);
    map_.note_visible(pid);
    int best_kp = -1;
    double best_dist = limit;
    for (int k = 0; k < frame.features.size(); ++k) {
      if (taken[k]) continue;
      const Keypoint& kp = frame.features.keypoints[k];
      const double dx = kp.x - px->x();
      const double dy = kp.y - px->y();
      if (dx * dx + dy * dy > window_sq) continue;
      const double d = descriptor_distance(frame.features.descriptors.row(k),
                                           point.representative);
      if (d < best_dist || (d == best_dist && best_kp < 0)) {
        best_dist = d;
        best_kp = k;
      }
    }
    if (best_kp < 0) continue;
    auto it = per_keypoint.find(best_kp);
    if (it == per_keypoint.end() || best_dist < it->second.distance) {
      per_keypoint[best_kp] = {pid, best_kp, best_dist};
    }
  }
  out.reserve(per_keypoint.size());
  for (const auto& [kp, match] : per_keypoint) out.push_back(match);
  return out;
}

std::optional<TrackResult> Tracker::track_frame(Frame& frame) {
  if (mode_ != TrackerMode::kOk) {
    throw WrongMode("track_frame requires Ok mode");
  }
  frame.reset_links();
  const PoseSE3 predicted = velocity_ * last_pose_;

  // Stage 1: project the last frame's map points at the predicted pose.
  std::vector<MapPointId> last_points;
  for (MapPointId pid : last_frame_.map_point_links) {
    if (pid != kNoPoint) last_points.push_back(pid);
  }
  std::sort(last_points.begin(), last_points.end());
  last_points.erase(std::unique(last_points.begin(), last_points.end()),
                    last_points.end());

  int attempted = 0;
  std::vector<bool> taken(frame.features.size(), false);
  std::vector<WindowMatch> assoc =
      match_by_projection(frame, last_points, predicted, thresholds_.th_high,
                          cfg_.search_window_px, taken, &attempted);
  if (assoc.size() < 6) {
    // Starved: retry once with a doubled search window.
    attempted = 0;
    assoc = match_by_projection(frame, last_points, predicted,
                                thresholds_.th_high,
                                2.0 * cfg_.search_window_px, taken, &attempted);
  }

  auto to_pose_only = [&](const std::vector<WindowMatch>& list) {
    std::vector<PoseOnlyAssociation> out;
    out.reserve(list.size());
    for (const WindowMatch& m : list) {
      const Keypoint& kp = frame.features.keypoints[m.keypoint];
      out.push_back({map_.point(m.point).position, {kp.x, kp.y}});
    }
    return out;
  };

  PoseSE3 pose = predicted;
  std::vector<bool> outlier(assoc.size(), false);
  if (assoc.size() >= 6) {
    const PoseOnlyResult res =
        optimize_pose_only(predicted, to_pose_only(assoc), cam_, cfg_.lm);
    pose = res.pose;
    outlier = res.outlier;
  }

  // Stage 3: widen to the reference keyframe's local map and re-optimize.
  for (const WindowMatch& m : assoc) taken[m.keypoint] = true;
  std::set<MapPointId> seen(last_points.begin(), last_points.end());
  std::vector<MapPointId> widen_points;
  if (reference_kf_ >= 0 && map_.has_keyframe(reference_kf_)) {
    for (MapPointId pid : map_.local_neighborhood(reference_kf_).points) {
      if (!seen.count(pid)) widen_points.push_back(pid);
    }
  }
  const std::vector<WindowMatch> widened = match_by_projection(
      frame, widen_points, pose, thresholds_.th_high, cfg_.search_window_px,
      taken, &attempted);
  assoc.insert(assoc.end(), widened.begin(), widened.end());

  int inliers = 0;
  outlier.assign(assoc.size(), false);
  if (assoc.size() >= 6) {
    const PoseOnlyResult res =
        optimize_pose_only(pose, to_pose_only(assoc), cam_, cfg_.lm);
    pose = res.pose;
    outlier = res.outlier;
    inliers = res.inlier_count;
  }
  const int matched = static_cast<int>(assoc.size());
  const int geometric_outliers = matched - inliers;

  // Threshold controller: candidates that did not end as inliers count as
  // outliers, so match starvation raises the thresholds.
  if (cfg_.adaptive) {
    thresholds_ =
        adapt_thresholds(attempted, attempted - inliers, cfg_.adaptive_cfg);
  }

  if (inliers < cfg_.track_min_inliers) {
    mode_ = TrackerMode::kLost;
    return std::nullopt;
  }

  // Optional systematic drift on the translation step (test harness): the
  // camera and the whole recent submap (the reference keyframe's
  // covisibility neighborhood) shift together by a fraction of the frame's
  // world motion. The moved region stays self-consistent while drifting
  // away from stale regions, the way real odometric error accumulates.
  if (cfg_.drift_translation_scale != 1.0) {
    const Eigen::Vector3d motion = pose.center() - last_pose_.center();
    const Eigen::Vector3d delta =
        (cfg_.drift_translation_scale - 1.0) * motion;
    auto shift_camera = [&delta](const PoseSE3& p) {
      return PoseSE3(p.unit_quaternion(),
                     p.translation() - p.rotation() * delta);
    };
    pose = shift_camera(pose);
    if (reference_kf_ >= 0 && map_.has_keyframe(reference_kf_)) {
      const Neighborhood hood = map_.local_neighborhood(reference_kf_);
      for (KeyFrameId id : hood.keyframes) {
        map_.set_keyframe_pose(id, shift_camera(map_.keyframe(id).pose_cw));
      }
      for (MapPointId pid : hood.points) {
        map_.set_point_position(pid, map_.point(pid).position + delta);
      }
    }
  }

  for (std::size_t i = 0; i < assoc.size(); ++i) {
    frame.map_point_links[assoc[i].keypoint] = assoc[i].point;
    frame.outlier_flags[assoc[i].keypoint] = outlier[i];
    if (!outlier[i]) map_.note_found(assoc[i].point);
  }
  frame.pose_cw = pose;

  velocity_ = pose * last_pose_.inverse();
  last_pose_ = pose;
  last_frame_ = frame;
  ++frames_since_kf_;

  TrackResult result;
  result.pose_cw = pose;
  result.inlier_count = inliers;
  result.outlier_count = geometric_outliers;
  result.candidate_count = attempted;
  result.reference_keyframe = reference_kf_;
  return result;
}

bool Tracker::need_keyframe(const TrackResult& result) const {
  if (mode_ != TrackerMode::kOk) return false;
  if (frames_since_kf_ >= cfg_.kf_max_gap) return true;
  if (reference_kf_ < 0 || !map_.has_keyframe(reference_kf_)) return false;
  int reference_tracked = 0;
  for (MapPointId pid : map_.keyframe(reference_kf_).map_point_links) {
    if (pid != kNoPoint) ++reference_tracked;
  }
  return result.inlier_count < cfg_.kf_ratio * reference_tracked &&
         result.inlier_count > cfg_.track_min_inliers;
}

KeyFrameId Tracker::promote_keyframe(Frame& frame, BowVector bow) {
  const KeyFrameId kf = map_.insert_keyframe(frame, std::move(bow));
  reference_kf_ = kf;
  frames_since_kf_ = 0;
  return kf;
}

KeyFrameId Tracker::ensure_reference_alive() {
  if (reference_kf_ >= 0 && map_.has_keyframe(reference_kf_)) {
    return reference_kf_;
  }
  KeyFrameId newest = -1;
  for (KeyFrameId id : map_.keyframe_ids()) newest = std::max(newest, id);
  reference_kf_ = newest;
  return reference_kf_;
}

std::optional<TrackResult> Tracker::relocalize(Frame& frame,
                                               const KeyFrameDatabase& db,
                                               const Vocabulary& vocab) {
  if (mode_ != TrackerMode::kLost) {
    throw WrongMode("relocalize requires Lost mode");
  }
  if (frame.features.size() == 0 || vocab.empty()) return std::nullopt;
  const BowVector bow = vocab.to_bow(frame.features);
  if (bow.empty()) return std::nullopt;
  const auto candidates = db.query(bow, cfg_.reloc_min_score);

  frame.reset_links();
  for (const auto& cand : candidates) {
    if (!map_.has_keyframe(cand.keyframe_id)) continue;
    const KeyFrame& kf = map_.keyframe(cand.keyframe_id);
    // Strict matching against the candidate keyframe's descriptors.
    const auto matches =
        match_descriptors(frame.features, kf.features, thresholds_, true);
    std::vector<PoseOnlyAssociation> assoc;
    std::vector<std::pair<int, MapPointId>> links;
    for (const FeatureMatch& m : matches) {
      const MapPointId pid = kf.map_point_links[m.train_index];
      if (pid == kNoPoint || !map_.has_point(pid)) continue;
      const Keypoint& kp = frame.features.keypoints[m.query_index];
      assoc.push_back({map_.point(pid).position, {kp.x, kp.y}});
      links.push_back({m.query_index, pid});
    }
    if (static_cast<int>(assoc.size()) < cfg_.reloc_min_inliers) continue;
    const PoseOnlyResult res =
        optimize_pose_only(kf.pose_cw, assoc, cam_, cfg_.lm);
    if (res.inlier_count < cfg_.reloc_min_inliers) continue;

    for (std::size_t i = 0; i < links.size(); ++i) {
      frame.map_point_links[links[i].first] = links[i].second;
      frame.outlier_flags[links[i].first] = res.outlier[i];
    }
    frame.pose_cw = res.pose;
    mode_ = TrackerMode::kOk;
    last_pose_ = res.pose;
    velocity_ = PoseSE3::identity();
    reference_kf_ = cand.keyframe_id;
    last_frame_ = frame;
    ++frames_since_kf_;

    TrackResult result;
    result.pose_cw = res.pose;
    result.inlier_count = res.inlier_count;
    result.outlier_count =
        static_cast<int>(assoc.size()) - res.inlier_count;
    result.candidate_count = static_cast<int>(assoc.size());
    result.reference_keyframe = reference_kf_;
    return result;
  }
  return std::nullopt;
}

}  // namespace vslam
