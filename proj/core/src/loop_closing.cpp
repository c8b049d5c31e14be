#include "vslam/loop_closing.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "vslam/errors.hpp"

namespace vslam {

LoopCloser::LoopCloser(Map& map, const CameraIntrinsics& cam,
                       const LoopConfig& cfg)
    : map_(map), cam_(cam), cfg_(cfg) {}

std::optional<LoopCandidate> LoopCloser::detect_loop(
    KeyFrameId current, const KeyFrameDatabase& db) const {
  if (!map_.has_keyframe(current)) return std::nullopt;
  const KeyFrame& kf = map_.keyframe(current);
  if (kf.bow.empty()) return std::nullopt;

  // Baseline: the worst similarity among the current covisible neighbors.
  const std::vector<KeyFrameId> neighbors =
      map_.neighbors(current, map_.config().covis_min);
  double baseline = cfg_.min_score;
  if (!neighbors.empty()) {
    double min_neighbor = 1.0;
    for (KeyFrameId n : neighbors) {
      min_neighbor =
          std::min(min_neighbor, l2_score(kf.bow, map_.keyframe(n).bow));
    }
    baseline = std::max(cfg_.min_score, min_neighbor);
  }

  std::set<KeyFrameId> excluded(neighbors.begin(), neighbors.end());
  excluded.insert(current);

  std::vector<LoopCandidate> candidates;
  for (const auto& c : db.query(kf.bow, cfg_.min_score)) {
    if (excluded.count(c.keyframe_id)) continue;
    if (!map_.has_keyframe(c.keyframe_id)) continue;
    if (c.score <= baseline) continue;
    candidates.push_back({c.keyframe_id, c.score});
  }
  if (candidates.empty()) return std::nullopt;

  // Group acceptance: a candidate counts only when at least min_group
  // candidates (itself included) are covisible with it.
  std::optional<LoopCandidate> best;
  for (const LoopCandidate& c : candidates) {
    int group = 1;
    for (const LoopCandidate& other : candidates) {
      if (other.keyframe == c.keyframe) continue;
      if (map_.covisibility_weight(c.keyframe, other.keyframe) >=
          map_.config().covis_min) {
        ++group;
      }
    }
    if (group < cfg_.min_group) continue;
    if (!best || c.score > best->score ||
        (c.score == best->score && c.keyframe < best->keyframe)) {
      best = c;
    }
  }
  return best;
}

std::optional<LoopCloseReport> LoopCloser::close_loop(
    const LoopCandidate& candidate, KeyFrameId current,
    const MatchThresholds& th, const LMConfig& lm) {
  if (!map_.has_keyframe(candidate.keyframe) || !map_.has_keyframe(current)) {
    return std::nullopt;
  }
  const KeyFrame& cur = map_.keyframe(current);
  const KeyFrame& old = map_.keyframe(candidate.keyframe);

  // Match the two keyframes' associated keypoints; each match pairs a
  // current-side map point with a loop-side map point.
  struct PointPair {
    MapPointId cur_point;
    MapPointId old_point;
    int cur_kp;
    int old_kp;
  };
  std::vector<PointPair> pairs;
  {
    std::vector<int> cur_idx, old_idx;
    FeatureSet cur_sub, old_sub;
    const auto& cd = cur.features.descriptors;
    cur_sub.descriptors = cd.variant() == DescriptorVariant::kFloat
                              ? DescriptorArray::make_float(cd.length())
                              : DescriptorArray::make_binary(cd.length());
    old_sub.descriptors = cd.variant() == DescriptorVariant::kFloat
                              ? DescriptorArray::make_float(cd.length())
                              : DescriptorArray::make_binary(cd.length());
    for (int i = 0; i < cur.features.size(); ++i) {
      if (cur.map_point_links[i] == kNoPoint) continue;
      cur_idx.push_back(i);
      cur_sub.keypoints.push_back(cur.features.keypoints[i]);
      if (cd.variant() == DescriptorVariant::kFloat) {
        cur_sub.descriptors.push_float(cd.float_row(i));
      } else {
        cur_sub.descriptors.push_binary(cd.word_row(i));
      }
    }
    for (int i = 0; i < old.features.size(); ++i) {
      if (old.map_point_links[i] == kNoPoint) continue;
      old_idx.push_back(i);
      old_sub.keypoints.push_back(old.features.keypoints[i]);
      const auto& od = old.features.descriptors;
      if (od.variant() == DescriptorVariant::kFloat) {
        old_sub.descriptors.push_float(od.float_row(i));
      } else {
        old_sub.descriptors.push_binary(od.word_row(i));
      }
    }
    for (const FeatureMatch& m :
         match_descriptors(cur_sub, old_sub, th, true)) {
      const int ci = cur_idx[m.query_index];
      const int oi = old_idx[m.train_index];
      const MapPointId cp = cur.map_point_links[ci];
      const MapPointId op = old.map_point_links[oi];
      if (cp == kNoPoint || op == kNoPoint || cp == op) continue;
      if (!map_.has_point(cp) || !map_.has_point(op)) continue;
      pairs.push_back({cp, op, ci, oi});
    }
  }
  if (static_cast<int>(pairs.size()) < cfg_.min_point_matches) {
    return std::nullopt;
  }

  // RANSAC over triples for the similarity mapping current-side (drifted)
  // positions onto loop-side positions; inliers must reproject consistently
  // in both keyframes.
  const double gate_sq = cfg_.sim3_reproj_max_px * cfg_.sim3_reproj_max_px;
  auto count_inliers = [&](const SimilaritySim3& t,
                           std::vector<bool>* mask) -> int {
    int count = 0;
    if (mask) mask->assign(pairs.size(), false);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const Eigen::Vector3d a = map_.point(pairs[i].cur_point).position;
      const Eigen::Vector3d b = map_.point(pairs[i].old_point).position;
      const auto proj_old = project(t.apply(a), old.pose_cw, cam_);
      if (!proj_old) continue;
      const Keypoint& kb = old.features.keypoints[pairs[i].old_kp];
      if ((Eigen::Vector2d(kb.x, kb.y) - *proj_old).squaredNorm() > gate_sq) {
        continue;
      }
      const auto proj_cur = project(t.inverse().apply(b), cur.pose_cw, cam_);
      if (!proj_cur) continue;
      const Keypoint& ka = cur.features.keypoints[pairs[i].cur_kp];
      if ((Eigen::Vector2d(ka.x, ka.y) - *proj_cur).squaredNorm() > gate_sq) {
        continue;
      }
      ++count;
      if (mask) (*mask)[i] = true;
    }
    return count;
  };

  std::mt19937_64 rng(cfg_.seed);
  std::vector<int> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  int best_inliers = 0;
  SimilaritySim3 best_t;
  for (int iter = 0; iter < cfg_.ransac_iterations; ++iter) {
    for (int k = 0; k < 3; ++k) {
      std::uniform_int_distribution<int> dist(k,
                                              static_cast<int>(order.size()) - 1);
      std::swap(order[k], order[dist(rng)]);
    }
    std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> sample;
    for (int k = 0; k < 3; ++k) {
      sample.emplace_back(map_.point(pairs[order[k]].cur_point).position,
                          map_.point(pairs[order[k]].old_point).position);
    }
    SimilaritySim3 t;
    try {
      t = solve_sim3(sample);
    } catch (const DegenerateConfiguration&) {
      continue;
    }
    const int inliers = count_inliers(t, nullptr);
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best_t = t;
    }
  }
  if (best_inliers < cfg_.sim3_min_inliers) return std::nullopt;

  // Refit on the inlier set; this is the geometric validation of the loop.
  std::vector<bool> mask;
  count_inliers(best_t, &mask);
  std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> inlier_pairs;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!mask[i]) continue;
    inlier_pairs.emplace_back(map_.point(pairs[i].cur_point).position,
                              map_.point(pairs[i].old_point).position);
  }
  SimilaritySim3 correction;  // drifted world -> loop-consistent world
  try {
    correction = solve_sim3(inlier_pairs);
  } catch (const DegenerateConfiguration&) {
    return std::nullopt;
  }
  const int final_inliers = count_inliers(correction, &mask);
  if (final_inliers < cfg_.sim3_min_inliers) return std::nullopt;

  LoopCloseReport report;
  report.matched_points = static_cast<int>(pairs.size());
  report.sim3_inliers = final_inliers;
  report.correction = correction;

  // --- Correction phase (the map mutates from here on) ---

  // Snapshot pre-correction poses for the spanning-edge measurements.
  std::map<KeyFrameId, PoseSE3> pre_pose;
  for (KeyFrameId id : map_.keyframe_ids()) {
    pre_pose.emplace(id, map_.keyframe(id).pose_cw);
  }

  const Neighborhood hood = map_.local_neighborhood(current);
  const SimilaritySim3 correction_inv = correction.inverse();
  std::map<KeyFrameId, SimilaritySim3> node_seed;
  for (KeyFrameId id : map_.keyframe_ids()) {
    node_seed.emplace(id, SimilaritySim3::from_se3(pre_pose.at(id)));
  }
  for (KeyFrameId id : hood.keyframes) {
    const SimilaritySim3 corrected =
        SimilaritySim3::from_se3(pre_pose.at(id)) * correction_inv;
    node_seed[id] = corrected;
    map_.set_keyframe_pose(id, corrected.to_se3_rescaled());
  }
  for (MapPointId pid : hood.points) {
    if (!map_.has_point(pid)) continue;
    map_.set_point_position(pid, correction.apply(map_.point(pid).position));
  }
  report.corrected_keyframes = static_cast<int>(hood.keyframes.size());

  // Fuse the matched pairs: the loop-side (older) point absorbs the
  // current-side duplicate.
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!mask[i]) continue;
    if (!map_.has_point(pairs[i].old_point) ||
        !map_.has_point(pairs[i].cur_point)) {
      continue;
    }
    if (map_.merge_points(pairs[i].old_point, pairs[i].cur_point)) {
      ++report.fused_points;
    }
  }

  // Pose graph over the covisibility-derived spanning structure plus the
  // loop edge, anchored at the first keyframe.
  const std::vector<KeyFrameId> ids = map_.keyframe_ids();
  std::map<KeyFrameId, int> index;
  std::vector<SimilaritySim3> nodes;
  std::vector<bool> fixed;
  for (KeyFrameId id : ids) {
    index.emplace(id, static_cast<int>(nodes.size()));
    nodes.push_back(node_seed.at(id));
    fixed.push_back(false);
  }
  fixed.front() = true;

  std::vector<PoseGraphEdge> edges;
  for (std::size_t k = 1; k < ids.size(); ++k) {
    const KeyFrameId id = ids[k];
    // Strongest covisible predecessor, falling back to the previous id.
    KeyFrameId parent = ids[k - 1];
    int best_weight = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const int w = map_.covisibility_weight(id, ids[j]);
      if (w >= best_weight && w > 0) {
        best_weight = w;
        parent = ids[j];
      }
    }
    PoseGraphEdge e;
    e.i = index.at(parent);
    e.j = index.at(id);
    e.measurement = SimilaritySim3::from_se3(pre_pose.at(id)) *
                    SimilaritySim3::from_se3(pre_pose.at(parent)).inverse();
    edges.push_back(e);
  }
  {
    PoseGraphEdge loop;
    loop.i = index.at(candidate.keyframe);
    loop.j = index.at(current);
    loop.measurement = node_seed.at(current) *
                       SimilaritySim3::from_se3(pre_pose.at(candidate.keyframe))
                           .inverse();
    edges.push_back(loop);
  }

  const std::vector<SimilaritySim3> optimized =
      optimize_pose_graph(nodes, edges, fixed, lm);

  // Points ride along with their reference (lowest-id observing) keyframe.
  std::map<KeyFrameId, SimilaritySim3> before, after;
  for (KeyFrameId id : ids) {
    before.emplace(id, nodes[index.at(id)]);
    after.emplace(id, optimized[index.at(id)]);
  }
  for (MapPointId pid : map_.point_ids()) {
    const MapPoint& p = map_.point(pid);
    const KeyFrameId ref = p.observations.begin()->first;
    const Eigen::Vector3d moved =
        after.at(ref).inverse().apply(before.at(ref).apply(p.position));
    map_.set_point_position(pid, moved);
  }
  for (KeyFrameId id : ids) {
    map_.set_keyframe_pose(id, after.at(id).to_se3_rescaled());
  }
  return report;
}

}  // namespace vslam
