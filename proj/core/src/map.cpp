#include "vslam/map.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vslam/errors.hpp"

namespace vslam {

KeyFrameId Map::insert_keyframe(const Frame& frame, BowVector bow) {
  if (!frame.pose_cw.has_value()) {
    throw NoPose("frame " + std::to_string(frame.id) + " has no pose");
  }
  KeyFrame kf;
  kf.id = next_keyframe_id_++;
  kf.source_frame = frame.id;
  kf.timestamp = frame.timestamp;
  kf.features = frame.features;
  kf.pose_cw = *frame.pose_cw;
  kf.bow = std::move(bow);
  kf.map_point_links.assign(frame.features.size(), kNoPoint);

  keyframes_.emplace(kf.id, std::move(kf));
  KeyFrame& stored = keyframes_.at(next_keyframe_id_ - 1);
  covis_[stored.id];

  for (std::size_t i = 0; i < frame.map_point_links.size(); ++i) {
    const MapPointId pid = frame.map_point_links[i];
    if (pid == kNoPoint) continue;
    if (i < frame.outlier_flags.size() && frame.outlier_flags[i]) continue;
    auto it = points_.find(pid);
    if (it == points_.end()) continue;  // point culled since matching
    if (it->second.observations.count(stored.id)) continue;
    stored.map_point_links[i] = pid;
    it->second.observations[stored.id] = static_cast<int>(i);
    bump_covisibility(it->second, stored.id, +1);
    refresh_representative(it->second);
  }
  return stored.id;
}

const KeyFrame& Map::keyframe(KeyFrameId id) const {
  auto it = keyframes_.find(id);
  if (it == keyframes_.end()) {
    throw UnknownKeyFrame("keyframe " + std::to_string(id) + " not in map");
  }
  return it->second;
}

std::vector<KeyFrameId> Map::keyframe_ids() const {
  std::vector<KeyFrameId> ids;
  ids.reserve(keyframes_.size());
  for (const auto& [id, kf] : keyframes_) ids.push_back(id);
  return ids;
}

void Map::set_keyframe_pose(KeyFrameId id, const PoseSE3& pose) {
  auto it = keyframes_.find(id);
  if (it == keyframes_.end()) {
    throw UnknownKeyFrame("keyframe " + std::to_string(id) + " not in map");
  }
  it->second.pose_cw = pose;
}

void Map::set_keyframe_bow(KeyFrameId id, BowVector bow) {
  auto it = keyframes_.find(id);
  if (it == keyframes_.end()) {
    throw UnknownKeyFrame("keyframe " + std::to_string(id) + " not in map");
  }
  it->second.bow = std::move(bow);
}

MapPointId Map::add_map_point(const Eigen::Vector3d& position,
                              const std::map<KeyFrameId, int>& observations) {
  if (observations.empty()) {
    throw std::logic_error("map point needs at least one observation");
  }
  for (const auto& [kf_id, idx] : observations) {
    auto it = keyframes_.find(kf_id);
    if (it == keyframes_.end()) {
      throw DanglingKeyFrame("observation references dead keyframe " +
                             std::to_string(kf_id));
    }
    if (idx < 0 || idx >= it->second.features.size()) {
      throw std::logic_error("observation keypoint index out of range");
    }
    if (it->second.map_point_links[idx] != kNoPoint) {
      throw std::logic_error("keypoint already linked to a map point");
    }
  }
  MapPoint p;
  p.id = next_point_id_++;
  p.position = position;
  p.observations = observations;
  for (const auto& [kf_id, idx] : observations) {
    keyframes_.at(kf_id).map_point_links[idx] = p.id;
  }
  // Pairwise covisibility between all observers.
  for (auto a = observations.begin(); a != observations.end(); ++a) {
    for (auto b = std::next(a); b != observations.end(); ++b) {
      covis_[a->first][b->first] += 1;
      covis_[b->first][a->first] += 1;
    }
  }
  refresh_representative(p);
  const MapPointId id = p.id;
  points_.emplace(id, std::move(p));
  return id;
}

void Map::remove_map_point(MapPointId id) {
  auto it = points_.find(id);
  if (it == points_.end()) {
    throw std::logic_error("map point " + std::to_string(id) + " not in map");
  }
  const MapPoint& p = it->second;
  for (const auto& [kf_id, idx] : p.observations) {
    keyframes_.at(kf_id).map_point_links[idx] = kNoPoint;
  }
  for (auto a = p.observations.begin(); a != p.observations.end(); ++a) {
    for (auto b = std::next(a); b != p.observations.end(); ++b) {
      auto& row_a = covis_[a->first];
      auto& row_b = covis_[b->first];
      if (--row_a[b->first] <= 0) row_a.erase(b->first);
      if (--row_b[a->first] <= 0) row_b.erase(a->first);
    }
  }
  points_.erase(it);
}

const MapPoint& Map::point(MapPointId id) const {
  auto it = points_.find(id);
  if (it == points_.end()) {
    throw std::logic_error("map point " + std::to_string(id) + " not in map");
  }
  return it->second;
}

std::vector<MapPointId> Map::point_ids() const {
  std::vector<MapPointId> ids;
  ids.reserve(points_.size());
  for (const auto& [id, p] : points_) ids.push_back(id);
  return ids;
}

void Map::set_point_position(MapPointId id, const Eigen::Vector3d& position) {
  auto it = points_.find(id);
  if (it == points_.end()) {
    throw std::logic_error("map point " + std::to_string(id) + " not in map");
  }
  it->second.position = position;
}

void Map::add_observation(MapPointId point_id, KeyFrameId kf_id,
                          int keypoint) {
  auto pit = points_.find(point_id);
  if (pit == points_.end()) {
    throw std::logic_error("map point " + std::to_string(point_id) +
                           " not in map");
  }
  auto kit = keyframes_.find(kf_id);
  if (kit == keyframes_.end()) {
    throw DanglingKeyFrame("observation references dead keyframe " +
                           std::to_string(kf_id));
  }
  if (pit->second.observations.count(kf_id)) return;
  if (keypoint < 0 || keypoint >= kit->second.features.size() ||
      kit->second.map_point_links[keypoint] != kNoPoint) {
    throw std::logic_error("bad or already-linked keypoint for observation");
  }
  bump_covisibility(pit->second, kf_id, +1);
  pit->second.observations[kf_id] = keypoint;
  kit->second.map_point_links[keypoint] = point_id;
  refresh_representative(pit->second);
}

void Map::remove_observation(MapPointId point_id, KeyFrameId kf_id) {
  auto pit = points_.find(point_id);
  if (pit == points_.end()) return;
  auto obs = pit->second.observations.find(kf_id);
  if (obs == pit->second.observations.end()) return;
  keyframes_.at(kf_id).map_point_links[obs->second] = kNoPoint;
  pit->second.observations.erase(obs);
  bump_covisibility(pit->second, kf_id, -1);
  if (pit->second.observations.empty()) {
    points_.erase(pit);
  } else {
    refresh_representative(pit->second);
  }
}

bool Map::merge_points(MapPointId kept, MapPointId absorbed) {
  if (kept == absorbed) return false;
  auto kit = points_.find(kept);
  auto ait = points_.find(absorbed);
  if (kit == points_.end() || ait == points_.end()) return false;

  const auto absorbed_obs = ait->second.observations;
  const int found = ait->second.found_count;
  const int visible = ait->second.visible_count;
  remove_map_point(absorbed);

  MapPoint& keep = points_.at(kept);
  keep.found_count += found;
  keep.visible_count += visible;
  for (const auto& [kf_id, idx] : absorbed_obs) {
    if (keep.observations.count(kf_id)) continue;
    auto& kf = keyframes_.at(kf_id);
    if (kf.map_point_links[idx] != kNoPoint) continue;
    bump_covisibility(keep, kf_id, +1);
    keep.observations[kf_id] = idx;
    kf.map_point_links[idx] = kept;
  }
  refresh_representative(keep);
  return true;
}

void Map::note_visible(MapPointId id) {
  auto it = points_.find(id);
  if (it != points_.end()) ++it->second.visible_count;
}

void Map::note_found(MapPointId id) {
  auto it = points_.find(id);
  if (it != points_.end()) ++it->second.found_count;
}

int Map::covisibility_weight(KeyFrameId a, KeyFrameId b) const {
  auto row = covis_.find(a);
  if (row == covis_.end()) return 0;
  auto cell = row->second.find(b);
  return cell == row->second.end() ? 0 : cell->second;
}

std::vector<KeyFrameId> Map::neighbors(KeyFrameId kf, int min_weight) const {
  std::vector<KeyFrameId> out;
  auto row = covis_.find(kf);
  if (row == covis_.end()) return out;
  for (const auto& [other, weight] : row->second) {
    if (weight >= min_weight) out.push_back(other);
  }
  return out;
}

Neighborhood Map::local_neighborhood(KeyFrameId kf) const {
  auto it = keyframes_.find(kf);
  if (it == keyframes_.end()) {
    throw UnknownKeyFrame("keyframe " + std::to_string(kf) + " not in map");
  }
  Neighborhood out;
  out.keyframes = neighbors(kf, cfg_.covis_min);
  out.keyframes.push_back(kf);
  std::sort(out.keyframes.begin(), out.keyframes.end());
  std::set<MapPointId> pts;
  for (KeyFrameId id : out.keyframes) {
    for (MapPointId pid : keyframes_.at(id).map_point_links) {
      if (pid != kNoPoint) pts.insert(pid);
    }
  }
  out.points.assign(pts.begin(), pts.end());
  return out;
}

std::vector<KeyFrameId> Map::cull_keyframes() {
  std::vector<KeyFrameId> removed;
  if (keyframes_.size() < 3) return removed;
  std::vector<KeyFrameId> protected_ids;
  for (const auto& [id, kf] : keyframes_) {
    protected_ids.push_back(id);
    if (protected_ids.size() == 2) break;
  }
  const std::vector<KeyFrameId> ids = keyframe_ids();
  for (KeyFrameId id : ids) {
    if (std::count(protected_ids.begin(), protected_ids.end(), id)) continue;
    const KeyFrame& kf = keyframes_.at(id);
    int total = 0;
    int redundant = 0;
    for (MapPointId pid : kf.map_point_links) {
      if (pid == kNoPoint) continue;
      ++total;
      const MapPoint& p = points_.at(pid);
      const int others = static_cast<int>(p.observations.size()) - 1;
      if (others >= cfg_.redundancy_observers) ++redundant;
    }
    if (total == 0) continue;
    if (redundant >= cfg_.redundancy_fraction * total) {
      remove_keyframe_internal(id);
      removed.push_back(id);
    }
  }
  return removed;
}

void Map::remove_keyframe_internal(KeyFrameId id) {
  KeyFrame& kf = keyframes_.at(id);
  const std::vector<MapPointId> links = kf.map_point_links;
  for (MapPointId pid : links) {
    if (pid != kNoPoint) remove_observation(pid, id);
  }
  covis_.erase(id);
  keyframes_.erase(id);
}

void Map::bump_covisibility(const MapPoint& p, KeyFrameId kf, int delta) {
  for (const auto& [other, idx] : p.observations) {
    if (other == kf) continue;
    auto& a = covis_[kf][other];
    auto& b = covis_[other][kf];
    a += delta;
    b += delta;
    if (a <= 0) covis_[kf].erase(other);
    if (b <= 0) covis_[other].erase(kf);
  }
}

void Map::refresh_representative(MapPoint& p) {
  // Pick the observation descriptor with the smallest median distance to
  // all observation descriptors. Float uses Euclidean, binary Hamming.
  std::vector<Descriptor> descs;
  descs.reserve(p.observations.size());
  for (const auto& [kf_id, idx] : p.observations) {
    descs.push_back(keyframes_.at(kf_id).features.descriptors.row(idx));
  }
  if (descs.empty()) return;
  if (descs.size() == 1) {
    p.representative = descs[0];
    return;
  }
  double best_median = 0.0;
  int best = -1;
  for (std::size_t i = 0; i < descs.size(); ++i) {
    std::vector<double> dist;
    dist.reserve(descs.size() - 1);
    for (std::size_t j = 0; j < descs.size(); ++j) {
      if (j != i) dist.push_back(descriptor_distance(descs[i], descs[j]));
    }
    std::sort(dist.begin(), dist.end());
    const double median = dist[dist.size() / 2];
    if (best < 0 || median < best_median) {
      best_median = median;
      best = static_cast<int>(i);
    }
  }
  p.representative = descs[best];
}

std::vector<std::string> Map::audit() const {
  std::vector<std::string> violations;
  auto complain = [&violations](std::string msg) {
    violations.push_back(std::move(msg));
  };

  for (const auto& [kf_id, kf] : keyframes_) {
    for (std::size_t i = 0; i < kf.map_point_links.size(); ++i) {
      const MapPointId pid = kf.map_point_links[i];
      if (pid == kNoPoint) continue;
      auto pit = points_.find(pid);
      if (pit == points_.end()) {
        complain("kf " + std::to_string(kf_id) + " links dead point " +
                 std::to_string(pid));
        continue;
      }
      auto obs = pit->second.observations.find(kf_id);
      if (obs == pit->second.observations.end() ||
          obs->second != static_cast<int>(i)) {
        complain("kf " + std::to_string(kf_id) + " keypoint " +
                 std::to_string(i) + " link to point " + std::to_string(pid) +
                 " lacks a matching back-link");
      }
    }
  }

  for (const auto& [pid, p] : points_) {
    if (p.observations.empty()) {
      complain("point " + std::to_string(pid) + " has zero observations");
    }
    for (const auto& [kf_id, idx] : p.observations) {
      auto kit = keyframes_.find(kf_id);
      if (kit == keyframes_.end()) {
        complain("point " + std::to_string(pid) + " observed by dead kf " +
                 std::to_string(kf_id));
        continue;
      }
      if (idx < 0 || idx >= kit->second.features.size() ||
          kit->second.map_point_links[idx] != pid) {
        complain("point " + std::to_string(pid) + " back-link to kf " +
                 std::to_string(kf_id) + " not mirrored by the keyframe");
      }
    }
  }

  // Brute-force recount of every covisibility weight.
  std::map<KeyFrameId, std::map<KeyFrameId, int>> expect;
  for (const auto& [pid, p] : points_) {
    for (auto a = p.observations.begin(); a != p.observations.end(); ++a) {
      for (auto b = std::next(a); b != p.observations.end(); ++b) {
        expect[a->first][b->first] += 1;
        expect[b->first][a->first] += 1;
      }
    }
  }
  for (const auto& [a, row] : covis_) {
    if (!keyframes_.count(a)) {
      complain("covisibility row for dead kf " + std::to_string(a));
      continue;
    }
    for (const auto& [b, w] : row) {
      if (a == b) complain("self edge on kf " + std::to_string(a));
      if (!keyframes_.count(b)) {
        complain("edge to dead kf " + std::to_string(b));
        continue;
      }
      if (w < 1) {
        complain("stored edge weight < 1 between " + std::to_string(a) +
                 " and " + std::to_string(b));
      }
      const auto erow = expect.find(a);
      const int want =
          erow == expect.end() || !erow->second.count(b) ? 0 : erow->second.at(b);
      if (w != want) {
        complain("edge " + std::to_string(a) + "-" + std::to_string(b) +
                 " weight " + std::to_string(w) + " expected " +
                 std::to_string(want));
      }
      auto rrow = covis_.find(b);
      if (rrow == covis_.end() || !rrow->second.count(a) ||
          rrow->second.at(a) != w) {
        complain("asymmetric edge " + std::to_string(a) + "-" +
                 std::to_string(b));
      }
    }
  }
  for (const auto& [a, row] : expect) {
    for (const auto& [b, w] : row) {
      auto it = covis_.find(a);
      if (it == covis_.end() || !it->second.count(b)) {
        complain("missing edge " + std::to_string(a) + "-" +
                 std::to_string(b) + " of weight " + std::to_string(w));
      }
    }
  }
  return violations;
}

void Map::debug_break_backlink(MapPointId point_id, KeyFrameId kf_id) {
  auto it = points_.find(point_id);
  if (it == points_.end()) return;
  it->second.observations.erase(kf_id);
}

void Map::write_snapshot(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write map snapshot: " + path);
  out << "MAP v1\n";
  char buf[64];
  for (const auto& [id, kf] : keyframes_) {
    out << "KF " << id;
    std::snprintf(buf, sizeof(buf), " %.17g", kf.timestamp);
    out << buf;
    const Eigen::Matrix<double, 3, 4> m = kf.pose_cw.matrix34();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        std::snprintf(buf, sizeof(buf), " %.17g", m(r, c));
        out << buf;
      }
    }
    out << "\n";
  }
  for (const auto& [id, p] : points_) {
    out << "MP " << id;
    for (int k = 0; k < 3; ++k) {
      std::snprintf(buf, sizeof(buf), " %.17g", p.position(k));
      out << buf;
    }
    out << " " << p.observations.size();
    for (const auto& [kf_id, idx] : p.observations) {
      out << " " << kf_id << " " << idx;
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace vslam
