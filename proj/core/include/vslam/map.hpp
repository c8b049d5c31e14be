#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "vslam/bow.hpp"
#include "vslam/features.hpp"
#include "vslam/geometry.hpp"

namespace vslam {

using KeyFrameId = std::int64_t;
using MapPointId = std::int64_t;

inline constexpr MapPointId kNoPoint = -1;

/// Transient per-image state owned by the tracker.
struct Frame {
  FrameId id = 0;
  double timestamp = 0.0;
  FeatureSet features;
  std::optional<PoseSE3> pose_cw;
  std::vector<MapPointId> map_point_links;  // kNoPoint where unmatched
  std::vector<bool> outlier_flags;

  void reset_links() {
    map_point_links.assign(features.size(), kNoPoint);
    outlier_flags.assign(features.size(), false);
  }
};

/// Persistent frame promoted into the map.
struct KeyFrame {
  KeyFrameId id = 0;
  FrameId source_frame = 0;
  double timestamp = 0.0;
  FeatureSet features;
  PoseSE3 pose_cw;
  BowVector bow;
  std::vector<MapPointId> map_point_links;
};

struct MapPoint {
  MapPointId id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  std::map<KeyFrameId, int> observations;  // keyframe -> keypoint index
  Descriptor representative;
  int found_count = 0;
  int visible_count = 0;
};

struct MapConfig {
  /// Shared-point count for two keyframes to count as connected.
  int covis_min = 15;
  /// Cull a keyframe when this fraction of its points is redundant.
  double redundancy_fraction = 0.9;
  /// A point is redundant for a keyframe when at least this many other
  /// keyframes observe it.
  int redundancy_observers = 3;
};

struct Neighborhood {
  std::vector<KeyFrameId> keyframes;  // ascending, includes the query
  std::vector<MapPointId> points;     // ascending
};

/// The SLAM map: keyframes, map points, and the covisibility graph. The
/// graph stores exact co-observation counts for every sharing pair;
/// connectivity queries apply the covis_min cutoff. One writer-exclusive
/// lock guards the whole store; operations assume the caller holds it.
class Map {
 public:
  explicit Map(MapConfig cfg = {}) : cfg_(cfg) {}

  const MapConfig& config() const { return cfg_; }
  std::shared_mutex& mutex() const { return mutex_; }

  // --- keyframes ---

  /// Stores the frame as a keyframe and registers its non-outlier map-point
  /// links as observations. Throws NoPose / DanglingKeyFrame.
  KeyFrameId insert_keyframe(const Frame& frame, BowVector bow = {});

  bool has_keyframe(KeyFrameId id) const { return keyframes_.count(id) > 0; }
  const KeyFrame& keyframe(KeyFrameId id) const;
  std::vector<KeyFrameId> keyframe_ids() const;
  std::size_t keyframe_count() const { return keyframes_.size(); }

  void set_keyframe_pose(KeyFrameId id, const PoseSE3& pose);
  void set_keyframe_bow(KeyFrameId id, BowVector bow);

  /// Removes redundant keyframes (the first two are protected). Returns the
  /// removed ids. Points left without observations are removed as well.
  std::vector<KeyFrameId> cull_keyframes();

  // --- map points ---

  /// Creates a point from >= 1 observations of live keyframes. Throws
  /// DanglingKeyFrame for dead keyframes, std::logic_error for keypoints
  /// that are already linked.
  MapPointId add_map_point(const Eigen::Vector3d& position,
                           const std::map<KeyFrameId, int>& observations);
  void remove_map_point(MapPointId id);

  bool has_point(MapPointId id) const { return points_.count(id) > 0; }
  const MapPoint& point(MapPointId id) const;
  std::vector<MapPointId> point_ids() const;
  std::size_t point_count() const { return points_.size(); }

  void set_point_position(MapPointId id, const Eigen::Vector3d& position);
  void add_observation(MapPointId point_id, KeyFrameId kf_id, int keypoint);
  /// Dropping the last observation removes the point.
  void remove_observation(MapPointId point_id, KeyFrameId kf_id);
  /// Folds `absorbed` into `kept`: observations union, counters summed,
  /// representative recomputed. Returns false if either point is dead.
  bool merge_points(MapPointId kept, MapPointId absorbed);

  void note_visible(MapPointId id);
  void note_found(MapPointId id);

  // --- covisibility ---

  /// Exact co-observation count (0 when none).
  int covisibility_weight(KeyFrameId a, KeyFrameId b) const;
  /// Keyframes sharing >= min_weight points with kf, ascending by id.
  std::vector<KeyFrameId> neighbors(KeyFrameId kf, int min_weight) const;
  /// Connected keyframes (covis_min cutoff) including kf, plus every map
  /// point they observe. Throws UnknownKeyFrame.
  Neighborhood local_neighborhood(KeyFrameId kf) const;

  // --- integrity ---

  /// Empty when bidirectional links, edge symmetry, and weight correctness
  /// all hold.
  std::vector<std::string> audit() const;

  /// Consistency-check hook: drops a point's back-link without touching the
  /// keyframe side, leaving a detectable violation.
  void debug_break_backlink(MapPointId point_id, KeyFrameId kf_id);

  /// Plain-text "MAP v1" snapshot.
  void write_snapshot(const std::string& path) const;

 private:
  void bump_covisibility(const MapPoint& p, KeyFrameId kf, int delta);
  void refresh_representative(MapPoint& p);
  void remove_keyframe_internal(KeyFrameId id);

  MapConfig cfg_;
  mutable std::shared_mutex mutex_;
  std::map<KeyFrameId, KeyFrame> keyframes_;
  std::map<MapPointId, MapPoint> points_;
  std::map<KeyFrameId, std::map<KeyFrameId, int>> covis_;
  KeyFrameId next_keyframe_id_ = 0;
  MapPointId next_point_id_ = 0;
};

}  // namespace vslam
