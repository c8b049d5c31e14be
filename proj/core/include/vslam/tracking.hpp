#pragma once

#include <optional>
#include <vector>

#include "vslam/bow.hpp"
#include "vslam/features.hpp"
#include "vslam/geometry.hpp"
#include "vslam/map.hpp"
#include "vslam/optimize.hpp"

namespace vslam {

enum class TrackerMode { kNotInitialized, kOk, kLost };

struct TrackerConfig {
  MatchThresholds thresholds{2.0, 3.0};
  bool adaptive = false;
  AdaptiveConfig adaptive_cfg;
  int track_min_inliers = 10;
  int kf_max_gap = 20;
  double kf_ratio = 0.9;
  double search_window_px = 15.0;
  int init_min_points = 30;
  int init_min_matches = 30;  // below this the init reference frame resets
  int reloc_min_inliers = 15;
  double reloc_min_score = 0.05;
  RansacConfig ransac;
  LMConfig lm;
  /// Test harness: scales each tracked frame's translation step, injecting
  /// systematic odometric drift (1.0 = off).
  double drift_translation_scale = 1.0;
};

struct TrackResult {
  PoseSE3 pose_cw;
  int inlier_count = 0;
  int outlier_count = 0;    // geometric outliers among matched associations
  int candidate_count = 0;  // map points attempted for matching
  KeyFrameId reference_keyframe = -1;
};

struct InitializationResult {
  KeyFrameId first_keyframe = -1;
  KeyFrameId second_keyframe = -1;
  int triangulated_points = 0;
};

/// Per-frame camera pose estimation: constant-velocity prediction,
/// projection matching against the last frame and the local map, pose-only
/// optimization, adaptive threshold update, keyframe decision, and
/// BoW relocalization when lost. Single-threaded; mutates the map only
/// through insert_keyframe (the caller holds the store's exclusive lock).
class Tracker {
 public:
  Tracker(Map& map, const CameraIntrinsics& cam, const TrackerConfig& cfg);

  TrackerMode mode() const { return mode_; }
  const MatchThresholds& thresholds() const { return thresholds_; }
  KeyFrameId reference_keyframe() const { return reference_kf_; }
  const PoseSE3& last_pose() const { return last_pose_; }
  const PoseSE3& velocity() const { return velocity_; }
  int frames_since_keyframe() const { return frames_since_kf_; }
  int last_init_match_count() const { return last_init_matches_; }

  /// Constant-velocity prediction (velocity composed onto the last pose).
  /// Throws WrongMode outside Ok.
  PoseSE3 predict_pose() const;

  /// Two-view bootstrap: matches f1/f2, estimates the relative pose,
  /// triangulates all inliers, normalizes median scene depth to 1, and
  /// seeds the map with two keyframes. nullopt = InitFailure, state stays
  /// NotInitialized.
  std::optional<InitializationResult> initialize(Frame& f1, Frame& f2);

  /// nullopt = TrackLost (mode transitions to Lost). On success the frame's
  /// pose and map-point links are filled in.
  std::optional<TrackResult> track_frame(Frame& frame);

  bool need_keyframe(const TrackResult& result) const;

  /// Promotes the frame: inserts it into the map (registering its inlier
  /// links) and makes it the reference keyframe.
  KeyFrameId promote_keyframe(Frame& frame, BowVector bow = {});

  /// Re-points the reference at the newest live keyframe when culling
  /// removed it. Returns the (possibly unchanged) reference id.
  KeyFrameId ensure_reference_alive();

  /// BoW-candidate relocalization with strict (th_low) matching and a
  /// pose-only solve per candidate. nullopt = StillLost.
  std::optional<TrackResult> relocalize(Frame& frame,
                                        const KeyFrameDatabase& db,
                                        const Vocabulary& vocab);

 private:
  struct WindowMatch {
    MapPointId point = kNoPoint;
    int keypoint = -1;
    double distance = 0.0;
  };
  std::vector<WindowMatch> match_by_projection(
      const Frame& frame, const std::vector<MapPointId>& points,
      const PoseSE3& pose, double limit, double window_px,
      const std::vector<bool>& taken, int* attempted) const;

  Map& map_;
  CameraIntrinsics cam_;
  TrackerConfig cfg_;

  TrackerMode mode_ = TrackerMode::kNotInitialized;
  MatchThresholds thresholds_;
  PoseSE3 last_pose_;
  PoseSE3 velocity_;
  KeyFrameId reference_kf_ = -1;
  int frames_since_kf_ = 0;
  int last_init_matches_ = 0;
  Frame last_frame_;
};

}  // namespace vslam
