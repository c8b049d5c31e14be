#pragma once

#include <optional>
#include <vector>

#include "vslam/bow.hpp"
#include "vslam/map.hpp"
#include "vslam/optimize.hpp"

namespace vslam {

struct LoopConfig {
  double min_score = 0.05;      // floor on the BoW score of candidates
  int min_group = 3;            // candidates required in one covisible group
  int min_point_matches = 3;    // below this the candidate is rejected early
  int sim3_min_inliers = 20;    // geometric validation gate
  int ransac_iterations = 200;
  double sim3_reproj_max_px = 5.0;
  std::uint64_t seed = 13;
};

struct LoopCandidate {
  KeyFrameId keyframe = -1;
  double score = 0.0;
};

struct LoopCloseReport {
  int matched_points = 0;
  int sim3_inliers = 0;
  int corrected_keyframes = 0;
  int fused_points = 0;
  SimilaritySim3 correction;  // drifted world -> loop-consistent world
};

/// Loop detection over the keyframe database plus Sim3 correction: matched
/// map points vote for a similarity between the revisited region and the
/// current one; on acceptance the correction propagates through the current
/// neighborhood, duplicates fuse, and a pose graph with the new loop edge
/// distributes the drift.
class LoopCloser {
 public:
  LoopCloser(Map& map, const CameraIntrinsics& cam, const LoopConfig& cfg);

  /// None when no group of >= min_group mutually covisible candidates beats
  /// the covisibility-baseline score.
  std::optional<LoopCandidate> detect_loop(KeyFrameId current,
                                           const KeyFrameDatabase& db) const;

  /// nullopt = Rejected (map untouched). On success the map is corrected and
  /// passes a full audit.
  std::optional<LoopCloseReport> close_loop(const LoopCandidate& candidate,
                                            KeyFrameId current,
                                            const MatchThresholds& th,
                                            const LMConfig& lm);

 private:
  Map& map_;
  CameraIntrinsics cam_;
  LoopConfig cfg_;
};

}  // namespace vslam
