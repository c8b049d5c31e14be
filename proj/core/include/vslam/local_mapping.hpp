#pragma once

#include <vector>

#include "vslam/features.hpp"
#include "vslam/geometry.hpp"
#include "vslam/map.hpp"
#include "vslam/optimize.hpp"

namespace vslam {

struct MappingConfig {
  double reproj_max_px = 2.0;
  double fuse_radius_px = 3.0;
  double epipolar_gate_px = 2.0;
  LMConfig lm;
};

struct MappingReport {
  int new_points = 0;
  int fused_points = 0;
  double ba_initial_cost = 0.0;
  double ba_final_cost = 0.0;
  std::vector<KeyFrameId> culled;
};

/// Keyframe-triggered map growth: triangulation of unmatched features across
/// covisible keyframes, duplicate fusion, local bundle adjustment over the
/// covisibility neighborhood, and keyframe culling. Runs synchronously on
/// the tracking thread under the store's exclusive access.
class LocalMapper {
 public:
  LocalMapper(Map& map, const CameraIntrinsics& cam, const MappingConfig& cfg);

  MappingReport process_keyframe(KeyFrameId kf, const MatchThresholds& th);

  std::vector<MapPointId> triangulate_new_points(
      KeyFrameId kf, const std::vector<KeyFrameId>& neighbors,
      const MatchThresholds& th);

  int fuse_duplicates(KeyFrameId kf, const std::vector<KeyFrameId>& neighbors,
                      const MatchThresholds& th);

  /// Local BA over the keyframe's covisibility neighborhood; observers
  /// outside the neighborhood are held fixed, and the two oldest keyframes
  /// anchor the gauge whenever they participate.
  SolveReport local_bundle_adjustment(KeyFrameId kf);

 private:
  Map& map_;
  CameraIntrinsics cam_;
  MappingConfig cfg_;
};

}  // namespace vslam
