#pragma once

#include <string>
#include <vector>

#include "vslam/geometry.hpp"

namespace vslam {

/// Camera-in-world pose sample.
struct TrajectorySample {
  double timestamp = 0.0;
  PoseSE3 pose_wc;
};

struct Trajectory {
  std::vector<TrajectorySample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  Eigen::Vector3d position(std::size_t i) const {
    return samples[i].pose_wc.translation();
  }
  /// Throws MalformedFile when timestamps are not strictly increasing.
  void validate() const;
};

/// TUM format: "timestamp tx ty tz qx qy qz qw", '#' comments.
Trajectory read_tum_trajectory(const std::string& path);
void write_tum_trajectory(const Trajectory& traj, const std::string& path);

/// KITTI poses: 12 floats per line, row-major 3x4 camera-to-world. The
/// timestamp of line i defaults to i; pass times to override.
Trajectory read_kitti_poses(const std::string& path,
                            const std::vector<double>& times = {});

struct PairedTrajectories {
  std::vector<TrajectorySample> est;
  std::vector<TrajectorySample> gt;
};

/// Greedy nearest-timestamp pairing (best |dt| first, each sample used
/// once), keeping pairs with |dt| <= max_dt. Throws NoOverlap when nothing
/// pairs.
PairedTrajectories associate(const Trajectory& est, const Trajectory& gt,
                             double max_dt);

/// Least-squares similarity mapping estimated positions onto ground truth.
/// Throws DegenerateConfiguration (< 3 pairs or collinear).
SimilaritySim3 align_sim3(const PairedTrajectories& paired);

/// Rigid-only alignment for calibrated-scale experiments.
SimilaritySim3 align_se3(const PairedTrajectories& paired);

/// RMSE of translational residuals under the given alignment.
double ate_rmse_with_alignment(const PairedTrajectories& paired,
                               const SimilaritySim3& alignment);

struct AteResult {
  double rmse = 0.0;
  SimilaritySim3 alignment;
  std::vector<double> residuals;  // per paired sample
};

/// Associate + align (Sim3 by default) + RMSE.
AteResult ate(const Trajectory& est, const Trajectory& gt,
              double max_dt = 0.02, bool se3_alignment = false);

/// KITTI standard evaluation lengths (meters).
std::vector<double> kitti_rpe_lengths();

struct RpeMode {
  enum class Kind { kFixedDelta, kLengthBased };
  Kind kind = Kind::kFixedDelta;
  int delta = 1;                 // frames, for kFixedDelta
  std::vector<double> lengths;   // meters, for kLengthBased

  static RpeMode fixed_delta(int delta) {
    return {Kind::kFixedDelta, delta, {}};
  }
  static RpeMode length_based(std::vector<double> lengths) {
    return {Kind::kLengthBased, 1, std::move(lengths)};
  }
};

struct RpeResult {
  double trans_percent = 0.0;
  double rot_deg_per_m = 0.0;
  bool fell_back_to_fixed_delta = false;
  std::vector<double> per_pair_trans;  // percent
  std::vector<double> per_pair_rot;    // deg per meter
};

/// Relative pose error. LengthBased follows the KITTI recipe: for each
/// ground-truth path length l and each start, the subsequence whose
/// accumulated length is closest to l; E = rel_gt^-1 * rel_est;
/// translation % = |trans(E)| / l * 100, rotation = angle(E) / l in deg/m.
/// When no subsequence reaches the shortest length, falls back to
/// FixedDelta(1) with the flag set.
RpeResult rpe(const Trajectory& est, const Trajectory& gt, const RpeMode& mode,
              double max_dt = 0.02);

struct MetricReport {
  double ate_rmse = 0.0;
  double rpe_trans_percent = 0.0;
  double rpe_rot_deg_per_m = 0.0;
  bool rpe_fell_back = false;
  std::vector<double> ate_residuals;
  std::vector<double> rpe_per_pair_trans;
  std::vector<double> rpe_per_pair_rot;
};

MetricReport compute_metrics(const Trajectory& est, const Trajectory& gt,
                             const RpeMode& mode, double max_dt = 0.02);

/// Writes metrics.csv, trajectory_xy.csv (aligned planar coordinates) and
/// trajectory.svg (two polylines + legend) under out_dir. Throws before
/// touching any file when a trajectory is empty or cannot be paired.
void emit_report(const MetricReport& report, const Trajectory& est,
                 const Trajectory& gt, const std::string& out_dir,
                 double max_dt = 0.02);

}  // namespace vslam
