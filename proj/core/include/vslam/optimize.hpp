#pragma once

#include <Eigen/Core>

#include <utility>
#include <vector>

#include "vslam/geometry.hpp"

namespace vslam {

struct LMConfig {
  int max_iters = 30;
  double initial_lambda = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 0.5;
  double lambda_ceiling = 1e12;
  double cost_tolerance = 1e-10;  // relative decrease per accepted step
  double huber_delta = 2.45;      // px, ~ chi2_0.95 for 2 dof
  double outlier_chi2 = 5.991;    // squared-pixel gate for outlier labels

  void validate() const;
};

/// One reprojection residual block.
struct Observation {
  int pose_index = -1;
  int point_index = -1;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

/// Bundle-adjustment problem over world-to-camera poses (6-dof tangents,
/// left-multiplicative updates) and 3-dof points. Gauge comes from fixed
/// blocks: at least one fixed pose, or all points fixed (pose-only).
struct ReprojectionProblem {
  CameraIntrinsics camera;
  std::vector<PoseSE3> poses;
  std::vector<Eigen::Vector3d> points;
  std::vector<Observation> observations;
  std::vector<bool> pose_fixed;
  std::vector<bool> point_fixed;

  void validate() const;
};

struct ResidualJacobian {
  Eigen::Vector2d residual = Eigen::Vector2d::Zero();
  Eigen::Matrix<double, 2, 6> j_pose;   // d residual / d [omega, upsilon]
  Eigen::Matrix<double, 2, 3> j_point;  // d residual / d point
  bool behind = false;
};

/// residual = observed - project(point, pose); Jacobians by chain rule on the
/// left-perturbation SE3 tangent. behind = true deactivates the block.
ResidualJacobian residual_and_jacobian(const PoseSE3& pose_cw,
                                       const Eigen::Vector3d& point,
                                       const Eigen::Vector2d& observed,
                                       const CameraIntrinsics& cam);

struct SolveReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Levenberg-Marquardt with a dense Schur complement over the point blocks.
/// Accepted steps strictly decrease the Huber-robustified cost. Throws
/// SingularSystem when the damped system stays unsolvable at the lambda
/// ceiling. Fixed blocks are never touched.
SolveReport solve_lm(ReprojectionProblem& problem, const LMConfig& cfg);

/// Mean unweighted reprojection error (px) over active residual blocks.
double mean_reprojection_error(const ReprojectionProblem& problem);

struct PoseOnlyAssociation {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

struct PoseOnlyResult {
  PoseSE3 pose;
  std::vector<bool> outlier;  // per association
  int inlier_count = 0;
  double final_cost = 0.0;
};

/// LM over a single pose with the points held fixed. Associations whose
/// squared residual exceeds outlier_chi2 after convergence are labeled
/// outliers and the solve reruns once without them. Throws TooFewMatches
/// for fewer than 6 associations.
PoseOnlyResult optimize_pose_only(const PoseSE3& initial,
                                  const std::vector<PoseOnlyAssociation>& assoc,
                                  const CameraIntrinsics& cam,
                                  const LMConfig& cfg);

/// Closed-form least-squares similarity (centroid alignment, SVD rotation,
/// scale from the variance ratio) mapping first elements onto second:
/// minimizes sum |b - (s R a + t)|^2. Accumulation runs in a canonical
/// order, so the result is exactly permutation invariant. Throws
/// DegenerateConfiguration for < 3 or collinear pairs.
SimilaritySim3 solve_sim3(
    const std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>>& pairs);

/// Relative constraint between two pose-graph nodes:
/// measurement ~ S_j * S_i^{-1}, residual = log(measurement * S_i * S_j^{-1}).
struct PoseGraphEdge {
  int i = -1;
  int j = -1;
  SimilaritySim3 measurement;
};

/// LM over Sim3 tangents (numeric edge Jacobians). Requires a connected
/// graph and >= 1 fixed node; fixed nodes anchor the gauge and are returned
/// unchanged.
std::vector<SimilaritySim3> optimize_pose_graph(
    std::vector<SimilaritySim3> nodes, const std::vector<PoseGraphEdge>& edges,
    const std::vector<bool>& fixed, const LMConfig& cfg);

}  // namespace vslam
