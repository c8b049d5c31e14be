#pragma once

#include <Eigen/Core>

#include <array>
#include <functional>

namespace vslam {

/// Detector score map over a patch; rows index y, columns index x.
using ScoreMap = Eigen::MatrixXd;

enum class PairRelation { kPositive, kNegative };

/// Configuration of the four-branch detector objective. The fourth branch is
/// the non-keypoint patch and carries the negative label.
struct DetectorLossConfig {
  double gamma_balance = 1.0;  // weight of the classification term
  double margin = 4.0;         // hinge margin C for negative descriptor pairs
  std::array<double, 4> alphas{1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 3.0 / 6.0};
  std::array<double, 4> labels{+1.0, +1.0, +1.0, -1.0};
  double beta = 1.0;  // sharpness of the scalar soft maximum

  void validate() const;
};

inline constexpr double kSoftargmaxDefaultBeta = 10.0;

/// Softmax-weighted center of mass of a score map, returned as (x, y).
/// Numerically stabilized by max subtraction; adding a constant to all
/// scores does not change the result.
Eigen::Vector2d softargmax(const ScoreMap& scores, double beta);

struct SoftargmaxGrad {
  Eigen::Vector2d xy;
  ScoreMap dx;  // d x / d s_ij
  ScoreMap dy;  // d y / d s_ij
};
SoftargmaxGrad softargmax_with_grad(const ScoreMap& scores, double beta);

/// Scalar soft maximum log(sum exp(beta * s)) / beta of all map entries.
double soft_maximum(const ScoreMap& scores, double beta);

/// Hinge-based descriptor objective: L2 distance for positive pairs,
/// max(0, margin - distance) for negative pairs.
double descriptor_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                       PairRelation relation, double margin = 4.0);

struct DescriptorLossGrad {
  double value = 0.0;
  Eigen::VectorXd da;
  Eigen::VectorXd db;
};
/// Gradients are valid away from the distance-zero kink and the hinge corner.
DescriptorLossGrad descriptor_loss_with_grad(const Eigen::VectorXd& a,
                                             const Eigen::VectorXd& b,
                                             PairRelation relation,
                                             double margin = 4.0);

/// Orientation objective: L2 distance between the descriptors of two views
/// of the same point after their estimated rotations.
double orientation_loss(const Eigen::VectorXd& d1, const Eigen::VectorXd& d2);

/// Classification term over the four branches:
/// sum_i alpha_i * max(0, 1 - softmax(map_i) * y_i)^2, where softmax is the
/// scalar soft maximum above.
double classification_loss(const std::array<ScoreMap, 4>& maps,
                           const DetectorLossConfig& cfg);

struct ClassificationLossGrad {
  double value = 0.0;
  std::array<ScoreMap, 4> dmaps;
};
ClassificationLossGrad classification_loss_with_grad(
    const std::array<ScoreMap, 4>& maps, const DetectorLossConfig& cfg);

/// Distance between the descriptors evaluated at the softargmax locations of
/// the two keypoint branches.
double pair_loss(const Eigen::VectorXd& d1, const Eigen::VectorXd& d2);

struct PairLossGrad {
  double value = 0.0;
  Eigen::VectorXd d1;
  Eigen::VectorXd d2;
};
PairLossGrad pair_loss_with_grad(const Eigen::VectorXd& d1,
                                 const Eigen::VectorXd& d2);

/// Detector objective: gamma_balance * classification + pair term.
inline double detector_loss(double classification, double pair,
                            double gamma_balance) {
  return gamma_balance * classification + pair;
}

/// Central finite-difference check: evaluates f around x with the given step
/// and returns the maximum elementwise relative error against the analytic
/// gradient. Error is |a - n| / max(1, |a|, |n|).
double max_relative_gradient_error(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, const Eigen::VectorXd& analytic,
    double step = 1e-5);

}  // namespace vslam
