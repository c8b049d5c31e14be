#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace vslam {

/// Pinhole camera without distortion (inputs are assumed pre-rectified).
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx >= 0.0 &&
           cx < width && cy >= 0.0 && cy < height;
  }

  Eigen::Matrix3d k_matrix() const {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
  }

  bool contains(const Eigen::Vector2d& px, double border = 0.0) const {
    return px.x() >= border && px.x() < width - border && px.y() >= border &&
           px.y() < height - border;
  }
};

/// Parses a plain-text calibration config: fx fy cx cy width height, one
/// value per line, '#' starts a comment. Throws MalformedCalib.
CameraIntrinsics read_intrinsics_config(const std::string& path);

/// Rigid-body transform mapping world coordinates into the camera frame.
/// Stored as a unit quaternion plus translation; the quaternion is
/// renormalized after composition so long chains do not drift.
class PoseSE3 {
 public:
  PoseSE3() : q_(Eigen::Quaterniond::Identity()), t_(Eigen::Vector3d::Zero()) {}

  PoseSE3(const Eigen::Quaterniond& q, const Eigen::Vector3d& t)
      : q_(q.normalized()), t_(t) {}

  PoseSE3(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
      : q_(Eigen::Quaterniond(rotation).normalized()), t_(translation) {}

  static PoseSE3 identity() { return PoseSE3(); }

  /// Exponential map from a twist [omega, upsilon] (rotation first).
  static PoseSE3 exp(const Eigen::Matrix<double, 6, 1>& tangent);

  /// Logarithm to the twist [omega, upsilon].
  Eigen::Matrix<double, 6, 1> log() const;

  Eigen::Matrix3d rotation() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& unit_quaternion() const { return q_; }
  const Eigen::Vector3d& translation() const { return t_; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return q_ * p + t_; }

  PoseSE3 inverse() const {
    const Eigen::Quaterniond qi = q_.conjugate();
    return PoseSE3(qi, qi * (-t_));
  }

  /// Composition: (a * b).apply(x) == a.apply(b.apply(x)).
  PoseSE3 operator*(const PoseSE3& rhs) const {
    return PoseSE3(q_ * rhs.q_, q_ * rhs.t_ + t_);
  }

  /// Camera center in world coordinates (for a world-to-camera pose).
  Eigen::Vector3d center() const { return q_.conjugate() * (-t_); }

  Eigen::Matrix<double, 3, 4> matrix34() const {
    Eigen::Matrix<double, 3, 4> m;
    m.leftCols<3>() = rotation();
    m.col(3) = t_;
    return m;
  }

  /// Rotation angle in radians, in [0, pi].
  double rotation_angle() const;

 private:
  Eigen::Quaterniond q_;
  Eigen::Vector3d t_;
};

/// Similarity transform (scale * rotation + translation). With scale = 1 it
/// acts identically to the embedded SE3.
class SimilaritySim3 {
 public:
  SimilaritySim3()
      : scale_(1.0),
        q_(Eigen::Quaterniond::Identity()),
        t_(Eigen::Vector3d::Zero()) {}

  SimilaritySim3(double scale, const Eigen::Quaterniond& q,
                 const Eigen::Vector3d& t)
      : scale_(scale), q_(q.normalized()), t_(t) {}

  SimilaritySim3(double scale, const Eigen::Matrix3d& rotation,
                 const Eigen::Vector3d& translation)
      : scale_(scale),
        q_(Eigen::Quaterniond(rotation).normalized()),
        t_(translation) {}

  static SimilaritySim3 identity() { return SimilaritySim3(); }

  static SimilaritySim3 from_se3(const PoseSE3& pose, double scale = 1.0) {
    return SimilaritySim3(scale, pose.unit_quaternion(), pose.translation());
  }

  /// Exponential map from [omega, upsilon, sigma] (sigma = log scale).
  static SimilaritySim3 exp(const Eigen::Matrix<double, 7, 1>& tangent);

  /// Logarithm to [omega, upsilon, sigma].
  Eigen::Matrix<double, 7, 1> log() const;

  double scale() const { return scale_; }
  Eigen::Matrix3d rotation() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& unit_quaternion() const { return q_; }
  const Eigen::Vector3d& translation() const { return t_; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return scale_ * (q_ * p) + t_;
  }

  SimilaritySim3 inverse() const {
    const Eigen::Quaterniond qi = q_.conjugate();
    return SimilaritySim3(1.0 / scale_, qi, qi * t_ * (-1.0 / scale_));
  }

  SimilaritySim3 operator*(const SimilaritySim3& rhs) const {
    return SimilaritySim3(scale_ * rhs.scale_, q_ * rhs.q_,
                          scale_ * (q_ * rhs.t_) + t_);
  }

  /// SE3 with the scale absorbed into the translation: [R | t/s]. This is the
  /// camera pose consistent with a map whose points were mapped through the
  /// inverse similarity.
  PoseSE3 to_se3_rescaled() const {
    return PoseSE3(q_, t_ / scale_);
  }

 private:
  double scale_;
  Eigen::Quaterniond q_;
  Eigen::Vector3d t_;
};

inline constexpr double kDepthEpsilon = 1e-6;
/// Minimum triangulation parallax: 1 degree.
inline constexpr double kParallaxMinRad = 0.017453292519943295;

/// Projects a world point through a world-to-camera pose. Returns the pixel,
/// or nullopt when the point lies at or behind the camera plane (Behind).
std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& point_world,
                                       const PoseSE3& pose_cw,
                                       const CameraIntrinsics& cam);

/// Angle in [0, pi] between the rays c1->p and c2->p. Coincident centers give
/// zero parallax.
double parallax_angle(const Eigen::Vector3d& p, const Eigen::Vector3d& c1,
                      const Eigen::Vector3d& c2);

/// Linear (DLT) two-view triangulation refined by Gauss-Newton on the
/// reprojection error. Returns nullopt (Degenerate) for insufficient
/// baseline, parallax below kParallaxMinRad, or negative depth in either
/// view.
std::optional<Eigen::Vector3d> triangulate(const Eigen::Vector2d& obs1,
                                           const Eigen::Vector2d& obs2,
                                           const PoseSE3& pose1_cw,
                                           const PoseSE3& pose2_cw,
                                           const CameraIntrinsics& cam);

struct RansacConfig {
  int iterations = 200;
  double epipolar_threshold_px = 1.5;
  int min_inliers = 15;
  std::uint64_t seed = 0;
};

struct TwoViewEstimate {
  /// Pose of the second camera relative to the first (first camera = world),
  /// translation normalized to unit norm.
  PoseSE3 relative_pose;
  std::vector<bool> inlier_mask;
  int inlier_count = 0;
};

/// Two-view relative pose from pixel correspondences: normalized 8-point
/// fundamental matrix inside RANSAC, followed by cheirality disambiguation of
/// the four essential-matrix pose candidates. Returns nullopt (InitFailure)
/// for < 8 matches, too few inliers, ambiguous disambiguation, or
/// parallax-free (pure rotation) geometry.
std::optional<TwoViewEstimate> estimate_two_view(
    const std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>>& matches,
    const CameraIntrinsics& cam, const RansacConfig& cfg);

}  // namespace vslam
