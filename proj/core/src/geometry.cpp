#include "vslam/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "vslam/errors.hpp"

namespace vslam {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

constexpr double kTaylorEps = 1e-4;

Eigen::Quaterniond quat_from_omega(const Eigen::Vector3d& omega) {
  const double theta_sq = omega.squaredNorm();
  const double theta = std::sqrt(theta_sq);
  double w, k;
  if (theta < 1e-8) {
    w = 1.0 - theta_sq / 8.0;
    k = 0.5 - theta_sq / 48.0;
  } else {
    w = std::cos(0.5 * theta);
    k = std::sin(0.5 * theta) / theta;
  }
  return Eigen::Quaterniond(w, k * omega.x(), k * omega.y(), k * omega.z());
}

}  // namespace

CameraIntrinsics read_intrinsics_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedCalib("cannot open calibration config: " + path);
  std::vector<double> values;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    double v;
    if (ls >> v) {
      values.push_back(v);
      if (ls >> v) {
        throw MalformedCalib(path + ":" + std::to_string(lineno) +
                             ": expected one value per line");
      }
    }
  }
  if (values.size() != 6) {
    throw MalformedCalib(path + ": expected 6 values (fx fy cx cy width height), got " +
                         std::to_string(values.size()));
  }
  CameraIntrinsics cam;
  cam.fx = values[0];
  cam.fy = values[1];
  cam.cx = values[2];
  cam.cy = values[3];
  cam.width = static_cast<int>(values[4]);
  cam.height = static_cast<int>(values[5]);
  if (!cam.valid()) throw MalformedCalib(path + ": intrinsics fail validity checks");
  return cam;
}

PoseSE3 PoseSE3::exp(const Eigen::Matrix<double, 6, 1>& tangent) {
  const Eigen::Vector3d omega = tangent.head<3>();
  const Eigen::Vector3d upsilon = tangent.tail<3>();
  const double theta = omega.norm();
  const Eigen::Matrix3d big_omega = skew(omega);

  const Eigen::Quaterniond q = quat_from_omega(omega);
  const double theta_sq = theta * theta;
  double a, b;  // V = I + a*Omega + b*Omega^2
  if (theta < kTaylorEps) {
    a = 0.5 - theta_sq / 24.0;
    b = 1.0 / 6.0 - theta_sq / 120.0;
  } else {
    a = (1.0 - std::cos(theta)) / theta_sq;
    b = (theta - std::sin(theta)) / (theta_sq * theta);
  }
  const Eigen::Matrix3d v = Eigen::Matrix3d::Identity() + a * big_omega +
                            b * big_omega * big_omega;
  return PoseSE3(q, v * upsilon);
}

Eigen::Matrix<double, 6, 1> PoseSE3::log() const {
  const Eigen::AngleAxisd aa(q_);
  const Eigen::Vector3d omega = aa.angle() * aa.axis();
  const double theta = aa.angle();
  const Eigen::Matrix3d big_omega = skew(omega);

  double coef;
  if (theta < kTaylorEps) {
    coef = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const double half = 0.5 * theta;
    coef = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  }
  const Eigen::Matrix3d v_inv = Eigen::Matrix3d::Identity() -
                                0.5 * big_omega +
                                coef * big_omega * big_omega;
  Eigen::Matrix<double, 6, 1> tangent;
  tangent.head<3>() = omega;
  tangent.tail<3>() = v_inv * t_;
  return tangent;
}

double PoseSE3::rotation_angle() const {
  return 2.0 * std::atan2(q_.vec().norm(), std::abs(q_.w()));
}

namespace {

// Left Jacobian-like scaling matrix of the similarity group: the translation
// part of exp([omega, upsilon, sigma]) is W * upsilon.
Eigen::Matrix3d sim3_calc_w(const Eigen::Vector3d& omega, double sigma,
                            double scale) {
  const double theta = omega.norm();
  const double theta_sq = theta * theta;
  const Eigen::Matrix3d big_omega = skew(omega);
  const Eigen::Matrix3d omega_sq = big_omega * big_omega;
  const double c_coef = std::abs(sigma) < 1e-300
                            ? 1.0
                            : std::expm1(sigma) / sigma;
  double a_coef, b_coef;
  if (theta < kTaylorEps) {
    if (std::abs(sigma) < kTaylorEps) {
      a_coef = 0.5 + sigma / 3.0 - theta_sq / 24.0;
      b_coef = 1.0 / 6.0 + sigma / 8.0 - theta_sq / 120.0;
    } else {
      const double sigma_sq = sigma * sigma;
      a_coef = ((sigma - 1.0) * scale + 1.0) / sigma_sq;
      b_coef = ((0.5 * sigma_sq - sigma + 1.0) * scale - 1.0) /
               (sigma_sq * sigma);
    }
  } else {
    const double a = scale * std::sin(theta);
    const double b = scale * std::cos(theta);
    const double c = theta_sq + sigma * sigma;
    a_coef = (a * sigma + (1.0 - b) * theta) / (theta * c);
    b_coef = (c_coef - ((b - 1.0) * sigma + a * theta) / c) / theta_sq;
  }
  return a_coef * big_omega + b_coef * omega_sq +
         c_coef * Eigen::Matrix3d::Identity();
}

}  // namespace

SimilaritySim3 SimilaritySim3::exp(const Eigen::Matrix<double, 7, 1>& tangent) {
  const Eigen::Vector3d omega = tangent.head<3>();
  const Eigen::Vector3d upsilon = tangent.segment<3>(3);
  const double sigma = tangent(6);
  const double scale = std::exp(sigma);
  const Eigen::Quaterniond q = quat_from_omega(omega);
  const Eigen::Matrix3d w = sim3_calc_w(omega, sigma, scale);
  return SimilaritySim3(scale, q, w * upsilon);
}

Eigen::Matrix<double, 7, 1> SimilaritySim3::log() const {
  const double sigma = std::log(scale_);
  const Eigen::AngleAxisd aa(q_);
  const Eigen::Vector3d omega = aa.angle() * aa.axis();
  const Eigen::Matrix3d w = sim3_calc_w(omega, sigma, scale_);
  Eigen::Matrix<double, 7, 1> tangent;
  tangent.head<3>() = omega;
  tangent.segment<3>(3) = w.partialPivLu().solve(t_);
  tangent(6) = sigma;
  return tangent;
}

std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& point_world,
                                       const PoseSE3& pose_cw,
                                       const CameraIntrinsics& cam) {
  const Eigen::Vector3d pc = pose_cw.apply(point_world);
  if (pc.z() <= kDepthEpsilon) return std::nullopt;
  return Eigen::Vector2d(cam.fx * pc.x() / pc.z() + cam.cx,
                         cam.fy * pc.y() / pc.z() + cam.cy);
}

double parallax_angle(const Eigen::Vector3d& p, const Eigen::Vector3d& c1,
                      const Eigen::Vector3d& c2) {
  const Eigen::Vector3d d1 = p - c1;
  const Eigen::Vector3d d2 = p - c2;
  const double n1 = d1.norm();
  const double n2 = d2.norm();
  if (n1 < 1e-15 || n2 < 1e-15) return 0.0;
  return std::atan2(d1.cross(d2).norm(), d1.dot(d2));
}

namespace {

Eigen::Vector3d dlt_triangulate(const Eigen::Vector2d& x1,
                                const Eigen::Vector2d& x2,
                                const Eigen::Matrix<double, 3, 4>& p1,
                                const Eigen::Matrix<double, 3, 4>& p2,
                                bool* at_infinity) {
  Eigen::Matrix4d a;
  a.row(0) = x1.x() * p1.row(2) - p1.row(0);
  a.row(1) = x1.y() * p1.row(2) - p1.row(1);
  a.row(2) = x2.x() * p2.row(2) - p2.row(0);
  a.row(3) = x2.y() * p2.row(2) - p2.row(1);
  const Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d xh = svd.matrixV().col(3);
  if (at_infinity) *at_infinity = std::abs(xh(3)) < 1e-12 * xh.head<3>().norm();
  if (std::abs(xh(3)) < 1e-300) return Eigen::Vector3d::Zero();
  return xh.head<3>() / xh(3);
}

// A couple of Gauss-Newton steps on the two-view reprojection error.
Eigen::Vector3d refine_point(const Eigen::Vector3d& initial,
                             const Eigen::Vector2d& x1,
                             const Eigen::Vector2d& x2, const PoseSE3& pose1,
                             const PoseSE3& pose2,
                             const CameraIntrinsics& cam) {
  Eigen::Vector3d p = initial;
  const PoseSE3* poses[2] = {&pose1, &pose2};
  const Eigen::Vector2d* obs[2] = {&x1, &x2};
  for (int iter = 0; iter < 10; ++iter) {
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    double cost = 0.0;
    bool ok = true;
    for (int v = 0; v < 2; ++v) {
      const Eigen::Vector3d pc = poses[v]->apply(p);
      if (pc.z() <= kDepthEpsilon) {
        ok = false;
        break;
      }
      const double iz = 1.0 / pc.z();
      const Eigen::Vector2d proj(cam.fx * pc.x() * iz + cam.cx,
                                 cam.fy * pc.y() * iz + cam.cy);
      const Eigen::Vector2d r = *obs[v] - proj;
      cost += r.squaredNorm();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << cam.fx * iz, 0.0, -cam.fx * pc.x() * iz * iz, 0.0, cam.fy * iz,
          -cam.fy * pc.y() * iz * iz;
      const Eigen::Matrix<double, 2, 3> j = -dproj * poses[v]->rotation();
      h += j.transpose() * j;
      g += -j.transpose() * r;
    }
    if (!ok) break;
    const Eigen::Vector3d step = h.ldlt().solve(g);
    if (!step.allFinite()) break;
    p += step;
    if (step.norm() < 1e-14 || cost < 1e-28) break;
  }
  return p;
}

}  // namespace

std::optional<Eigen::Vector3d> triangulate(const Eigen::Vector2d& obs1,
                                           const Eigen::Vector2d& obs2,
                                           const PoseSE3& pose1_cw,
                                           const PoseSE3& pose2_cw,
                                           const CameraIntrinsics& cam) {
  const Eigen::Vector3d c1 = pose1_cw.center();
  const Eigen::Vector3d c2 = pose2_cw.center();
  if ((c1 - c2).norm() < 1e-9) return std::nullopt;

  const Eigen::Matrix3d k = cam.k_matrix();
  bool at_infinity = false;
  Eigen::Vector3d p = dlt_triangulate(obs1, obs2, k * pose1_cw.matrix34(),
                                      k * pose2_cw.matrix34(), &at_infinity);
  if (at_infinity) return std::nullopt;
  p = refine_point(p, obs1, obs2, pose1_cw, pose2_cw, cam);

  if (pose1_cw.apply(p).z() <= kDepthEpsilon ||
      pose2_cw.apply(p).z() <= kDepthEpsilon) {
    return std::nullopt;
  }
  if (parallax_angle(p, c1, c2) < kParallaxMinRad) return std::nullopt;
  return p;
}

namespace {

struct Normalization {
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  std::vector<Eigen::Vector2d> points;
};

Normalization normalize_points(const std::vector<Eigen::Vector2d>& pts) {
  Normalization out;
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  out.t << s, 0, -s * centroid.x(), 0, s, -s * centroid.y(), 0, 0, 1;
  out.points.reserve(pts.size());
  for (const auto& p : pts) out.points.emplace_back(s * (p - centroid));
  return out;
}

Eigen::Matrix3d eight_point(const std::vector<Eigen::Vector2d>& x1,
                            const std::vector<Eigen::Vector2d>& x2,
                            const std::vector<int>& idx) {
  Eigen::MatrixXd a(idx.size(), 9);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Eigen::Vector2d& p1 = x1[idx[r]];
    const Eigen::Vector2d& p2 = x2[idx[r]];
    a.row(r) << p2.x() * p1.x(), p2.x() * p1.y(), p2.x(), p2.y() * p1.x(),
        p2.y() * p1.y(), p2.y(), p1.x(), p1.y(), 1.0;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> f = svd.matrixV().col(8);
  Eigen::Matrix3d fm;
  fm << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);
  // Enforce rank 2.
  Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(
      fm, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sv = fsvd.singularValues();
  sv(2) = 0.0;
  return fsvd.matrixU() * sv.asDiagonal() * fsvd.matrixV().transpose();
}

double sampson_error(const Eigen::Matrix3d& f, const Eigen::Vector2d& p1,
                     const Eigen::Vector2d& p2) {
  const Eigen::Vector3d x1(p1.x(), p1.y(), 1.0);
  const Eigen::Vector3d x2(p2.x(), p2.y(), 1.0);
  const Eigen::Vector3d fx1 = f * x1;
  const Eigen::Vector3d ftx2 = f.transpose() * x2;
  const double num = x2.dot(fx1);
  const double den = fx1.head<2>().squaredNorm() + ftx2.head<2>().squaredNorm();
  if (den < 1e-30) return std::numeric_limits<double>::max();
  return num * num / den;
}

struct CandidateScore {
  int good = 0;
};

CandidateScore score_pose_candidate(
    const Eigen::Matrix3d& r, const Eigen::Vector3d& t,
    const std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>>& matches,
    const std::vector<bool>& mask, const CameraIntrinsics& cam,
    double reproj_threshold_px) {
  const PoseSE3 pose1 = PoseSE3::identity();
  const PoseSE3 pose2(r, t);
  const Eigen::Matrix3d k = cam.k_matrix();
  const Eigen::Matrix<double, 3, 4> p1 = k * pose1.matrix34();
  const Eigen::Matrix<double, 3, 4> p2 = k * pose2.matrix34();
  const Eigen::Vector3d c1 = pose1.center();
  const Eigen::Vector3d c2 = pose2.center();
  const double thresh_sq = reproj_threshold_px * reproj_threshold_px;

  CandidateScore score;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (!mask[i]) continue;
    bool at_infinity = false;
    const Eigen::Vector3d p =
        dlt_triangulate(matches[i].first, matches[i].second, p1, p2,
                        &at_infinity);
    if (at_infinity) continue;
    const Eigen::Vector3d pc1 = pose1.apply(p);
    const Eigen::Vector3d pc2 = pose2.apply(p);
    if (pc1.z() <= kDepthEpsilon || pc2.z() <= kDepthEpsilon) continue;
    if (parallax_angle(p, c1, c2) < kParallaxMinRad) continue;
    const auto proj1 = project(p, pose1, cam);
    const auto proj2 = project(p, pose2, cam);
    if (!proj1 || !proj2) continue;
    if ((*proj1 - matches[i].first).squaredNorm() > thresh_sq) continue;
    if ((*proj2 - matches[i].second).squaredNorm() > thresh_sq) continue;
    ++score.good;
  }
  return score;
}

}  // namespace

std::optional<TwoViewEstimate> estimate_two_view(
    const std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>>& matches,
    const CameraIntrinsics& cam, const RansacConfig& cfg) {
  const int n = static_cast<int>(matches.size());
  if (n < 8) return std::nullopt;

  std::vector<Eigen::Vector2d> pts1, pts2;
  pts1.reserve(n);
  pts2.reserve(n);
  for (const auto& m : matches) {
    pts1.push_back(m.first);
    pts2.push_back(m.second);
  }
  const Normalization n1 = normalize_points(pts1);
  const Normalization n2 = normalize_points(pts2);

  const double thresh_sq =
      cfg.epipolar_threshold_px * cfg.epipolar_threshold_px;

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  std::vector<bool> best_mask;
  int best_count = -1;
  Eigen::Matrix3d best_f = Eigen::Matrix3d::Zero();

  std::vector<int> sample(8);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    // Partial Fisher-Yates draw of 8 distinct indices.
    for (int k = 0; k < 8; ++k) {
      std::uniform_int_distribution<int> dist(k, n - 1);
      std::swap(order[k], order[dist(rng)]);
      sample[k] = order[k];
    }
    const Eigen::Matrix3d f_norm = eight_point(n1.points, n2.points, sample);
    const Eigen::Matrix3d f = n2.t.transpose() * f_norm * n1.t;

    int count = 0;
    std::vector<bool> mask(n, false);
    for (int i = 0; i < n; ++i) {
      if (sampson_error(f, pts1[i], pts2[i]) <= thresh_sq) {
        mask[i] = true;
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best_mask = std::move(mask);
      best_f = f;
    }
  }

  if (best_count < std::max(8, cfg.min_inliers)) return std::nullopt;

  // Least-squares refit on all inliers, then refresh the mask.
  std::vector<int> inlier_idx;
  for (int i = 0; i < n; ++i) {
    if (best_mask[i]) inlier_idx.push_back(i);
  }
  const Eigen::Matrix3d f_refit_norm =
      eight_point(n1.points, n2.points, inlier_idx);
  const Eigen::Matrix3d f = n2.t.transpose() * f_refit_norm * n1.t;
  int count = 0;
  std::vector<bool> mask(n, false);
  for (int i = 0; i < n; ++i) {
    if (sampson_error(f, pts1[i], pts2[i]) <= thresh_sq) {
      mask[i] = true;
      ++count;
    }
  }
  if (count < std::max(8, cfg.min_inliers)) return std::nullopt;

  // Essential matrix and its four pose candidates.
  const Eigen::Matrix3d k = cam.k_matrix();
  const Eigen::Matrix3d e = k.transpose() * f * k;
  Eigen::JacobiSVD<Eigen::Matrix3d> esvd(
      e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = esvd.matrixU();
  Eigen::Matrix3d v = esvd.matrixV();
  if (u.determinant() < 0) u = -u;
  if (v.determinant() < 0) v = -v;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d r1 = u * w * v.transpose();
  const Eigen::Matrix3d r2 = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2).normalized();

  struct Candidate {
    Eigen::Matrix3d r;
    Eigen::Vector3d t;
  };
  const Candidate candidates[4] = {{r1, t}, {r1, -t}, {r2, t}, {r2, -t}};

  const double reproj_thresh = 4.0 * cfg.epipolar_threshold_px;
  int best_cand = -1;
  int best_good = -1;
  int runners_up = 0;
  int goods[4];
  for (int c = 0; c < 4; ++c) {
    goods[c] = score_pose_candidate(candidates[c].r, candidates[c].t, matches,
                                    mask, cam, reproj_thresh)
                   .good;
    if (goods[c] > best_good) {
      best_good = goods[c];
      best_cand = c;
    }
  }
  for (int c = 0; c < 4; ++c) {
    if (c != best_cand && goods[c] > 0.75 * best_good) ++runners_up;
  }

  // Pure rotation / planar-degenerate scenes land here: no candidate
  // accumulates parallax-consistent points, or several tie.
  if (best_good < cfg.min_inliers || runners_up > 0) return std::nullopt;

  TwoViewEstimate out;
  out.relative_pose = PoseSE3(candidates[best_cand].r, candidates[best_cand].t);
  out.inlier_mask = std::move(mask);
  out.inlier_count = count;
  return out;
}

}  // namespace vslam
