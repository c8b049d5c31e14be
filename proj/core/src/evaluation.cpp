#include "vslam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vslam/errors.hpp"
#include "vslam/optimize.hpp"

namespace vslam {

void Trajectory::validate() const {
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].timestamp > samples[i - 1].timestamp)) {
      throw MalformedFile("trajectory timestamps not strictly increasing at "
                          "sample " +
                          std::to_string(i));
    }
  }
}

Trajectory read_tum_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory: " + path);
  Trajectory traj;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> t)) continue;  // blank line
    if (!(ls >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw MalformedFile(path + ":" + std::to_string(lineno) +
                          ": expected 't tx ty tz qx qy qz qw'");
    }
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    if (std::abs(q.norm() - 1.0) > 1e-3) {
      throw MalformedFile(path + ":" + std::to_string(lineno) +
                          ": quaternion norm deviates from 1 beyond 1e-3");
    }
    traj.samples.push_back({t, PoseSE3(q, Eigen::Vector3d(tx, ty, tz))});
  }
  traj.validate();
  return traj;
}

void write_tum_trajectory(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trajectory: " + path);
  out << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[256];
  for (const TrajectorySample& s : traj.samples) {
    const Eigen::Vector3d& t = s.pose_wc.translation();
    const Eigen::Quaterniond& q = s.pose_wc.unit_quaternion();
    std::snprintf(buf, sizeof(buf),
                  "%.9f %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  s.timestamp, t.x(), t.y(), t.z(), q.x(), q.y(), q.z(),
                  q.w());
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

Trajectory read_kitti_poses(const std::string& path,
                            const std::vector<double>& times) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open poses: " + path);
  Trajectory traj;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    double v[12];
    bool any = false;
    for (int k = 0; k < 12; ++k) {
      if (!(ls >> v[k])) {
        if (k == 0) break;
        throw MalformedFile(path + ":" + std::to_string(lineno + 1) +
                            ": expected 12 floats per pose line");
      }
      any = true;
    }
    if (!any) continue;
    Eigen::Matrix3d r;
    r << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    const Eigen::Vector3d t(v[3], v[7], v[11]);
    const double timestamp = lineno < static_cast<int>(times.size())
                                 ? times[lineno]
                                 : static_cast<double>(lineno);
    traj.samples.push_back({timestamp, PoseSE3(r, t)});
    ++lineno;
  }
  traj.validate();
  return traj;
}

PairedTrajectories associate(const Trajectory& est, const Trajectory& gt,
                             double max_dt) {
  if (est.empty() || gt.empty()) {
    throw NoOverlap("cannot associate an empty trajectory");
  }
  struct Candidate {
    double dt;
    std::size_t ei, gi;
  };
  std::vector<Candidate> candidates;
  for (std::size_t e = 0; e < est.size(); ++e) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double dt =
          std::abs(est.samples[e].timestamp - gt.samples[g].timestamp);
      if (dt <= max_dt) candidates.push_back({dt, e, g});
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              if (a.dt != b.dt) return a.dt < b.dt;
              if (a.ei != b.ei) return a.ei < b.ei;
              return a.gi < b.gi;
            });
  std::vector<bool> est_used(est.size(), false), gt_used(gt.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> chosen;
  for (const Candidate& c : candidates) {
    if (est_used[c.ei] || gt_used[c.gi]) continue;
    est_used[c.ei] = true;
    gt_used[c.gi] = true;
    chosen.push_back({c.ei, c.gi});
  }
  if (chosen.empty()) {
    throw NoOverlap("no timestamp pairs within max_dt");
  }
  std::sort(chosen.begin(), chosen.end());
  PairedTrajectories out;
  for (const auto& [e, g] : chosen) {
    out.est.push_back(est.samples[e]);
    out.gt.push_back(gt.samples[g]);
  }
  return out;
}

SimilaritySim3 align_sim3(const PairedTrajectories& paired) {
  std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> pairs;
  pairs.reserve(paired.est.size());
  for (std::size_t i = 0; i < paired.est.size(); ++i) {
    pairs.emplace_back(paired.est[i].pose_wc.translation(),
                       paired.gt[i].pose_wc.translation());
  }
  return solve_sim3(pairs);
}

SimilaritySim3 align_se3(const PairedTrajectories& paired) {
  const SimilaritySim3 sim = align_sim3(paired);
  // Re-derive the rigid translation with the scale pinned at 1.
  Eigen::Vector3d mean_a = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_b = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < paired.est.size(); ++i) {
    mean_a += paired.est[i].pose_wc.translation();
    mean_b += paired.gt[i].pose_wc.translation();
  }
  mean_a /= static_cast<double>(paired.est.size());
  mean_b /= static_cast<double>(paired.est.size());
  const Eigen::Matrix3d r = sim.rotation();
  return SimilaritySim3(1.0, r, mean_b - r * mean_a);
}

double ate_rmse_with_alignment(const PairedTrajectories& paired,
                               const SimilaritySim3& alignment) {
  double sum = 0.0;
  for (std::size_t i = 0; i < paired.est.size(); ++i) {
    sum += (paired.gt[i].pose_wc.translation() -
            alignment.apply(paired.est[i].pose_wc.translation()))
               .squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(paired.est.size()));
}

AteResult ate(const Trajectory& est, const Trajectory& gt, double max_dt,
              bool se3_alignment) {
  const PairedTrajectories paired = associate(est, gt, max_dt);
  AteResult out;
  out.alignment = se3_alignment ? align_se3(paired) : align_sim3(paired);
  double sum = 0.0;
  out.residuals.reserve(paired.est.size());
  for (std::size_t i = 0; i < paired.est.size(); ++i) {
    const double r = (paired.gt[i].pose_wc.translation() -
                      out.alignment.apply(paired.est[i].pose_wc.translation()))
                         .norm();
    out.residuals.push_back(r);
    sum += r * r;
  }
  out.rmse = std::sqrt(sum / static_cast<double>(paired.est.size()));
  return out;
}

std::vector<double> kitti_rpe_lengths() {
  return {100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0};
}

namespace {

struct RelativeError {
  double trans = 0.0;    // meters
  double rot_deg = 0.0;  // degrees
};

RelativeError relative_error(const PairedTrajectories& p, std::size_t i,
                             std::size_t j) {
  const PoseSE3 rel_gt = p.gt[i].pose_wc.inverse() * p.gt[j].pose_wc;
  const PoseSE3 rel_est = p.est[i].pose_wc.inverse() * p.est[j].pose_wc;
  const PoseSE3 err = rel_gt.inverse() * rel_est;
  return {err.translation().norm(), err.rotation_angle() * 180.0 / M_PI};
}

}  // namespace

RpeResult rpe(const Trajectory& est, const Trajectory& gt, const RpeMode& mode,
              double max_dt) {
  const PairedTrajectories paired = associate(est, gt, max_dt);
  const std::size_t n = paired.est.size();
  RpeResult out;

  // Accumulated ground-truth path length.
  std::vector<double> cum(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    cum[i] = cum[i - 1] + (paired.gt[i].pose_wc.translation() -
                           paired.gt[i - 1].pose_wc.translation())
                              .norm();
  }

  auto run_fixed_delta = [&](int delta) {
    for (std::size_t i = 0; i + delta < n; ++i) {
      const std::size_t j = i + delta;
      const double seg = cum[j] - cum[i];
      if (seg < 1e-9) continue;
      const RelativeError e = relative_error(paired, i, j);
      out.per_pair_trans.push_back(e.trans / seg * 100.0);
      out.per_pair_rot.push_back(e.rot_deg / seg);
    }
  };

  if (mode.kind == RpeMode::Kind::kFixedDelta) {
    run_fixed_delta(std::max(1, mode.delta));
  } else {
    if (mode.lengths.empty()) {
      throw std::invalid_argument("length-based RPE needs lengths");
    }
    const double min_len =
        *std::min_element(mode.lengths.begin(), mode.lengths.end());
    if (cum.back() < min_len) {
      out.fell_back_to_fixed_delta = true;
      run_fixed_delta(1);
    } else {
      for (double len : mode.lengths) {
        for (std::size_t s = 0; s + 1 < n; ++s) {
          if (cum.back() - cum[s] < len) break;
          // End index whose accumulated length from s is closest to len.
          const double target = cum[s] + len;
          const auto it = std::lower_bound(cum.begin() + s + 1, cum.end(),
                                           target);
          std::size_t e = static_cast<std::size_t>(it - cum.begin());
          if (e >= n) e = n - 1;
          if (e > s + 1 &&
              std::abs(cum[e - 1] - target) <= std::abs(cum[e] - target)) {
            --e;
          }
          if (e <= s) continue;
          const RelativeError err = relative_error(paired, s, e);
          out.per_pair_trans.push_back(err.trans / len * 100.0);
          out.per_pair_rot.push_back(err.rot_deg / len);
        }
      }
      if (out.per_pair_trans.empty()) {
        out.fell_back_to_fixed_delta = true;
        run_fixed_delta(1);
      }
    }
  }

  if (!out.per_pair_trans.empty()) {
    out.trans_percent =
        std::accumulate(out.per_pair_trans.begin(), out.per_pair_trans.end(),
                        0.0) /
        static_cast<double>(out.per_pair_trans.size());
    out.rot_deg_per_m =
        std::accumulate(out.per_pair_rot.begin(), out.per_pair_rot.end(),
                        0.0) /
        static_cast<double>(out.per_pair_rot.size());
  }
  return out;
}

MetricReport compute_metrics(const Trajectory& est, const Trajectory& gt,
                             const RpeMode& mode, double max_dt) {
  MetricReport report;
  const AteResult a = ate(est, gt, max_dt);
  report.ate_rmse = a.rmse;
  report.ate_residuals = a.residuals;
  // Monocular estimates carry an arbitrary gauge scale; relative motions are
  // compared after applying the aligned scale to the estimate.
  Trajectory est_scaled = est;
  const double s = a.alignment.scale();
  for (TrajectorySample& sample : est_scaled.samples) {
    sample.pose_wc = PoseSE3(sample.pose_wc.unit_quaternion(),
                             s * sample.pose_wc.translation());
  }
  const RpeResult r = rpe(est_scaled, gt, mode, max_dt);
  report.rpe_trans_percent = r.trans_percent;
  report.rpe_rot_deg_per_m = r.rot_deg_per_m;
  report.rpe_fell_back = r.fell_back_to_fixed_delta;
  report.rpe_per_pair_trans = r.per_pair_trans;
  report.rpe_per_pair_rot = r.per_pair_rot;
  return report;
}

void emit_report(const MetricReport& report, const Trajectory& est,
                 const Trajectory& gt, const std::string& out_dir,
                 double max_dt) {
  // Validate everything before the first write so failures leave no partial
  // outputs.
  if (est.empty() || gt.empty()) {
    throw std::invalid_argument("emit_report: empty trajectory");
  }
  const PairedTrajectories paired = associate(est, gt, max_dt);
  const SimilaritySim3 alignment = align_sim3(paired);
  std::filesystem::create_directories(out_dir);

  {
    std::ofstream out(out_dir + "/metrics.csv");
    if (!out) throw IoError("cannot write metrics.csv under " + out_dir);
    char buf[96];
    out << "metric,value\n";
    std::snprintf(buf, sizeof(buf), "ate_rmse_m,%.17g\n", report.ate_rmse);
    out << buf;
    std::snprintf(buf, sizeof(buf), "rpe_trans_percent,%.17g\n",
                  report.rpe_trans_percent);
    out << buf;
    std::snprintf(buf, sizeof(buf), "rpe_rot_deg_per_m,%.17g\n",
                  report.rpe_rot_deg_per_m);
    out << buf;
    out << "rpe_fell_back_to_fixed_delta," << (report.rpe_fell_back ? 1 : 0)
        << "\n";
  }

  // Plot plane: the two ground-truth axes with the largest variance.
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& s : paired.gt) mean += s.pose_wc.translation();
  mean /= static_cast<double>(paired.gt.size());
  Eigen::Vector3d var = Eigen::Vector3d::Zero();
  for (const auto& s : paired.gt) {
    const Eigen::Vector3d d = s.pose_wc.translation() - mean;
    var += d.cwiseProduct(d);
  }
  int axis_a = 0, axis_b = 1;
  {
    std::vector<int> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return var(x) > var(y); });
    axis_a = std::min(order[0], order[1]);
    axis_b = std::max(order[0], order[1]);
  }
  static const char* kAxisNames[3] = {"x", "y", "z"};

  {
    std::ofstream out(out_dir + "/trajectory_xy.csv");
    if (!out) throw IoError("cannot write trajectory_xy.csv under " + out_dir);
    out << "timestamp,est_" << kAxisNames[axis_a] << ",est_"
        << kAxisNames[axis_b] << ",gt_" << kAxisNames[axis_a] << ",gt_"
        << kAxisNames[axis_b] << "\n";
    char buf[200];
    for (std::size_t i = 0; i < paired.est.size(); ++i) {
      const Eigen::Vector3d e =
          alignment.apply(paired.est[i].pose_wc.translation());
      const Eigen::Vector3d g = paired.gt[i].pose_wc.translation();
      std::snprintf(buf, sizeof(buf), "%.9f,%.17g,%.17g,%.17g,%.17g\n",
                    paired.est[i].timestamp, e(axis_a), e(axis_b), g(axis_a),
                    g(axis_b));
      out << buf;
    }
  }

  {
    // Bounds over both polylines.
    double lo_a = 1e300, hi_a = -1e300, lo_b = 1e300, hi_b = -1e300;
    auto stretch = [&](const Eigen::Vector3d& p) {
      lo_a = std::min(lo_a, p(axis_a));
      hi_a = std::max(hi_a, p(axis_a));
      lo_b = std::min(lo_b, p(axis_b));
      hi_b = std::max(hi_b, p(axis_b));
    };
    for (std::size_t i = 0; i < paired.est.size(); ++i) {
      stretch(alignment.apply(paired.est[i].pose_wc.translation()));
      stretch(paired.gt[i].pose_wc.translation());
    }
    const double span_a = std::max(hi_a - lo_a, 1e-9);
    const double span_b = std::max(hi_b - lo_b, 1e-9);
    const double width = 800.0, height = 600.0, margin = 40.0;
    auto to_px = [&](const Eigen::Vector3d& p) {
      const double x =
          margin + (p(axis_a) - lo_a) / span_a * (width - 2 * margin);
      const double y =
          height - margin - (p(axis_b) - lo_b) / span_b * (height - 2 * margin);
      return std::make_pair(x, y);
    };
    std::ofstream out(out_dir + "/trajectory.svg");
    if (!out) throw IoError("cannot write trajectory.svg under " + out_dir);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
        << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
        << height << "\">\n";
    auto polyline = [&](const char* color, bool use_est) {
      out << "  <polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < paired.est.size(); ++i) {
        const Eigen::Vector3d p =
            use_est ? alignment.apply(paired.est[i].pose_wc.translation())
                    : paired.gt[i].pose_wc.translation();
      const auto [x, y] = to_px(p);
        out << x << "," << y << (i + 1 < paired.est.size() ? " " : "");
      }
      out << "\"/>\n";
    };
    polyline("#1f77b4", true);
    polyline("#555555", false);
    out << "  <text x=\"" << margin << "\" y=\"20\" fill=\"#1f77b4\">"
        << "estimate (aligned)</text>\n";
    out << "  <text x=\"" << margin + 180 << "\" y=\"20\" fill=\"#555555\">"
        << "ground truth</text>\n";
    out << "</svg>\n";
  }
}

}  // namespace vslam
