#include "vslam/optimize.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <queue>

#include "vslam/errors.hpp"

namespace vslam {

void LMConfig::validate() const {
  if (max_iters <= 0 || initial_lambda <= 0.0 || lambda_up <= 1.0 ||
      lambda_down <= 0.0 || lambda_down >= 1.0 || cost_tolerance < 0.0 ||
      huber_delta <= 0.0 || lambda_ceiling <= initial_lambda) {
    throw std::invalid_argument("invalid LM configuration");
  }
}

void ReprojectionProblem::validate() const {
  if (!camera.valid()) throw std::invalid_argument("invalid camera");
  if (pose_fixed.size() != poses.size() ||
      point_fixed.size() != points.size()) {
    throw std::invalid_argument("fixed masks must match block counts");
  }
  for (const Observation& obs : observations) {
    if (obs.pose_index < 0 ||
        obs.pose_index >= static_cast<int>(poses.size()) ||
        obs.point_index < 0 ||
        obs.point_index >= static_cast<int>(points.size())) {
      throw std::invalid_argument("observation references a missing block");
    }
  }
  const bool any_fixed_pose =
      std::any_of(pose_fixed.begin(), pose_fixed.end(), [](bool b) { return b; });
  const bool all_points_fixed =
      std::all_of(point_fixed.begin(), point_fixed.end(),
                  [](bool b) { return b; });
  if (!any_fixed_pose && !all_points_fixed) {
    throw std::invalid_argument("gauge: need a fixed pose or all points fixed");
  }
}

ResidualJacobian residual_and_jacobian(const PoseSE3& pose_cw,
                                       const Eigen::Vector3d& point,
                                       const Eigen::Vector2d& observed,
                                       const CameraIntrinsics& cam) {
  ResidualJacobian out;
  const Eigen::Vector3d q = pose_cw.apply(point);
  if (q.z() <= kDepthEpsilon) {
    out.behind = true;
    return out;
  }
  const double iz = 1.0 / q.z();
  const double iz2 = iz * iz;
  out.residual.x() = observed.x() - (cam.fx * q.x() * iz + cam.cx);
  out.residual.y() = observed.y() - (cam.fy * q.y() * iz + cam.cy);

  Eigen::Matrix<double, 2, 3> dproj;
  dproj << cam.fx * iz, 0.0, -cam.fx * q.x() * iz2, 0.0, cam.fy * iz,
      -cam.fy * q.y() * iz2;

  // q(delta) = exp(delta) (R p + t): d q / d omega = -[q]x, d q / d ups = I.
  Eigen::Matrix3d neg_skew_q;
  neg_skew_q << 0, q.z(), -q.y(), -q.z(), 0, q.x(), q.y(), -q.x(), 0;
  out.j_pose.leftCols<3>() = -dproj * neg_skew_q;
  out.j_pose.rightCols<3>() = -dproj;
  out.j_point = -dproj * pose_cw.rotation();
  return out;
}

namespace {

// Huber: cost rho(|r|^2) and the IRLS weight rho'(|r|^2).
std::pair<double, double> huber(double squared, double delta) {
  const double d2 = delta * delta;
  if (squared <= d2) return {squared, 1.0};
  const double s = std::sqrt(squared);
  return {2.0 * delta * s - d2, delta / s};
}

double robust_cost(const ReprojectionProblem& pb, const LMConfig& cfg) {
  double cost = 0.0;
  for (const Observation& obs : pb.observations) {
    const Eigen::Vector3d q = pb.poses[obs.pose_index].apply(
        pb.points[obs.point_index]);
    if (q.z() <= kDepthEpsilon) continue;  // block deactivated
    const double iz = 1.0 / q.z();
    const Eigen::Vector2d proj(pb.camera.fx * q.x() * iz + pb.camera.cx,
                               pb.camera.fy * q.y() * iz + pb.camera.cy);
    cost += huber((obs.pixel - proj).squaredNorm(), cfg.huber_delta).first;
  }
  return cost;
}

}  // namespace

double mean_reprojection_error(const ReprojectionProblem& pb) {
  double sum = 0.0;
  int active = 0;
  for (const Observation& obs : pb.observations) {
    const Eigen::Vector3d q =
        pb.poses[obs.pose_index].apply(pb.points[obs.point_index]);
    if (q.z() <= kDepthEpsilon) continue;
    const double iz = 1.0 / q.z();
    const Eigen::Vector2d proj(pb.camera.fx * q.x() * iz + pb.camera.cx,
                               pb.camera.fy * q.y() * iz + pb.camera.cy);
    sum += (obs.pixel - proj).norm();
    ++active;
  }
  return active == 0 ? 0.0 : sum / active;
}

SolveReport solve_lm(ReprojectionProblem& pb, const LMConfig& cfg) {
  cfg.validate();
  pb.validate();

  // Free-block index maps.
  std::vector<int> pose_idx(pb.poses.size(), -1);
  std::vector<int> point_idx(pb.points.size(), -1);
  int n_pose = 0, n_point = 0;
  for (std::size_t i = 0; i < pb.poses.size(); ++i) {
    if (!pb.pose_fixed[i]) pose_idx[i] = n_pose++;
  }
  for (std::size_t i = 0; i < pb.points.size(); ++i) {
    if (!pb.point_fixed[i]) point_idx[i] = n_point++;
  }

  SolveReport report;
  double cost = robust_cost(pb, cfg);
  report.initial_cost = cost;
  report.final_cost = cost;
  if (n_pose == 0 && n_point == 0) {
    report.converged = true;
    return report;
  }

  double lambda = cfg.initial_lambda;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    // Accumulate the normal equations at the current state.
    Eigen::MatrixXd h_pp = Eigen::MatrixXd::Zero(6 * n_pose, 6 * n_pose);
    Eigen::VectorXd g_p = Eigen::VectorXd::Zero(6 * n_pose);
    std::vector<Eigen::Matrix3d> h_ll(
        n_point, Eigen::Matrix3d::Zero());
    std::vector<Eigen::Vector3d> g_l(n_point, Eigen::Vector3d::Zero());
    // Off-diagonal pose-point blocks grouped per point.
    std::vector<std::map<int, Eigen::Matrix<double, 6, 3>>> w_blocks(n_point);

    double grad_inf = 0.0;
    for (const Observation& obs : pb.observations) {
      const int pi = pose_idx[obs.pose_index];
      const int li = point_idx[obs.point_index];
      if (pi < 0 && li < 0) continue;
      const ResidualJacobian rj = residual_and_jacobian(
          pb.poses[obs.pose_index], pb.points[obs.point_index], obs.pixel,
          pb.camera);
      if (rj.behind) continue;
      const double w = huber(rj.residual.squaredNorm(), cfg.huber_delta).second;
      if (pi >= 0) {
        h_pp.block<6, 6>(6 * pi, 6 * pi) +=
            w * rj.j_pose.transpose() * rj.j_pose;
        g_p.segment<6>(6 * pi) += w * rj.j_pose.transpose() * rj.residual;
      }
      if (li >= 0) {
        h_ll[li] += w * rj.j_point.transpose() * rj.j_point;
        g_l[li] += w * rj.j_point.transpose() * rj.residual;
      }
      if (pi >= 0 && li >= 0) {
        auto [it, inserted] = w_blocks[li].try_emplace(
            pi, Eigen::Matrix<double, 6, 3>::Zero());
        it->second += w * rj.j_pose.transpose() * rj.j_point;
      }
    }
    grad_inf = g_p.size() ? g_p.cwiseAbs().maxCoeff() : 0.0;
    for (const auto& g : g_l) {
      grad_inf = std::max(grad_inf, g.cwiseAbs().maxCoeff());
    }
    if (grad_inf < 1e-14) {
      report.converged = true;
      break;
    }

    bool accepted = false;
    while (!accepted) {
      // Damped copies (Marquardt scaling with an absolute floor).
      Eigen::MatrixXd h_pp_d = h_pp;
      for (int i = 0; i < 6 * n_pose; ++i) {
        h_pp_d(i, i) += lambda * std::max(h_pp(i, i), 1e-12);
      }
      std::vector<Eigen::Matrix3d> h_ll_inv(n_point);
      bool ll_ok = true;
      for (int l = 0; l < n_point; ++l) {
        Eigen::Matrix3d d = h_ll[l];
        for (int k = 0; k < 3; ++k) {
          d(k, k) += lambda * std::max(h_ll[l](k, k), 1e-12);
        }
        const Eigen::Matrix3d inv = d.inverse();
        if (!inv.allFinite()) {
          ll_ok = false;
          break;
        }
        h_ll_inv[l] = inv;
      }

      Eigen::VectorXd delta_p = Eigen::VectorXd::Zero(6 * n_pose);
      bool solved = ll_ok;
      if (solved && n_pose > 0) {
        // Schur complement on the point blocks.
        Eigen::MatrixXd s = h_pp_d;
        Eigen::VectorXd b = -g_p;
        for (int l = 0; l < n_point; ++l) {
          for (const auto& [p1, w1] : w_blocks[l]) {
            const Eigen::Matrix<double, 6, 3> w1_hinv = w1 * h_ll_inv[l];
            b.segment<6>(6 * p1) += w1_hinv * g_l[l];
            for (const auto& [p2, w2] : w_blocks[l]) {
              s.block<6, 6>(6 * p1, 6 * p2) -= w1_hinv * w2.transpose();
            }
          }
        }
        delta_p = s.ldlt().solve(b);
        solved = delta_p.allFinite();
      }

      std::vector<Eigen::Vector3d> delta_l(n_point, Eigen::Vector3d::Zero());
      if (solved) {
        for (int l = 0; l < n_point; ++l) {
          Eigen::Vector3d rhs = -g_l[l];
          for (const auto& [p1, w1] : w_blocks[l]) {
            rhs -= w1.transpose() * delta_p.segment<6>(6 * p1);
          }
          delta_l[l] = h_ll_inv[l] * rhs;
          if (!delta_l[l].allFinite()) {
            solved = false;
            break;
          }
        }
      }

      if (solved) {
        // Try the step.
        ReprojectionProblem trial = pb;
        for (std::size_t i = 0; i < pb.poses.size(); ++i) {
          const int pi = pose_idx[i];
          if (pi < 0) continue;
          trial.poses[i] =
              PoseSE3::exp(delta_p.segment<6>(6 * pi)) * pb.poses[i];
        }
        for (std::size_t i = 0; i < pb.points.size(); ++i) {
          const int li = point_idx[i];
          if (li < 0) continue;
          trial.points[i] = pb.points[i] + delta_l[li];
        }
        const double new_cost = robust_cost(trial, cfg);
        if (new_cost < cost) {
          pb.poses = std::move(trial.poses);
          pb.points = std::move(trial.points);
          const double decrease = cost - new_cost;
          cost = new_cost;
          lambda = std::max(lambda * cfg.lambda_down, 1e-12);
          accepted = true;
          ++report.iterations;
          if (decrease <= cfg.cost_tolerance * std::max(cost, 1e-300)) {
            report.converged = true;
          }
          break;
        }
      }
      lambda *= cfg.lambda_up;
      if (lambda > cfg.lambda_ceiling) {
        if (!solved) {
          throw SingularSystem(
              "damped normal equations unsolvable at lambda ceiling");
        }
        report.converged = true;  // no further progress possible
        break;
      }
    }
    if (!accepted || report.converged) {
      if (!accepted) report.converged = true;
      break;
    }
  }
  report.final_cost = cost;
  return report;
}

PoseOnlyResult optimize_pose_only(const PoseSE3& initial,
                                  const std::vector<PoseOnlyAssociation>& assoc,
                                  const CameraIntrinsics& cam,
                                  const LMConfig& cfg) {
  if (assoc.size() < 6) {
    throw TooFewMatches("pose-only optimization needs >= 6 associations, got " +
                        std::to_string(assoc.size()));
  }
  auto run = [&](const PoseSE3& seed, const std::vector<bool>& mask) {
    ReprojectionProblem pb;
    pb.camera = cam;
    pb.poses = {seed};
    pb.pose_fixed = {false};
    for (std::size_t i = 0; i < assoc.size(); ++i) {
      if (mask[i]) continue;
      pb.points.push_back(assoc[i].point);
      pb.point_fixed.push_back(true);
      pb.observations.push_back(
          {0, static_cast<int>(pb.points.size()) - 1, assoc[i].pixel});
    }
    const SolveReport rep = solve_lm(pb, cfg);
    return std::make_pair(pb.poses[0], rep.final_cost);
  };

  PoseOnlyResult out;
  out.outlier.assign(assoc.size(), false);
  auto [pose, cost] = run(initial, out.outlier);

  // Label outliers by squared pixel residual, then refit once without them.
  int flagged = 0;
  for (std::size_t i = 0; i < assoc.size(); ++i) {
    const auto proj = project(assoc[i].point, pose, cam);
    const double chi2 =
        proj ? (assoc[i].pixel - *proj).squaredNorm()
             : std::numeric_limits<double>::infinity();
    if (chi2 > cfg.outlier_chi2) {
      out.outlier[i] = true;
      ++flagged;
    }
  }
  if (flagged > 0 &&
      static_cast<int>(assoc.size()) - flagged >= 6) {
    std::tie(pose, cost) = run(pose, out.outlier);
    // Re-evaluate labels at the refined pose.
    for (std::size_t i = 0; i < assoc.size(); ++i) {
      const auto proj = project(assoc[i].point, pose, cam);
      const double chi2 =
          proj ? (assoc[i].pixel - *proj).squaredNorm()
               : std::numeric_limits<double>::infinity();
      out.outlier[i] = chi2 > cfg.outlier_chi2;
    }
  }
  out.pose = pose;
  out.final_cost = cost;
  out.inlier_count = 0;
  for (bool o : out.outlier) {
    if (!o) ++out.inlier_count;
  }
  return out;
}

SimilaritySim3 solve_sim3(
    const std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>>& pairs) {
  const int n = static_cast<int>(pairs.size());
  if (n < 3) {
    throw DegenerateConfiguration("similarity solve needs >= 3 pairs, got " +
                                  std::to_string(n));
  }
  // Canonical accumulation order makes the result exactly permutation
  // invariant.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& pa = pairs[a];
    const auto& pb = pairs[b];
    for (int k = 0; k < 3; ++k) {
      if (pa.first(k) != pb.first(k)) return pa.first(k) < pb.first(k);
    }
    for (int k = 0; k < 3; ++k) {
      if (pa.second(k) != pb.second(k)) return pa.second(k) < pb.second(k);
    }
    return false;
  });

  Eigen::Vector3d mean_a = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_b = Eigen::Vector3d::Zero();
  for (int i : order) {
    mean_a += pairs[i].first;
    mean_b += pairs[i].second;
  }
  mean_a /= n;
  mean_b /= n;

  double var_a = 0.0;
  Eigen::Matrix3d sigma = Eigen::Matrix3d::Zero();
  for (int i : order) {
    const Eigen::Vector3d da = pairs[i].first - mean_a;
    const Eigen::Vector3d db = pairs[i].second - mean_b;
    var_a += da.squaredNorm();
    sigma += db * da.transpose();
  }
  var_a /= n;
  sigma /= n;

  if (var_a < 1e-18) {
    throw DegenerateConfiguration("similarity solve: coincident source points");
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d d = svd.singularValues();
  if (d(1) <= 1e-12 * std::max(d(0), 1e-300)) {
    throw DegenerateConfiguration("similarity solve: collinear points");
  }
  Eigen::Vector3d s_diag = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    s_diag(2) = -1.0;
  }
  const Eigen::Matrix3d rotation = svd.matrixU() * s_diag.asDiagonal() *
                                   svd.matrixV().transpose();
  const double scale = d.dot(s_diag) / var_a;
  if (!(scale > 0.0)) {
    throw DegenerateConfiguration("similarity solve: non-positive scale");
  }
  const Eigen::Vector3d t = mean_b - scale * (rotation * mean_a);
  return SimilaritySim3(scale, rotation, t);
}

namespace {

Eigen::Matrix<double, 7, 1> edge_residual(const PoseGraphEdge& e,
                                          const SimilaritySim3& si,
                                          const SimilaritySim3& sj) {
  return (e.measurement * si * sj.inverse()).log();
}

}  // namespace

std::vector<SimilaritySim3> optimize_pose_graph(
    std::vector<SimilaritySim3> nodes, const std::vector<PoseGraphEdge>& edges,
    const std::vector<bool>& fixed, const LMConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(nodes.size());
  if (fixed.size() != nodes.size()) {
    throw std::invalid_argument("fixed mask must match node count");
  }
  if (!std::any_of(fixed.begin(), fixed.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("pose graph needs >= 1 fixed node");
  }
  for (const PoseGraphEdge& e : edges) {
    if (e.i < 0 || e.i >= n || e.j < 0 || e.j >= n || e.i == e.j) {
      throw std::invalid_argument("pose graph edge references bad nodes");
    }
  }
  // Connectivity over the undirected edge set.
  {
    std::vector<std::vector<int>> adj(n);
    for (const PoseGraphEdge& e : edges) {
      adj[e.i].push_back(e.j);
      adj[e.j].push_back(e.i);
    }
    std::vector<bool> seen(n, false);
    std::queue<int> bfs;
    bfs.push(0);
    seen[0] = true;
    int visited = 1;
    while (!bfs.empty()) {
      const int u = bfs.front();
      bfs.pop();
      for (int v : adj[u]) {
        if (!seen[v]) {
          seen[v] = true;
          ++visited;
          bfs.push(v);
        }
      }
    }
    if (visited != n) {
      throw std::invalid_argument("pose graph is disconnected");
    }
  }

  std::vector<int> free_idx(n, -1);
  int n_free = 0;
  for (int i = 0; i < n; ++i) {
    if (!fixed[i]) free_idx[i] = n_free++;
  }
  if (n_free == 0) return nodes;

  auto total_cost = [&](const std::vector<SimilaritySim3>& state) {
    double c = 0.0;
    for (const PoseGraphEdge& e : edges) {
      c += edge_residual(e, state[e.i], state[e.j]).squaredNorm();
    }
    return c;
  };

  double cost = total_cost(nodes);
  double lambda = cfg.initial_lambda;
  const double fd_step = 1e-7;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(7 * n_free, 7 * n_free);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(7 * n_free);

    for (const PoseGraphEdge& e : edges) {
      const Eigen::Matrix<double, 7, 1> r =
          edge_residual(e, nodes[e.i], nodes[e.j]);
      Eigen::Matrix<double, 7, 7> ji = Eigen::Matrix<double, 7, 7>::Zero();
      Eigen::Matrix<double, 7, 7> jj = Eigen::Matrix<double, 7, 7>::Zero();
      const bool free_i = free_idx[e.i] >= 0;
      const bool free_j = free_idx[e.j] >= 0;
      // Central finite differences on the left-multiplicative tangent.
      for (int k = 0; k < 7; ++k) {
        Eigen::Matrix<double, 7, 1> step = Eigen::Matrix<double, 7, 1>::Zero();
        step(k) = fd_step;
        if (free_i) {
          const auto hi = edge_residual(
              e, SimilaritySim3::exp(step) * nodes[e.i], nodes[e.j]);
          const auto lo = edge_residual(
              e, SimilaritySim3::exp(-step) * nodes[e.i], nodes[e.j]);
          ji.col(k) = (hi - lo) / (2.0 * fd_step);
        }
        if (free_j) {
          const auto hi = edge_residual(
              e, nodes[e.i], SimilaritySim3::exp(step) * nodes[e.j]);
          const auto lo = edge_residual(
              e, nodes[e.i], SimilaritySim3::exp(-step) * nodes[e.j]);
          jj.col(k) = (hi - lo) / (2.0 * fd_step);
        }
      }
      if (free_i) {
        const int a = free_idx[e.i];
        h.block<7, 7>(7 * a, 7 * a) += ji.transpose() * ji;
        g.segment<7>(7 * a) += ji.transpose() * r;
      }
      if (free_j) {
        const int b = free_idx[e.j];
        h.block<7, 7>(7 * b, 7 * b) += jj.transpose() * jj;
        g.segment<7>(7 * b) += jj.transpose() * r;
      }
      if (free_i && free_j) {
        const int a = free_idx[e.i];
        const int b = free_idx[e.j];
        h.block<7, 7>(7 * a, 7 * b) += ji.transpose() * jj;
        h.block<7, 7>(7 * b, 7 * a) += jj.transpose() * ji;
      }
    }

    if (g.cwiseAbs().maxCoeff() < 1e-14) break;

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd h_d = h;
      for (int i = 0; i < 7 * n_free; ++i) {
        h_d(i, i) += lambda * std::max(h(i, i), 1e-12);
      }
      const Eigen::VectorXd delta = h_d.ldlt().solve(-g);
      const bool solvable = delta.allFinite();
      if (solvable) {
        std::vector<SimilaritySim3> trial = nodes;
        for (int i = 0; i < n; ++i) {
          const int f = free_idx[i];
          if (f < 0) continue;
          trial[i] = SimilaritySim3::exp(delta.segment<7>(7 * f)) * nodes[i];
        }
        const double new_cost = total_cost(trial);
        if (new_cost < cost) {
          const double decrease = cost - new_cost;
          nodes = std::move(trial);
          cost = new_cost;
          lambda = std::max(lambda * cfg.lambda_down, 1e-12);
          accepted = true;
          if (decrease <= cfg.cost_tolerance * std::max(cost, 1e-300)) {
            return nodes;
          }
          break;
        }
      }
      lambda *= cfg.lambda_up;
      if (lambda > cfg.lambda_ceiling) {
        if (!solvable) {
          throw SingularSystem(
              "pose graph normal equations unsolvable at lambda ceiling");
        }
        return nodes;
      }
    }
  }
  return nodes;
}

}  // namespace vslam
