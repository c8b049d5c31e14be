#include "vslam/feature_loss.hpp"

#include <cmath>
#include <stdexcept>

#include "vslam/errors.hpp"

namespace vslam {

void DetectorLossConfig::validate() const {
  double sum = 0.0;
  for (double a : alphas) sum += a;
  if (std::abs(sum - 1.0) > 1e-12) {
    throw std::invalid_argument("detector loss alphas must sum to 1");
  }
  if (labels[3] != -1.0) {
    throw std::invalid_argument("fourth branch must carry label -1");
  }
  if (gamma_balance < 0.0 || margin <= 0.0 || beta <= 0.0) {
    throw std::invalid_argument("detector loss scalars must be positive");
  }
}

namespace {

ScoreMap softmax_weights(const ScoreMap& scores, double beta) {
  const double peak = scores.maxCoeff();
  ScoreMap w = (beta * (scores.array() - peak)).exp().matrix();
  w /= w.sum();
  return w;
}

}  // namespace

Eigen::Vector2d softargmax(const ScoreMap& scores, double beta) {
  const ScoreMap w = softmax_weights(scores, beta);
  double x = 0.0, y = 0.0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      x += w(i, j) * static_cast<double>(j);
      y += w(i, j) * static_cast<double>(i);
    }
  }
  return {x, y};
}

SoftargmaxGrad softargmax_with_grad(const ScoreMap& scores, double beta) {
  SoftargmaxGrad out;
  const ScoreMap w = softmax_weights(scores, beta);
  out.xy = softargmax(scores, beta);
  out.dx.resize(scores.rows(), scores.cols());
  out.dy.resize(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      out.dx(i, j) = beta * w(i, j) * (static_cast<double>(j) - out.xy.x());
      out.dy(i, j) = beta * w(i, j) * (static_cast<double>(i) - out.xy.y());
    }
  }
  return out;
}

double soft_maximum(const ScoreMap& scores, double beta) {
  const double peak = scores.maxCoeff();
  const double sum = (beta * (scores.array() - peak)).exp().sum();
  return peak + std::log(sum) / beta;
}

double descriptor_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                       PairRelation relation, double margin) {
  if (a.size() != b.size()) {
    throw LengthMismatch("descriptor loss: vectors differ in length");
  }
  const double dist = (a - b).norm();
  if (relation == PairRelation::kPositive) return dist;
  return std::max(0.0, margin - dist);
}

DescriptorLossGrad descriptor_loss_with_grad(const Eigen::VectorXd& a,
                                             const Eigen::VectorXd& b,
                                             PairRelation relation,
                                             double margin) {
  if (a.size() != b.size()) {
    throw LengthMismatch("descriptor loss: vectors differ in length");
  }
  DescriptorLossGrad out;
  const Eigen::VectorXd diff = a - b;
  const double dist = diff.norm();
  out.da = Eigen::VectorXd::Zero(a.size());
  out.db = Eigen::VectorXd::Zero(a.size());
  if (relation == PairRelation::kPositive) {
    out.value = dist;
    if (dist > 1e-12) {
      out.da = diff / dist;
      out.db = -out.da;
    }
  } else {
    out.value = std::max(0.0, margin - dist);
    if (out.value > 0.0 && dist > 1e-12) {
      out.da = -diff / dist;
      out.db = diff / dist;
    }
  }
  return out;
}

double orientation_loss(const Eigen::VectorXd& d1, const Eigen::VectorXd& d2) {
  return descriptor_loss(d1, d2, PairRelation::kPositive);
}

double classification_loss(const std::array<ScoreMap, 4>& maps,
                           const DetectorLossConfig& cfg) {
  cfg.validate();
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double m = soft_maximum(maps[i], cfg.beta);
    const double hinge = std::max(0.0, 1.0 - m * cfg.labels[i]);
    total += cfg.alphas[i] * hinge * hinge;
  }
  return total;
}

ClassificationLossGrad classification_loss_with_grad(
    const std::array<ScoreMap, 4>& maps, const DetectorLossConfig& cfg) {
  cfg.validate();
  ClassificationLossGrad out;
  for (int i = 0; i < 4; ++i) {
    const double m = soft_maximum(maps[i], cfg.beta);
    const double hinge = std::max(0.0, 1.0 - m * cfg.labels[i]);
    out.value += cfg.alphas[i] * hinge * hinge;
    if (hinge > 0.0) {
      const ScoreMap w = softmax_weights(maps[i], cfg.beta);
      out.dmaps[i] = (-2.0 * cfg.alphas[i] * hinge * cfg.labels[i]) * w;
    } else {
      out.dmaps[i] = ScoreMap::Zero(maps[i].rows(), maps[i].cols());
    }
  }
  return out;
}

double pair_loss(const Eigen::VectorXd& d1, const Eigen::VectorXd& d2) {
  return descriptor_loss(d1, d2, PairRelation::kPositive);
}

PairLossGrad pair_loss_with_grad(const Eigen::VectorXd& d1,
                                 const Eigen::VectorXd& d2) {
  const auto g = descriptor_loss_with_grad(d1, d2, PairRelation::kPositive);
  return {g.value, g.da, g.db};
}

double max_relative_gradient_error(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, const Eigen::VectorXd& analytic, double step) {
  double worst = 0.0;
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + step;
    const double hi = f(probe);
    probe(i) = x(i) - step;
    const double lo = f(probe);
    probe(i) = x(i);
    const double numeric = (hi - lo) / (2.0 * step);
    const double denom =
        std::max({1.0, std::abs(numeric), std::abs(analytic(i))});
    worst = std::max(worst, std::abs(numeric - analytic(i)) / denom);
  }
  return worst;
}

}  // namespace vslam
