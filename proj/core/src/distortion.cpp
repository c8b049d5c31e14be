#include "vslam/distortion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "vslam/errors.hpp"

namespace vslam {

void DistortionSpec::validate() const {
  switch (kind) {
    case Kind::kGamma:
      if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
      break;
    case Kind::kSaltPepper:
      if (!(salt_prob >= 0.0 && salt_prob <= 1.0)) {
        throw std::invalid_argument("salt-pepper probability must be in [0,1]");
      }
      break;
    case Kind::kFrameSkip:
      if (skip < 1) throw std::invalid_argument("frame skip must be >= 1");
      break;
    case Kind::kQuantileTruncate:
      break;
  }
}

GrayImage gamma_transform(const GrayImage& img, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
  GrayImage out = img;
  for (double& v : out.pixels) v = std::pow(v, gamma);
  return out;
}

GrayImage quantile_truncate(const GrayImage& img, Quantile which) {
  if (img.empty()) throw std::invalid_argument("empty image");
  std::vector<double> sorted = img.pixels;
  std::sort(sorted.begin(), sorted.end());
  const double q = which == Quantile::kQ1 ? 0.25 : 0.75;
  const double rank = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(rank);
  const double frac = rank - static_cast<double>(lo);
  const double value =
      lo + 1 < sorted.size()
          ? sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
          : sorted[lo];
  GrayImage out = img;
  if (which == Quantile::kQ1) {
    for (double& v : out.pixels) v = std::max(v, value);
  } else {
    for (double& v : out.pixels) v = std::min(v, value);
  }
  return out;
}

GrayImage salt_pepper(const GrayImage& img, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("salt-pepper probability must be in [0,1]");
  }
  GrayImage out = img;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : out.pixels) {
    if (u(rng) < p) v = u(rng) < 0.5 ? 0.0 : 1.0;
  }
  return out;
}

GrayImage apply_distortion(const GrayImage& img, const DistortionSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DistortionSpec::Kind::kGamma:
      return gamma_transform(img, spec.gamma);
    case DistortionSpec::Kind::kQuantileTruncate:
      return quantile_truncate(img, spec.quantile);
    case DistortionSpec::Kind::kSaltPepper:
      return salt_pepper(img, spec.salt_prob, spec.seed);
    case DistortionSpec::Kind::kFrameSkip:
      throw std::invalid_argument("frame skip applies to sequences, not images");
  }
  return img;
}

SequenceSource skip_frames(const SequenceSource& source, int n) {
  if (n < 1) throw std::invalid_argument("frame skip must be >= 1");
  SequenceSource out;
  out.calibration = source.calibration;
  out.ground_truth = source.ground_truth;
  for (std::size_t i = 0; i < source.frames.size(); i += n) {
    out.frames.push_back(source.frames[i]);
  }
  return out;
}

MatchQualityReport match_quality(const std::vector<FeatureMatch>& matches,
                                 const std::vector<std::int64_t>& query_ids,
                                 const std::vector<std::int64_t>& train_ids,
                                 const std::vector<Keypoint>& query_keypoints,
                                 double image_width, double image_height) {
  if (query_ids.size() != query_keypoints.size() || query_ids.empty() ||
      train_ids.empty()) {
    throw NoGroundTruth("ground-truth correspondence ids missing");
  }
  MatchQualityReport report;
  if (matches.empty()) {
    report.empty = true;
    return report;
  }
  int correct = 0;
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const FeatureMatch& m : matches) {
    if (m.query_index < 0 ||
        m.query_index >= static_cast<int>(query_ids.size()) ||
        m.train_index < 0 ||
        m.train_index >= static_cast<int>(train_ids.size())) {
      throw NoGroundTruth("match index outside ground-truth id arrays");
    }
    const std::int64_t qid = query_ids[m.query_index];
    if (qid >= 0 && qid == train_ids[m.train_index]) ++correct;
    centroid += Eigen::Vector2d(query_keypoints[m.query_index].x,
                                query_keypoints[m.query_index].y);
  }
  centroid /= static_cast<double>(matches.size());
  double spread = 0.0;
  for (const FeatureMatch& m : matches) {
    spread += (Eigen::Vector2d(query_keypoints[m.query_index].x,
                               query_keypoints[m.query_index].y) -
               centroid)
                  .norm();
  }
  spread /= static_cast<double>(matches.size());
  const double diagonal =
      std::sqrt(image_width * image_width + image_height * image_height);
  report.precision = static_cast<double>(correct) /
                     static_cast<double>(matches.size());
  report.spread = diagonal > 0.0 ? spread / diagonal : 0.0;
  return report;
}

}  // namespace vslam
