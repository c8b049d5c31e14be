#pragma once

#include <cstdint>
#include <vector>

#include "vslam/dataset.hpp"
#include "vslam/features.hpp"
#include "vslam/image.hpp"

namespace vslam {

enum class Quantile { kQ1, kQ3 };

struct DistortionSpec {
  enum class Kind { kGamma, kQuantileTruncate, kSaltPepper, kFrameSkip };
  Kind kind = Kind::kGamma;
  double gamma = 1.0;              // kGamma, > 0
  Quantile quantile = Quantile::kQ1;  // kQuantileTruncate
  double salt_prob = 0.0;          // kSaltPepper, in [0,1]
  std::uint64_t seed = 0;          // kSaltPepper
  int skip = 1;                    // kFrameSkip, >= 1

  void validate() const;
};

/// Per-pixel power law I' = I^gamma; gamma > 1 emulates underexposure,
/// gamma < 1 overexposure.
GrayImage gamma_transform(const GrayImage& img, double gamma);

/// Clamps the tail of the intensity distribution: Q1 raises pixels below
/// the 25th percentile to it, Q3 lowers pixels above the 75th percentile.
/// Percentiles interpolate linearly on the sorted intensity list.
GrayImage quantile_truncate(const GrayImage& img, Quantile which);

/// Each pixel is independently replaced by 0 or 1 (equal odds) with
/// probability p; reproducible for a fixed seed.
GrayImage salt_pepper(const GrayImage& img, double p, std::uint64_t seed);

GrayImage apply_distortion(const GrayImage& img, const DistortionSpec& spec);

/// Keeps frames 0, n, 2n, ...; timestamps preserved.
SequenceSource skip_frames(const SequenceSource& source, int n);

struct MatchQualityReport {
  double precision = 0.0;
  /// Mean distance of matched keypoint locations from their centroid,
  /// normalized by the image diagonal.
  double spread = 0.0;
  bool empty = false;  // no matches: precision reported as 0 with this flag
};

/// Precision and spatial spread of a matching against known ground-truth
/// correspondence (per-keypoint landmark ids; negative = unknown). Throws
/// NoGroundTruth when the id arrays do not cover the keypoints.
MatchQualityReport match_quality(const std::vector<FeatureMatch>& matches,
                                 const std::vector<std::int64_t>& query_ids,
                                 const std::vector<std::int64_t>& train_ids,
                                 const std::vector<Keypoint>& query_keypoints,
                                 double image_width, double image_height);

}  // namespace vslam
