#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vslam/geometry.hpp"
#include "vslam/image.hpp"

namespace vslam {

using FrameId = std::int64_t;

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double response = 0.0;
  double orientation = 0.0;  // radians
  int octave = 0;
};

enum class DescriptorVariant { kFloat, kBinary };

/// One descriptor: float vector or bit vector. All descriptors of a frame
/// share variant and length.
struct Descriptor {
  DescriptorVariant variant = DescriptorVariant::kFloat;
  int length = 0;  // floats for kFloat, bits for kBinary
  std::vector<float> floats;
  std::vector<std::uint64_t> words;
};

/// Distance between equal-variant descriptors: Euclidean L2 for float,
/// Hamming popcount for binary. Throws VariantMismatch otherwise.
double descriptor_distance(const Descriptor& a, const Descriptor& b);

/// Packed per-frame descriptor storage.
class DescriptorArray {
 public:
  DescriptorArray() = default;

  static DescriptorArray make_float(int length);
  static DescriptorArray make_binary(int bit_length);

  DescriptorVariant variant() const { return variant_; }
  int length() const { return length_; }
  int count() const { return count_; }
  bool empty() const { return count_ == 0; }
  int words_per_descriptor() const { return (length_ + 63) / 64; }

  void push_float(const float* values);
  void push_binary(const std::uint64_t* words);

  Descriptor row(int i) const;
  const float* float_row(int i) const;
  const std::uint64_t* word_row(int i) const;

  double distance(int i, const DescriptorArray& other, int j) const;

 private:
  DescriptorVariant variant_ = DescriptorVariant::kFloat;
  int length_ = 0;
  int count_ = 0;
  std::vector<float> fdata_;
  std::vector<std::uint64_t> bdata_;
};

struct FeatureSet {
  std::vector<Keypoint> keypoints;
  DescriptorArray descriptors;

  int size() const { return static_cast<int>(keypoints.size()); }
};

struct MatchThresholds {
  double th_low = 2.0;
  double th_high = 3.0;
};

/// Static threshold pairs the pipeline defaults to per dataset style.
inline constexpr MatchThresholds kKittiThresholds{2.0, 3.0};
inline constexpr MatchThresholds kEurocThresholds{1.0, 2.0};

struct AdaptiveConfig {
  double th_min = 0.5;
  double th_max = 4.0;
  double ratio_floor = 0.2;
  double ratio_ceil = 0.9;

  void validate() const;
};

/// Online threshold controller. margin = (map points - outliers) / map
/// points; thresholds ramp linearly and non-increasingly in the margin from
/// th_max (margin <= ratio_floor) down to th_min (margin >= ratio_ceil).
/// th_high = 1.5 * th_low, clamped to the same bounds. Zero map points maps
/// to th_max.
MatchThresholds adapt_thresholds(std::int64_t map_point_count,
                                 std::int64_t outlier_count,
                                 const AdaptiveConfig& cfg);

struct FeatureMatch {
  int query_index = -1;
  int train_index = -1;
  double distance = 0.0;
};

/// Mutual-nearest-neighbor matching gated by th_low (strict) or th_high.
/// Ties in nearest distance break toward the lowest index. Each index
/// appears at most once per side.
std::vector<FeatureMatch> match_descriptors(const FeatureSet& query,
                                            const FeatureSet& train,
                                            const MatchThresholds& th,
                                            bool strict);

/// Input handed to feature providers: a frame id plus the decoded image when
/// the source has one (file/synthetic providers ignore the image).
struct FrameContext {
  FrameId id = 0;
  const GrayImage* image = nullptr;
};

class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual FeatureSet extract(const FrameContext& frame) const = 0;
};

/// Provider over precomputed per-frame feature files <frame_id>.feat.
/// Throws MissingFrame / MalformedFile.
std::unique_ptr<FeatureProvider> provider_from_files(const std::string& dir);

FeatureSet read_feature_file(const std::string& path);
void write_feature_file(const FeatureSet& features, const std::string& path);

/// Corner detector + binary descriptor baseline: segment-test corners over a
/// bilinear image pyramid, intensity-centroid orientation, 256-bit steered
/// intensity-comparison descriptor. Deterministic for a fixed config.
struct NativeFeatureConfig {
  int pyramid_levels = 8;
  double scale_factor = 1.2;
  double fast_threshold = 0.08;  // intensity delta in [0,1] units
  int max_features = 1000;
  int patch_size = 31;
  std::uint64_t pattern_seed = 42;
};

std::unique_ptr<FeatureProvider> provider_native(
    const NativeFeatureConfig& cfg);

struct SyntheticWorld;

/// Ground-truth provider over a synthetic world: projects visible landmarks
/// and encodes the landmark id into a 128-d float descriptor (amplitude at
/// slot id % 128), optionally perturbed by seeded Gaussian noise on the
/// active coordinate. Perfect associations stay recoverable by construction.
std::unique_ptr<FeatureProvider> provider_synthetic(
    const SyntheticWorld& world, const CameraIntrinsics& cam);

inline constexpr int kSyntheticDescriptorLength = 128;

/// Descriptor a synthetic landmark id encodes to (noise-free).
Descriptor synthetic_descriptor(std::int64_t landmark_id, double amplitude);

}  // namespace vslam
