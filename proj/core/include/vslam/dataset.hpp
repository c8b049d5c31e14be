#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vslam/evaluation.hpp"
#include "vslam/features.hpp"
#include "vslam/geometry.hpp"
#include "vslam/image.hpp"

namespace vslam {

struct SequenceFrame {
  FrameId id = 0;
  double timestamp = 0.0;
  std::string image_path;  // empty for feature-file / synthetic sources
};

/// An opened sequence: calibration, ordered frames, optional ground truth.
/// Frame fetches after opening are read-only and thread-safe.
struct SequenceSource {
  CameraIntrinsics calibration;
  std::vector<SequenceFrame> frames;
  std::optional<Trajectory> ground_truth;

  std::optional<GrayImage> load_image(const SequenceFrame& frame) const;
  void validate() const;
};

/// KITTI-odometry-style layout: image_0/ (or images/) + calib.txt with a P0
/// projection line + optional times.txt and poses.txt. Throws MalformedCalib
/// / MissingImages with path diagnostics.
SequenceSource open_kitti(const std::string& dir);

/// EuRoC-style layout: mav0/cam0/{data.csv,sensor.yaml,data/} + optional
/// mav0/state_groundtruth_estimate0/data.csv. Nanosecond timestamps are
/// converted to seconds.
SequenceSource open_euroc(const std::string& dir);

enum class SyntheticPath { kCircle, kLine, kFigureEight };

struct SyntheticSpec {
  SyntheticPath path = SyntheticPath::kCircle;
  int frame_count = 200;
  int landmark_count = 500;
  double radius = 6.0;
  /// Circle/figure-eight: fraction of the closed path covered; > 1 revisits.
  double revolutions = 1.1;
  /// Every frame is guaranteed to see at least this many landmarks.
  int min_visible = 40;
  double descriptor_amplitude = 4.0;
  double descriptor_noise_sigma = 0.0;
  std::uint64_t seed = 7;
  double frame_dt = 0.1;
  /// Visibility ceiling as a multiple of the radius; smaller values shorten
  /// covisibility range (more realistic drift accumulation).
  double max_depth_factor = 4.0;
  /// Landmark shell radii as multiples of the path radius.
  double shell_near = 1.4;
  double shell_far = 2.6;
  CameraIntrinsics camera;  // left invalid -> a default 640x480 camera
};

struct SyntheticWorld {
  std::map<std::int64_t, Eigen::Vector3d> landmarks;
  std::vector<PoseSE3> poses_cw;  // world-to-camera, one per frame
  double descriptor_amplitude = 4.0;
  double descriptor_noise_sigma = 0.0;
  double max_depth = 1e30;  // visibility ceiling (meters)
  std::uint64_t seed = 7;
};

struct SyntheticDataset {
  SequenceSource source;
  SyntheticWorld world;
};

/// Deterministic world + trajectory; the source's ground truth is the exact
/// camera path. Pairs with provider_synthetic.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// On-disk synthetic dataset: calib.txt (plain six-value format), times.txt,
/// groundtruth.tum, world.txt, features/<frame_id>.feat.
void write_synthetic_dataset(const SyntheticDataset& dataset,
                             const std::string& dir);
SequenceSource open_synth_dir(const std::string& dir);
SyntheticWorld read_world_file(const std::string& path);
void write_world_file(const SyntheticWorld& world, const std::string& path);

/// Rebuilds the world (landmarks + poses) for an on-disk synthetic dataset.
SyntheticWorld load_world_for(const SequenceSource& source,
                              const std::string& dir);

}  // namespace vslam
