#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vslam/bow.hpp"
#include "vslam/dataset.hpp"
#include "vslam/evaluation.hpp"
#include "vslam/features.hpp"
#include "vslam/local_mapping.hpp"
#include "vslam/loop_closing.hpp"
#include "vslam/map.hpp"
#include "vslam/tracking.hpp"

namespace vslam {

enum class LoopClosingMode { kOff, kInterleaved, kThreaded };

struct RunConfig {
  TrackerConfig tracker;
  MappingConfig mapping;
  LoopConfig loop;
  MapConfig map;
  LoopClosingMode loop_mode = LoopClosingMode::kOff;
  /// Keyframes to wait after a closed loop before attempting another.
  int loop_cooldown_keyframes = 10;
  std::uint64_t seed = 7;
  bool trace = false;
  std::string trace_path;

  void validate(bool has_vocabulary) const;
};

struct RunStats {
  int total_frames = 0;
  int tracked_frames = 0;
  int lost_frames = 0;
  int keyframes = 0;
  int map_points = 0;
  int loops_closed = 0;
  int relocalizations = 0;
  std::vector<std::pair<FrameId, FrameId>> lost_spans;
};

struct RunResult {
  Trajectory trajectory;
  RunStats stats;
};

/// Wires tracking, mapping, and loop closing into the full pipeline and owns
/// the run lifecycle. Per-frame poses are stored relative to their reference
/// keyframe; the emitted trajectory is recomputed from the final keyframe
/// poses, so loop corrections reach every frame.
class System {
 public:
  System(const SequenceSource& source, const FeatureProvider& provider,
         const RunConfig& cfg, const Vocabulary* vocabulary = nullptr);
  ~System();

  RunResult run();

  const Map& map() const { return map_; }

 private:
  struct FrameRecord {
    double timestamp = 0.0;
    KeyFrameId reference = -1;
    PoseSE3 pose_from_reference;  // frame_cw = rel * kf_cw
  };

  void process_new_keyframe(KeyFrameId kf);
  void reanchor_records(const std::vector<KeyFrameId>& culled,
                        const std::map<KeyFrameId, PoseSE3>& snapshot);
  bool try_close_loop(KeyFrameId kf);
  void loop_worker();

  const SequenceSource& source_;
  const FeatureProvider& provider_;
  RunConfig cfg_;
  const Vocabulary* vocab_;

  Map map_;
  Tracker tracker_;
  LocalMapper mapper_;
  LoopCloser closer_;
  KeyFrameDatabase database_;
  std::vector<FrameRecord> records_;
  RunStats stats_;
  int keyframes_since_loop_ = 1 << 20;

  // Threaded loop-closing state.
  struct LoopThreadState;
  std::unique_ptr<LoopThreadState> loop_thread_;
};

}  // namespace vslam
