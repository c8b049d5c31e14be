#include "vslam/system.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

#include "vslam/errors.hpp"

namespace vslam {

void RunConfig::validate(bool has_vocabulary) const {
  if (loop_mode != LoopClosingMode::kOff && !has_vocabulary) {
    throw std::invalid_argument(
        "loop closing requires a vocabulary to be loaded");
  }
  if (tracker.adaptive) tracker.adaptive_cfg.validate();
  tracker.lm.validate();
  mapping.lm.validate();
}

struct System::LoopThreadState {
  std::thread worker;
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<KeyFrameId> queue;
  bool stop = false;
  std::atomic<int> keyframes_since_loop{1 << 20};
};

System::System(const SequenceSource& source, const FeatureProvider& provider,
               const RunConfig& cfg, const Vocabulary* vocabulary)
    : source_(source),
      provider_(provider),
      cfg_(cfg),
      vocab_(vocabulary),
      map_(cfg.map),
      tracker_(map_, source.calibration, cfg.tracker),
      mapper_(map_, source.calibration, cfg.mapping),
      closer_(map_, source.calibration, cfg.loop) {
  cfg_.validate(vocab_ != nullptr && !vocab_->empty());
}

System::~System() = default;

bool System::try_close_loop(KeyFrameId kf) {
  const auto candidate = closer_.detect_loop(kf, database_);
  if (!candidate) return false;
  const auto report = closer_.close_loop(
      *candidate, kf, tracker_.thresholds(), cfg_.mapping.lm);
  return report.has_value();
}

void System::process_new_keyframe(KeyFrameId kf) {
  // Snapshot poses so frame records anchored to culled keyframes can be
  // re-expressed against a surviving one.
  std::map<KeyFrameId, PoseSE3> snapshot;
  for (KeyFrameId id : map_.keyframe_ids()) {
    snapshot.emplace(id, map_.keyframe(id).pose_cw);
  }
  const MappingReport report =
      mapper_.process_keyframe(kf, tracker_.thresholds());
  for (KeyFrameId culled : report.culled) {
    database_.remove(culled);
  }
  if (!report.culled.empty()) {
    reanchor_records(report.culled, snapshot);
    tracker_.ensure_reference_alive();
  }
}

void System::reanchor_records(const std::vector<KeyFrameId>& culled,
                              const std::map<KeyFrameId, PoseSE3>& snapshot) {
  // Re-anchor onto the newest surviving keyframe, using the poses both
  // keyframes had at cull time.
  KeyFrameId anchor = -1;
  for (KeyFrameId id : map_.keyframe_ids()) anchor = std::max(anchor, id);
  if (anchor < 0 || !snapshot.count(anchor)) return;
  const PoseSE3& anchor_pose = snapshot.at(anchor);
  for (FrameRecord& rec : records_) {
    if (std::find(culled.begin(), culled.end(), rec.reference) ==
        culled.end()) {
      continue;
    }
    const PoseSE3& dead_pose = snapshot.at(rec.reference);
    rec.pose_from_reference =
        rec.pose_from_reference * dead_pose * anchor_pose.inverse();
    rec.reference = anchor;
  }
}

void System::loop_worker() {
  LoopThreadState& state = *loop_thread_;
  while (true) {
    KeyFrameId kf = -1;
    {
      std::unique_lock lk(state.mutex);
      state.cv.wait(lk, [&] { return state.stop || !state.queue.empty(); });
      if (state.queue.empty()) {
        if (state.stop) return;
        continue;
      }
      kf = state.queue.front();
      state.queue.pop_front();
    }
    if (state.keyframes_since_loop.load() <= cfg_.loop_cooldown_keyframes) {
      continue;
    }
    std::optional<LoopCandidate> candidate;
    {
      std::shared_lock read(map_.mutex());
      candidate = closer_.detect_loop(kf, database_);
    }
    if (!candidate) continue;
    {
      std::unique_lock write(map_.mutex());
      if (closer_.close_loop(*candidate, kf, tracker_.thresholds(),
                             cfg_.mapping.lm)) {
        ++stats_.loops_closed;
        state.keyframes_since_loop.store(0);
      }
    }
  }
}

RunResult System::run() {
  const bool threaded = cfg_.loop_mode == LoopClosingMode::kThreaded;
  if (threaded) {
    loop_thread_ = std::make_unique<LoopThreadState>();
    loop_thread_->worker = std::thread([this] { loop_worker(); });
  }

  std::ofstream trace;
  if (cfg_.trace && !cfg_.trace_path.empty()) {
    trace.open(cfg_.trace_path);
    if (!trace) throw IoError("cannot write trace: " + cfg_.trace_path);
    trace << "frame,mode,inliers,outliers,th_low,th_high\n";
  }

  std::optional<Frame> init_reference;
  FrameId lost_since = -1;

  for (const SequenceFrame& sf : source_.frames) {
    ++stats_.total_frames;
    const std::optional<GrayImage> image = source_.load_image(sf);
    Frame frame;
    frame.id = sf.id;
    frame.timestamp = sf.timestamp;
    frame.features = provider_.extract({sf.id, image ? &*image : nullptr});
    frame.reset_links();

    const char* mode_name = "init";
    int trace_inliers = 0;
    int trace_outliers = 0;

    std::unique_lock write_lock(map_.mutex(), std::defer_lock);
    if (threaded) write_lock.lock();

    switch (tracker_.mode()) {
      case TrackerMode::kNotInitialized: {
        if (!init_reference || init_reference->features.size() == 0) {
          init_reference = frame;
          ++stats_.lost_frames;  // no pose estimate yet
          break;
        }
        const auto init = tracker_.initialize(*init_reference, frame);
        if (init) {
          mode_name = "ok";
          if (vocab_ && !vocab_->empty()) {
            map_.set_keyframe_bow(init->first_keyframe,
                                  vocab_->to_bow(init_reference->features));
            map_.set_keyframe_bow(init->second_keyframe,
                                  vocab_->to_bow(frame.features));
          }
          database_.add(init->first_keyframe,
                        map_.keyframe(init->first_keyframe).bow);
          database_.add(init->second_keyframe,
                        map_.keyframe(init->second_keyframe).bow);
          records_.push_back({init_reference->timestamp, init->first_keyframe,
                              PoseSE3::identity()});
          records_.push_back({frame.timestamp, init->second_keyframe,
                              PoseSE3::identity()});
          // The reference frame, counted lost while pending, now has a pose.
          stats_.tracked_frames += 2;
          --stats_.lost_frames;
          trace_inliers = init->triangulated_points;
          init_reference.reset();
        } else {
          ++stats_.lost_frames;
          if (tracker_.last_init_match_count() <
              cfg_.tracker.init_min_matches) {
            // Too little overlap left; restart from the current frame.
            init_reference = frame;
          }
        }
        break;
      }
      case TrackerMode::kOk: {
        const auto result = tracker_.track_frame(frame);
        if (!result) {
          mode_name = "lost";
          lost_since = frame.id;
          ++stats_.lost_frames;
          break;
        }
        mode_name = "ok";
        trace_inliers = result->inlier_count;
        trace_outliers = result->outlier_count;
        ++stats_.tracked_frames;
        const KeyFrameId ref = result->reference_keyframe;
        records_.push_back(
            {frame.timestamp, ref,
             result->pose_cw * map_.keyframe(ref).pose_cw.inverse()});

        if (tracker_.need_keyframe(*result)) {
          BowVector bow;
          if (vocab_ && !vocab_->empty()) bow = vocab_->to_bow(frame.features);
          const KeyFrameId kf = tracker_.promote_keyframe(frame, bow);
          database_.add(kf, map_.keyframe(kf).bow);
          process_new_keyframe(kf);
          if (cfg_.loop_mode == LoopClosingMode::kInterleaved) {
            ++keyframes_since_loop_;
            if (keyframes_since_loop_ > cfg_.loop_cooldown_keyframes &&
                try_close_loop(kf)) {
              ++stats_.loops_closed;
              keyframes_since_loop_ = 0;
            }
          } else if (threaded) {
            ++loop_thread_->keyframes_since_loop;
            std::lock_guard lk(loop_thread_->mutex);
            loop_thread_->queue.push_back(kf);
            loop_thread_->cv.notify_one();
          }
        }
        break;
      }
      case TrackerMode::kLost: {
        mode_name = "lost";
        std::optional<TrackResult> result;
        if (vocab_ && !vocab_->empty()) {
          result = tracker_.relocalize(frame, database_, *vocab_);
        }
        if (result) {
          mode_name = "reloc";
          ++stats_.relocalizations;
          ++stats_.tracked_frames;
          stats_.lost_spans.push_back({lost_since, frame.id});
          trace_inliers = result->inlier_count;
          trace_outliers = result->outlier_count;
          const KeyFrameId ref = result->reference_keyframe;
          records_.push_back(
              {frame.timestamp, ref,
               result->pose_cw * map_.keyframe(ref).pose_cw.inverse()});
        } else {
          ++stats_.lost_frames;
        }
        break;
      }
    }

    if (trace.is_open()) {
      const MatchThresholds& th = tracker_.thresholds();
      trace << frame.id << "," << mode_name << "," << trace_inliers << ","
            << trace_outliers << "," << th.th_low << "," << th.th_high
            << "\n";
    }
  }

  if (threaded) {
    {
      std::lock_guard lk(loop_thread_->mutex);
      loop_thread_->stop = true;
    }
    loop_thread_->cv.notify_one();
    loop_thread_->worker.join();
    loop_thread_.reset();
  }

  RunResult out;
  {
    std::shared_lock read(map_.mutex());
    for (const FrameRecord& rec : records_) {
      if (!map_.has_keyframe(rec.reference)) continue;
      const PoseSE3 frame_cw =
          rec.pose_from_reference * map_.keyframe(rec.reference).pose_cw;
      out.trajectory.samples.push_back({rec.timestamp, frame_cw.inverse()});
    }
    stats_.keyframes = static_cast<int>(map_.keyframe_count());
    stats_.map_points = static_cast<int>(map_.point_count());
  }
  out.stats = stats_;
  return out;
}

}  // namespace vslam
