#include "vslam/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "vslam/errors.hpp"

namespace fs = std::filesystem;

namespace vslam {

std::optional<GrayImage> SequenceSource::load_image(
    const SequenceFrame& frame) const {
  if (frame.image_path.empty()) return std::nullopt;
  return read_gray_image(frame.image_path);
}

void SequenceSource::validate() const {
  if (!calibration.valid()) {
    throw MalformedCalib("sequence calibration is invalid");
  }
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (!(frames[i].timestamp > frames[i - 1].timestamp)) {
      throw MalformedFile("sequence timestamps not strictly increasing at "
                          "frame " +
                          std::to_string(i));
    }
  }
}

namespace {

std::vector<std::string> list_images(const std::string& dir) {
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".png" || ext == ".pgm") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<double> read_times_file(const std::string& path) {
  std::vector<double> times;
  std::ifstream in(path);
  if (!in) return times;
  double t;
  while (in >> t) times.push_back(t);
  return times;
}

}  // namespace

SequenceSource open_kitti(const std::string& dir) {
  SequenceSource src;
  std::vector<std::string> images = list_images(dir + "/image_0");
  if (images.empty()) images = list_images(dir + "/images");
  if (images.empty()) {
    throw MissingImages("no .png/.pgm images under " + dir +
                        "/image_0 or " + dir + "/images");
  }

  const std::string calib_path = dir + "/calib.txt";
  std::ifstream calib(calib_path);
  if (!calib) throw MalformedCalib("missing calibration file: " + calib_path);
  std::string line;
  bool found_p0 = false;
  double p[12];
  while (std::getline(calib, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag != "P0:" && tag != "P0") continue;
    for (int k = 0; k < 12; ++k) {
      if (!(ls >> p[k])) {
        throw MalformedCalib(calib_path + ": P0 line needs 12 values");
      }
    }
    found_p0 = true;
    break;
  }
  if (!found_p0) {
    throw MalformedCalib(calib_path + ": no P0 projection line");
  }
  const GrayImage first = read_gray_image(images.front());
  src.calibration.fx = p[0];
  src.calibration.fy = p[5];
  src.calibration.cx = p[2];
  src.calibration.cy = p[6];
  src.calibration.width = first.width;
  src.calibration.height = first.height;
  if (!src.calibration.valid()) {
    throw MalformedCalib(calib_path + ": P0 intrinsics fail validity checks");
  }

  const std::vector<double> times = read_times_file(dir + "/times.txt");
  for (std::size_t i = 0; i < images.size(); ++i) {
    SequenceFrame f;
    f.id = static_cast<FrameId>(i);
    f.timestamp = i < times.size() ? times[i] : 0.1 * static_cast<double>(i);
    f.image_path = images[i];
    src.frames.push_back(f);
  }

  const std::string poses_path = dir + "/poses.txt";
  if (fs::exists(poses_path)) {
    std::vector<double> pose_times;
    for (const SequenceFrame& f : src.frames) pose_times.push_back(f.timestamp);
    src.ground_truth = read_kitti_poses(poses_path, pose_times);
  }
  src.validate();
  return src;
}

namespace {

// Minimal parser for the two list-valued keys of a EuRoC sensor.yaml.
std::vector<double> yaml_list(const std::string& path, const std::string& key) {
  std::ifstream in(path);
  if (!in) throw MalformedCalib("cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto pos = line.find(key + ":");
    if (pos == std::string::npos) continue;
    const auto open = line.find('[', pos);
    const auto close = line.find(']', pos);
    if (open == std::string::npos || close == std::string::npos ||
        close < open) {
      throw MalformedCalib(path + ":" + std::to_string(lineno) +
                           ": malformed '" + key + "' list");
    }
    std::string body = line.substr(open + 1, close - open - 1);
    std::replace(body.begin(), body.end(), ',', ' ');
    std::istringstream ls(body);
    std::vector<double> values;
    double v;
    while (ls >> v) values.push_back(v);
    return values;
  }
  throw MalformedCalib(path + ": key '" + key + "' not found");
}

}  // namespace

SequenceSource open_euroc(const std::string& dir) {
  SequenceSource src;
  const std::string cam = dir + "/mav0/cam0";
  const std::string data_csv = cam + "/data.csv";
  std::ifstream in(data_csv);
  if (!in) throw MissingImages("missing " + data_csv);

  const std::vector<double> intr = yaml_list(cam + "/sensor.yaml", "intrinsics");
  const std::vector<double> res = yaml_list(cam + "/sensor.yaml", "resolution");
  if (intr.size() != 4 || res.size() != 2) {
    throw MalformedCalib(cam + "/sensor.yaml: need intrinsics[4], resolution[2]");
  }
  src.calibration.fx = intr[0];
  src.calibration.fy = intr[1];
  src.calibration.cx = intr[2];
  src.calibration.cy = intr[3];
  src.calibration.width = static_cast<int>(res[0]);
  src.calibration.height = static_cast<int>(res[1]);
  if (!src.calibration.valid()) {
    throw MalformedCalib(cam + "/sensor.yaml: intrinsics fail validity checks");
  }

  std::string line;
  int lineno = 0;
  double last_t = -1.0;
  FrameId next_id = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::uint64_t t_ns;
    std::string filename;
    if (!(ls >> t_ns >> filename)) {
      throw MalformedFile(data_csv + ":" + std::to_string(lineno) +
                          ": expected 'timestamp_ns,filename'");
    }
    SequenceFrame f;
    f.id = next_id++;
    f.timestamp = static_cast<double>(t_ns) * 1e-9;
    if (f.timestamp <= last_t) {
      throw MalformedFile(data_csv + ":" + std::to_string(lineno) +
                          ": timestamp collision or regression");
    }
    last_t = f.timestamp;
    f.image_path = cam + "/data/" + filename;
    src.frames.push_back(f);
  }
  if (src.frames.empty()) throw MissingImages(data_csv + ": no frames listed");

  const std::string gt_csv = dir + "/mav0/state_groundtruth_estimate0/data.csv";
  if (fs::exists(gt_csv)) {
    std::ifstream gt_in(gt_csv);
    Trajectory gt;
    lineno = 0;
    while (std::getline(gt_in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ls(line);
      std::uint64_t t_ns;
      double px, py, pz, qw, qx, qy, qz;
      if (!(ls >> t_ns >> px >> py >> pz >> qw >> qx >> qy >> qz)) {
        throw MalformedFile(gt_csv + ":" + std::to_string(lineno) +
                            ": expected t,p[3],q[4]");
      }
      const Eigen::Quaterniond q(qw, qx, qy, qz);
      if (std::abs(q.norm() - 1.0) > 1e-3) {
        throw MalformedFile(gt_csv + ":" + std::to_string(lineno) +
                            ": quaternion norm deviates beyond 1e-3");
      }
      gt.samples.push_back({static_cast<double>(t_ns) * 1e-9,
                            PoseSE3(q, Eigen::Vector3d(px, py, pz))});
    }
    gt.validate();
    src.ground_truth = std::move(gt);
  }
  src.validate();
  return src;
}

// ---------------------------------------------------------------------------
// Synthetic worlds
// ---------------------------------------------------------------------------

namespace {

CameraIntrinsics default_synthetic_camera() {
  CameraIntrinsics cam;
  cam.fx = 400.0;
  cam.fy = 400.0;
  cam.cx = 320.0;
  cam.cy = 240.0;
  cam.width = 640;
  cam.height = 480;
  return cam;
}

PoseSE3 look_pose(const Eigen::Vector3d& center,
                  const Eigen::Vector3d& forward_in) {
  Eigen::Vector3d forward = forward_in.normalized();
  Eigen::Vector3d down(0, 1, 0);
  down = (down - down.dot(forward) * forward).normalized();
  const Eigen::Vector3d right = down.cross(forward);
  Eigen::Matrix3d r_wc;
  r_wc.col(0) = right;
  r_wc.col(1) = down;
  r_wc.col(2) = forward;
  const Eigen::Matrix3d r_cw = r_wc.transpose();
  return PoseSE3(r_cw, -(r_cw * center));
}

bool landmark_visible(const Eigen::Vector3d& p, const PoseSE3& pose_cw,
                      const CameraIntrinsics& cam, double max_depth) {
  const Eigen::Vector3d q = pose_cw.apply(p);
  if (q.z() < 0.2 || q.z() > max_depth) return false;
  const auto px = project(p, pose_cw, cam);
  return px && cam.contains(*px, 2.0);
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.frame_count < 2 || spec.landmark_count < 1) {
    throw std::invalid_argument("synthetic spec needs >= 2 frames, >= 1 landmark");
  }
  SyntheticDataset ds;
  ds.source.calibration =
      spec.camera.valid() ? spec.camera : default_synthetic_camera();
  const CameraIntrinsics& cam = ds.source.calibration;
  const double r = spec.radius;

  // Camera path.
  for (int i = 0; i < spec.frame_count; ++i) {
    const double u =
        static_cast<double>(i) / static_cast<double>(spec.frame_count - 1);
    Eigen::Vector3d center, forward;
    switch (spec.path) {
      case SyntheticPath::kCircle: {
        const double a = 2.0 * M_PI * spec.revolutions * u;
        center = Eigen::Vector3d(r * std::cos(a), 0.0, r * std::sin(a));
        forward = Eigen::Vector3d(std::cos(a), 0.0, std::sin(a));  // outward
        break;
      }
      case SyntheticPath::kLine: {
        center = Eigen::Vector3d(4.0 * r * u, 0.0, 0.0);
        forward = Eigen::Vector3d(0.0, 0.0, 1.0);
        break;
      }
      case SyntheticPath::kFigureEight: {
        const double a = 2.0 * M_PI * spec.revolutions * u;
        center = Eigen::Vector3d(r * std::sin(a), 0.0,
                                 r * std::sin(a) * std::cos(a));
        // Tangent of the Gerono lemniscate.
        forward = Eigen::Vector3d(std::cos(a), 0.0, std::cos(2.0 * a));
        if (forward.norm() < 1e-9) forward = Eigen::Vector3d(1, 0, 0);
        break;
      }
    }
    ds.world.poses_cw.push_back(look_pose(center, forward));
    SequenceFrame f;
    f.id = static_cast<FrameId>(i);
    f.timestamp = spec.frame_dt * static_cast<double>(i);
    ds.source.frames.push_back(f);
  }

  // Landmarks in a shell around the path, outside the camera ring.
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> shell(spec.shell_near, spec.shell_far);
  std::uniform_real_distribution<double> height(-0.6 * r, 0.6 * r);
  std::uniform_real_distribution<double> along(-0.5 * r, 4.5 * r);
  std::uniform_real_distribution<double> lateral(-1.5 * r, 1.5 * r);
  std::int64_t next_id = 0;
  const double max_depth = spec.max_depth_factor * r;
  for (int i = 0; i < spec.landmark_count; ++i) {
    Eigen::Vector3d p;
    if (spec.path == SyntheticPath::kLine) {
      p = Eigen::Vector3d(along(rng), height(rng), r * shell(rng));
    } else {
      const double a = angle(rng);
      const double rho = r * shell(rng);
      p = Eigen::Vector3d(rho * std::cos(a), height(rng), rho * std::sin(a));
    }
    ds.world.landmarks.emplace(next_id++, p);
  }

  // Enforce the per-frame visibility floor by planting landmarks inside the
  // starved frames' frusta.
  std::uniform_real_distribution<double> px_u(cam.width * 0.1, cam.width * 0.9);
  std::uniform_real_distribution<double> px_v(cam.height * 0.1,
                                              cam.height * 0.9);
  std::uniform_real_distribution<double> depth_u(
      std::max(0.25, 0.25 * max_depth), 0.85 * max_depth);
  for (int pass = 0; pass < 8; ++pass) {
    bool all_satisfied = true;
    for (int i = 0; i < spec.frame_count; ++i) {
      const PoseSE3& pose = ds.world.poses_cw[i];
      int visible = 0;
      for (const auto& [id, p] : ds.world.landmarks) {
        if (landmark_visible(p, pose, cam, max_depth)) ++visible;
      }
      while (visible < spec.min_visible) {
        all_satisfied = false;
        const double depth = depth_u(rng);
        const double x = (px_u(rng) - cam.cx) / cam.fx * depth;
        const double y = (px_v(rng) - cam.cy) / cam.fy * depth;
        const Eigen::Vector3d p =
            pose.inverse().apply(Eigen::Vector3d(x, y, depth));
        ds.world.landmarks.emplace(next_id++, p);
        if (landmark_visible(p, pose, cam, max_depth)) ++visible;
      }
    }
    if (all_satisfied) break;
  }

  ds.world.descriptor_amplitude = spec.descriptor_amplitude;
  ds.world.descriptor_noise_sigma = spec.descriptor_noise_sigma;
  ds.world.max_depth = max_depth;
  ds.world.seed = spec.seed;

  Trajectory gt;
  for (int i = 0; i < spec.frame_count; ++i) {
    gt.samples.push_back(
        {ds.source.frames[i].timestamp, ds.world.poses_cw[i].inverse()});
  }
  ds.source.ground_truth = std::move(gt);
  ds.source.validate();
  return ds;
}

namespace {

class SyntheticFeatureProvider : public FeatureProvider {
 public:
  SyntheticFeatureProvider(const SyntheticWorld& world,
                           const CameraIntrinsics& cam)
      : world_(world), cam_(cam) {}

  FeatureSet extract(const FrameContext& frame) const override {
    if (frame.id < 0 ||
        frame.id >= static_cast<FrameId>(world_.poses_cw.size())) {
      throw MissingFrame("synthetic world has no frame " +
                         std::to_string(frame.id));
    }
    const PoseSE3& pose = world_.poses_cw[frame.id];
    FeatureSet set;
    set.descriptors =
        DescriptorArray::make_float(kSyntheticDescriptorLength);
    for (const auto& [id, p] : world_.landmarks) {
      const Eigen::Vector3d q = pose.apply(p);
      if (q.z() < 0.2 || q.z() > world_.max_depth) continue;
      const auto px = project(p, pose, cam_);
      if (!px || !cam_.contains(*px, 2.0)) continue;
      Keypoint kp;
      kp.x = px->x();
      kp.y = px->y();
      kp.response = 1.0;
      set.keypoints.push_back(kp);
      Descriptor d = synthetic_descriptor(id, world_.descriptor_amplitude);
      if (world_.descriptor_noise_sigma > 0.0) {
        const int slot =
            static_cast<int>(id % kSyntheticDescriptorLength);
        d.floats[slot] += static_cast<float>(noise_for(frame.id, id));
      }
      set.descriptors.push_float(d.floats.data());
    }
    return set;
  }

 private:
  double noise_for(FrameId frame, std::int64_t landmark) const {
    std::uint64_t h = world_.seed;
    h ^= static_cast<std::uint64_t>(frame) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(landmark) * 0xBF58476D1CE4E5B9ull;
    std::mt19937_64 rng(h);
    std::normal_distribution<double> gauss(0.0, world_.descriptor_noise_sigma);
    return gauss(rng);
  }

  const SyntheticWorld& world_;
  CameraIntrinsics cam_;
};

}  // namespace

std::unique_ptr<FeatureProvider> provider_synthetic(
    const SyntheticWorld& world, const CameraIntrinsics& cam) {
  return std::make_unique<SyntheticFeatureProvider>(world, cam);
}

void write_world_file(const SyntheticWorld& world, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write world file: " + path);
  char buf[160];
  out << "WORLD v1\n";
  std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %llu\n",
                world.descriptor_amplitude, world.descriptor_noise_sigma,
                world.max_depth, static_cast<unsigned long long>(world.seed));
  out << buf;
  out << world.landmarks.size() << "\n";
  for (const auto& [id, p] : world.landmarks) {
    std::snprintf(buf, sizeof(buf), "%lld %.17g %.17g %.17g\n",
                  static_cast<long long>(id), p.x(), p.y(), p.z());
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

SyntheticWorld read_world_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open world file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "WORLD v1") {
    throw MalformedFile(path + ":1: expected 'WORLD v1'");
  }
  SyntheticWorld world;
  unsigned long long seed = 0;
  if (!std::getline(in, line)) throw MalformedFile(path + ":2: truncated");
  {
    std::istringstream ls(line);
    if (!(ls >> world.descriptor_amplitude >> world.descriptor_noise_sigma >>
          world.max_depth >> seed)) {
      throw MalformedFile(path + ":2: bad provider parameters");
    }
  }
  world.seed = seed;
  std::size_t count = 0;
  if (!std::getline(in, line)) throw MalformedFile(path + ":3: truncated");
  {
    std::istringstream ls(line);
    if (!(ls >> count)) throw MalformedFile(path + ":3: bad landmark count");
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::string where = path + ":" + std::to_string(i + 4);
    if (!std::getline(in, line)) throw MalformedFile(where + ": truncated");
    std::istringstream ls(line);
    long long id;
    double x, y, z;
    if (!(ls >> id >> x >> y >> z)) {
      throw MalformedFile(where + ": bad landmark record");
    }
    world.landmarks.emplace(id, Eigen::Vector3d(x, y, z));
  }
  return world;
}

void write_synthetic_dataset(const SyntheticDataset& dataset,
                             const std::string& dir) {
  fs::create_directories(dir + "/features");
  {
    std::ofstream calib(dir + "/calib.txt");
    if (!calib) throw IoError("cannot write calib under " + dir);
    const CameraIntrinsics& cam = dataset.source.calibration;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "# fx fy cx cy width height\n%.17g\n%.17g\n%.17g\n%.17g\n"
                  "%d\n%d\n",
                  cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height);
    calib << buf;
  }
  {
    std::ofstream times(dir + "/times.txt");
    char buf[64];
    for (const SequenceFrame& f : dataset.source.frames) {
      std::snprintf(buf, sizeof(buf), "%.9f\n", f.timestamp);
      times << buf;
    }
  }
  if (dataset.source.ground_truth) {
    write_tum_trajectory(*dataset.source.ground_truth,
                         dir + "/groundtruth.tum");
  }
  write_world_file(dataset.world, dir + "/world.txt");
  const auto provider =
      provider_synthetic(dataset.world, dataset.source.calibration);
  for (const SequenceFrame& f : dataset.source.frames) {
    const FeatureSet set = provider->extract({f.id, nullptr});
    write_feature_file(set,
                       dir + "/features/" + std::to_string(f.id) + ".feat");
  }
}

SequenceSource open_synth_dir(const std::string& dir) {
  SequenceSource src;
  src.calibration = read_intrinsics_config(dir + "/calib.txt");
  const std::vector<double> times = read_times_file(dir + "/times.txt");
  if (times.empty()) {
    throw MalformedFile(dir + "/times.txt: missing or empty");
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    SequenceFrame f;
    f.id = static_cast<FrameId>(i);
    f.timestamp = times[i];
    src.frames.push_back(f);
  }
  if (fs::exists(dir + "/groundtruth.tum")) {
    src.ground_truth = read_tum_trajectory(dir + "/groundtruth.tum");
  }
  src.validate();
  return src;
}

SyntheticWorld load_world_for(const SequenceSource& source,
                              const std::string& dir) {
  SyntheticWorld world = read_world_file(dir + "/world.txt");
  if (!source.ground_truth) {
    throw MalformedFile(dir + ": synthetic world needs groundtruth.tum for poses");
  }
  for (const TrajectorySample& s : source.ground_truth->samples) {
    world.poses_cw.push_back(s.pose_wc.inverse());
  }
  return world;
}

}  // namespace vslam
