#include <benchmark/benchmark.h>

#include <random>

#include "vslam/bow.hpp"
#include "vslam/features.hpp"
#include "vslam/optimize.hpp"

using namespace vslam;

namespace {

FeatureSet random_float_set(std::mt19937_64& rng, int count, int length) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  FeatureSet set;
  set.descriptors = DescriptorArray::make_float(length);
  std::vector<float> d(length);
  for (int i = 0; i < count; ++i) {
    Keypoint kp;
    kp.x = static_cast<double>(i % 640);
    kp.y = static_cast<double>(i % 480);
    set.keypoints.push_back(kp);
    for (auto& v : d) v = static_cast<float>(gauss(rng));
    set.descriptors.push_float(d.data());
  }
  return set;
}

void MutualNearestNeighborMatching(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const int n = static_cast<int>(state.range(0));
  const FeatureSet query = random_float_set(rng, n, 128);
  const FeatureSet train = random_float_set(rng, n, 128);
  const MatchThresholds th{10.0, 20.0};
  for (auto _ : state) {
    auto matches = match_descriptors(query, train, th, false);
    benchmark::DoNotOptimize(matches);
  }
  state.SetComplexityN(n);
}
BENCHMARK(MutualNearestNeighborMatching)->Range(64, 1024)->Complexity();

void BundleAdjustmentSolve(benchmark::State& state) {
  const int n_poses = static_cast<int>(state.range(0));
  const int n_points = 25 * n_poses;
  CameraIntrinsics cam;
  cam.fx = cam.fy = 450;
  cam.cx = 320;
  cam.cy = 240;
  cam.width = 640;
  cam.height = 480;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  ReprojectionProblem base;
  base.camera = cam;
  const double radius = 8.0;
  for (int k = 0; k < n_poses; ++k) {
    const double a = 2.0 * M_PI * k / n_poses;
    const Eigen::Vector3d center(radius * std::cos(a), 0.0,
                                 radius * std::sin(a));
    const Eigen::Vector3d forward = (-center).normalized();
    Eigen::Vector3d down(0, 1, 0);
    down = (down - down.dot(forward) * forward).normalized();
    const Eigen::Vector3d right = down.cross(forward);
    Eigen::Matrix3d r_wc;
    r_wc.col(0) = right;
    r_wc.col(1) = down;
    r_wc.col(2) = forward;
    base.poses.emplace_back(Eigen::Matrix3d(r_wc.transpose()),
                            -(r_wc.transpose() * center));
  }
  for (int i = 0; i < n_points; ++i) {
    base.points.emplace_back(2.5 * u(rng), 2.5 * u(rng), 2.5 * u(rng));
  }
  for (int k = 0; k < n_poses; ++k) {
    for (int i = 0; i < n_points; ++i) {
      const auto px = project(base.points[i], base.poses[k], cam);
      if (!px || !cam.contains(*px)) continue;
      base.observations.push_back({k, i, *px});
    }
  }
  base.pose_fixed.assign(n_poses, false);
  base.pose_fixed[0] = true;
  base.point_fixed.assign(n_points, false);

  LMConfig cfg;
  cfg.max_iters = 15;
  for (auto _ : state) {
    state.PauseTiming();
    ReprojectionProblem pb = base;
    for (int k = 1; k < n_poses; ++k) {
      Eigen::Matrix<double, 6, 1> noise;
      for (int j = 0; j < 6; ++j) noise(j) = 0.01 * gauss(rng);
      pb.poses[k] = PoseSE3::exp(noise) * pb.poses[k];
    }
    state.ResumeTiming();
    const SolveReport report = solve_lm(pb, cfg);
    benchmark::DoNotOptimize(report.final_cost);
  }
}
BENCHMARK(BundleAdjustmentSolve)->Arg(5)->Arg(10)->Arg(20)
    ->Unit(benchmark::kMillisecond);

void BowConversionAndQuery(benchmark::State& state) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 0.5);
  DescriptorArray corpus = DescriptorArray::make_float(32);
  for (int c = 0; c < 40; ++c) {
    for (int i = 0; i < 50; ++i) {
      std::vector<float> d(32, 0.0f);
      d[c % 32] = static_cast<float>(20.0 * (1 + c / 32) + gauss(rng));
      corpus.push_float(d.data());
    }
  }
  const Vocabulary vocab = Vocabulary::build(corpus, 3, 8, 11);
  KeyFrameDatabase db;
  std::uniform_int_distribution<int> row(0, corpus.count() - 1);
  std::vector<FeatureSet> frames;
  for (int kf = 0; kf < 100; ++kf) {
    FeatureSet set;
    set.descriptors = DescriptorArray::make_float(32);
    for (int i = 0; i < 200; ++i) {
      set.keypoints.push_back({});
      set.descriptors.push_float(corpus.float_row(row(rng)));
    }
    frames.push_back(set);
    db.add(kf, vocab.to_bow(set));
  }
  int next = 0;
  for (auto _ : state) {
    const BowVector bow = vocab.to_bow(frames[next]);
    auto results = db.query(bow, 0.01);
    benchmark::DoNotOptimize(results);
    next = (next + 1) % 100;
  }
}
BENCHMARK(BowConversionAndQuery);

}  // namespace

BENCHMARK_MAIN();
