// Command-line front end: run | vocab-build | distort | evaluate | losses |
// synth. Exit codes: 0 success, 1 modeled failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "vslam/distortion.hpp"
#include "vslam/errors.hpp"
#include "vslam/feature_loss.hpp"
#include "vslam/system.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vslam;

namespace {

struct RunOptions {
  std::string dataset_kind = "synth";
  std::string dataset_dir;
  std::string features = "synthetic";
  std::string vocab_path;
  std::string loop_closing = "off";
  std::string out_dir = "out";
  double th_low = 2.0;
  double th_high = 3.0;
  bool adaptive = false;
  double th_min = 0.5;
  double th_max = 4.0;
  double drift = 1.0;
  std::uint64_t seed = 7;
  bool trace = false;
};

json flags_manifest(const RunOptions& opt) {
  return json{{"dataset", opt.dataset_kind},
              {"path", opt.dataset_dir},
              {"features", opt.features},
              {"vocab", opt.vocab_path},
              {"loop_closing", opt.loop_closing},
              {"th_low", opt.th_low},
              {"th_high", opt.th_high},
              {"adaptive", opt.adaptive},
              {"th_min", opt.th_min},
              {"th_max", opt.th_max},
              {"drift", opt.drift},
              {"seed", opt.seed},
              {"trace", opt.trace}};
}

int command_run(const RunOptions& opt) {
  SequenceSource source;
  if (opt.dataset_kind == "kitti") {
    source = open_kitti(opt.dataset_dir);
  } else if (opt.dataset_kind == "euroc") {
    source = open_euroc(opt.dataset_dir);
  } else if (opt.dataset_kind == "synth") {
    source = open_synth_dir(opt.dataset_dir);
  } else {
    throw std::invalid_argument("unknown dataset kind: " + opt.dataset_kind);
  }

  std::unique_ptr<FeatureProvider> provider;
  SyntheticWorld world;
  if (opt.features == "native") {
    provider = provider_native(NativeFeatureConfig{});
  } else if (opt.features.rfind("files:", 0) == 0) {
    provider = provider_from_files(opt.features.substr(6));
  } else if (opt.features == "synthetic") {
    world = load_world_for(source, opt.dataset_dir);
    provider = provider_synthetic(world, source.calibration);
  } else {
    throw std::invalid_argument("unknown feature provider: " + opt.features);
  }

  Vocabulary vocab;
  if (!opt.vocab_path.empty()) vocab = Vocabulary::load(opt.vocab_path);

  RunConfig cfg;
  cfg.tracker.thresholds = {opt.th_low, opt.th_high};
  cfg.tracker.adaptive = opt.adaptive;
  cfg.tracker.adaptive_cfg.th_min = opt.th_min;
  cfg.tracker.adaptive_cfg.th_max = opt.th_max;
  cfg.tracker.drift_translation_scale = opt.drift;
  cfg.tracker.ransac.seed = opt.seed;
  cfg.loop.seed = opt.seed;
  cfg.seed = opt.seed;
  if (opt.loop_closing == "off") {
    cfg.loop_mode = LoopClosingMode::kOff;
  } else if (opt.loop_closing == "interleaved") {
    cfg.loop_mode = LoopClosingMode::kInterleaved;
  } else if (opt.loop_closing == "threaded") {
    cfg.loop_mode = LoopClosingMode::kThreaded;
  } else {
    throw std::invalid_argument("unknown loop-closing mode: " +
                                opt.loop_closing);
  }
  fs::create_directories(opt.out_dir);
  if (opt.trace) {
    cfg.trace = true;
    cfg.trace_path = opt.out_dir + "/trace.csv";
  }

  System system(source, *provider, cfg,
                vocab.empty() ? nullptr : &vocab);
  const RunResult result = system.run();

  write_tum_trajectory(result.trajectory, opt.out_dir + "/trajectory.tum");
  {
    json stats{{"total_frames", result.stats.total_frames},
               {"tracked_frames", result.stats.tracked_frames},
               {"lost_frames", result.stats.lost_frames},
               {"keyframes", result.stats.keyframes},
               {"map_points", result.stats.map_points},
               {"loops_closed", result.stats.loops_closed},
               {"relocalizations", result.stats.relocalizations}};
    std::ofstream out(opt.out_dir + "/stats.json");
    out << stats.dump(2) << "\n";
  }
  {
    json manifest{{"command", "run"}, {"flags", flags_manifest(opt)}};
    std::ofstream out(opt.out_dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
  }

  if (source.ground_truth && !result.trajectory.empty()) {
    const MetricReport report = compute_metrics(
        result.trajectory, *source.ground_truth,
        RpeMode::length_based(kitti_rpe_lengths()));
    emit_report(report, result.trajectory, *source.ground_truth, opt.out_dir);
    std::cout << "ATE (rmse): " << report.ate_rmse << "\n";
    std::cout << "RPE trans (%): " << report.rpe_trans_percent << "\n";
    std::cout << "RPE rot (deg/m): " << report.rpe_rot_deg_per_m << "\n";
  }
  std::cout << "tracked " << result.stats.tracked_frames << "/"
            << result.stats.total_frames << " frames, "
            << result.stats.keyframes << " keyframes, "
            << result.stats.map_points << " points, "
            << result.stats.loops_closed << " loops closed\n";
  return 0;
}

int command_vocab_build(const std::string& features_dir, int levels,
                        int branching, std::uint64_t seed,
                        const std::string& out_path) {
  DescriptorArray corpus;
  bool first = true;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(features_dir)) {
    if (entry.path().extension() == ".feat") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw IoError("no .feat files under " + features_dir);
  }
  for (const fs::path& path : files) {
    const FeatureSet set = read_feature_file(path.string());
    if (first && set.size() > 0) {
      corpus = set.descriptors.variant() == DescriptorVariant::kFloat
                   ? DescriptorArray::make_float(set.descriptors.length())
                   : DescriptorArray::make_binary(set.descriptors.length());
      first = false;
    }
    for (int i = 0; i < set.size(); ++i) {
      if (corpus.variant() == DescriptorVariant::kFloat) {
        corpus.push_float(set.descriptors.float_row(i));
      } else {
        corpus.push_binary(set.descriptors.word_row(i));
      }
    }
  }
  const Vocabulary vocab = Vocabulary::build(corpus, levels, branching, seed);
  vocab.save(out_path);
  {
    json manifest{{"command", "vocab-build"}, {"features", features_dir},
                  {"levels", levels},         {"branching", branching},
                  {"seed", seed}};
    std::ofstream out(out_path + ".manifest.json");
    out << manifest.dump(2) << "\n";
  }
  std::cout << "vocabulary: " << vocab.node_count() << " nodes, "
            << vocab.leaf_count() << " words -> " << out_path << "\n";
  return 0;
}

int command_distort(const std::string& input_dir, const std::string& out_dir,
                    const DistortionSpec& spec) {
  spec.validate();
  fs::create_directories(out_dir);

  // Locate the image directory (kitti-style image_0/, images/, or flat).
  std::string rel;
  for (const char* candidate : {"image_0", "images"}) {
    if (fs::is_directory(fs::path(input_dir) / candidate)) {
      rel = candidate;
      break;
    }
  }
  std::vector<fs::path> images;
  const fs::path img_dir = rel.empty() ? fs::path(input_dir)
                                       : fs::path(input_dir) / rel;
  for (const auto& entry : fs::directory_iterator(img_dir)) {
    const std::string ext = entry.path().extension().string();
    if (ext == ".png" || ext == ".pgm") images.push_back(entry.path());
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw MissingImages("no images under " + img_dir.string());

  const fs::path out_img_dir =
      rel.empty() ? fs::path(out_dir) : fs::path(out_dir) / rel;
  fs::create_directories(out_img_dir);

  int kept = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (spec.kind == DistortionSpec::Kind::kFrameSkip &&
        i % static_cast<std::size_t>(spec.skip) != 0) {
      continue;
    }
    GrayImage img = read_gray_image(images[i].string());
    if (spec.kind != DistortionSpec::Kind::kFrameSkip) {
      img = apply_distortion(img, spec);
    }
    const fs::path out_path = out_img_dir / images[i].filename();
    if (images[i].extension() == ".png") {
      write_png(img, out_path.string());
    } else {
      write_pgm(img, out_path.string());
    }
    ++kept;
  }
  // Carry sidecar files; subsample per-frame line files when skipping.
  for (const char* name : {"calib.txt", "times.txt", "poses.txt"}) {
    const fs::path src = fs::path(input_dir) / name;
    if (!fs::exists(src)) continue;
    if (spec.kind == DistortionSpec::Kind::kFrameSkip &&
        (std::string(name) == "times.txt" || std::string(name) == "poses.txt")) {
      std::ifstream in(src);
      std::ofstream out(fs::path(out_dir) / name);
      std::string line;
      for (std::size_t i = 0; std::getline(in, line); ++i) {
        if (i % static_cast<std::size_t>(spec.skip) == 0) out << line << "\n";
      }
    } else {
      fs::copy_file(src, fs::path(out_dir) / name,
                    fs::copy_options::overwrite_existing);
    }
  }

  json manifest{{"command", "distort"}, {"input", input_dir}};
  switch (spec.kind) {
    case DistortionSpec::Kind::kGamma:
      manifest["kind"] = "gamma";
      manifest["gamma"] = spec.gamma;
      break;
    case DistortionSpec::Kind::kQuantileTruncate:
      manifest["kind"] = "quantile";
      manifest["quantile"] = spec.quantile == Quantile::kQ1 ? "q1" : "q3";
      break;
    case DistortionSpec::Kind::kSaltPepper:
      manifest["kind"] = "salt-pepper";
      manifest["p"] = spec.salt_prob;
      manifest["seed"] = spec.seed;
      break;
    case DistortionSpec::Kind::kFrameSkip:
      manifest["kind"] = "frame-skip";
      manifest["n"] = spec.skip;
      break;
  }
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
  std::cout << "wrote " << kept << " images to " << out_dir << "\n";
  return 0;
}

Trajectory read_trajectory_any(const std::string& path,
                               const std::string& format) {
  if (format == "kitti") return read_kitti_poses(path);
  return read_tum_trajectory(path);
}

int command_evaluate(const std::string& est_path, const std::string& gt_path,
                     const std::string& est_format,
                     const std::string& gt_format, const std::string& rpe_mode,
                     const std::string& out_dir) {
  const Trajectory est = read_trajectory_any(est_path, est_format);
  const Trajectory gt = read_trajectory_any(gt_path, gt_format);
  RpeMode mode = RpeMode::length_based(kitti_rpe_lengths());
  if (rpe_mode.rfind("delta:", 0) == 0) {
    mode = RpeMode::fixed_delta(std::stoi(rpe_mode.substr(6)));
  } else if (rpe_mode != "kitti") {
    throw std::invalid_argument("unknown rpe mode: " + rpe_mode);
  }
  const MetricReport report = compute_metrics(est, gt, mode);
  std::cout << "ATE (rmse): " << report.ate_rmse << "\n";
  std::cout << "RPE trans (%): " << report.rpe_trans_percent << "\n";
  std::cout << "RPE rot (deg/m): " << report.rpe_rot_deg_per_m << "\n";
  if (report.rpe_fell_back) {
    std::cout << "note: sequence shorter than the evaluation lengths; RPE "
                 "used frame delta 1\n";
  }
  if (!out_dir.empty()) {
    emit_report(report, est, gt, out_dir);
    json manifest{{"command", "evaluate"},     {"est", est_path},
                  {"gt", gt_path},             {"est_format", est_format},
                  {"gt_format", gt_format},    {"rpe_mode", rpe_mode}};
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
    std::cout << "report written to " << out_dir << "\n";
  }
  return 0;
}

int command_losses(const std::string& input_path, double beta, double margin,
                   double gamma_balance) {
  std::ifstream in(input_path);
  if (!in) throw IoError("cannot open losses input: " + input_path);
  json spec = json::parse(in);
  json out;

  auto to_vec = [](const json& arr) {
    Eigen::VectorXd v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) v(i) = arr[i].get<double>();
    return v;
  };
  auto to_map = [](const json& rows) {
    ScoreMap m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < rows[i].size(); ++j) {
        m(i, j) = rows[i][j].get<double>();
      }
    }
    return m;
  };

  if (spec.contains("descriptor_pairs")) {
    json values = json::array();
    for (const auto& pair : spec["descriptor_pairs"]) {
      const PairRelation rel = pair["relation"] == "negative"
                                   ? PairRelation::kNegative
                                   : PairRelation::kPositive;
      values.push_back(descriptor_loss(to_vec(pair["a"]), to_vec(pair["b"]),
                                       rel, margin));
    }
    out["descriptor_losses"] = values;
  }
  if (spec.contains("orientation_pairs")) {
    json values = json::array();
    for (const auto& pair : spec["orientation_pairs"]) {
      values.push_back(
          orientation_loss(to_vec(pair["d1"]), to_vec(pair["d2"])));
    }
    out["orientation_losses"] = values;
  }
  if (spec.contains("score_maps")) {
    json centers = json::array();
    for (const auto& rows : spec["score_maps"]) {
      const Eigen::Vector2d xy = softargmax(to_map(rows), beta);
      centers.push_back(json::array({xy.x(), xy.y()}));
    }
    out["softargmax"] = centers;
    if (spec["score_maps"].size() == 4) {
      DetectorLossConfig cfg;
      cfg.beta = beta;
      cfg.margin = margin;
      cfg.gamma_balance = gamma_balance;
      std::array<ScoreMap, 4> maps{
          to_map(spec["score_maps"][0]), to_map(spec["score_maps"][1]),
          to_map(spec["score_maps"][2]), to_map(spec["score_maps"][3])};
      out["classification_loss"] = classification_loss(maps, cfg);
    }
  }
  if (spec.contains("pair_descriptors")) {
    const double lp = pair_loss(to_vec(spec["pair_descriptors"]["d1"]),
                                to_vec(spec["pair_descriptors"]["d2"]));
    out["pair_loss"] = lp;
    if (out.contains("classification_loss")) {
      out["detector_loss"] = detector_loss(
          out["classification_loss"].get<double>(), lp, gamma_balance);
    }
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int command_synth(const std::string& path_kind, int frames, int landmarks,
                  std::uint64_t seed, double noise_sigma, double revolutions,
                  const std::string& out_dir) {
  SyntheticSpec spec;
  if (path_kind == "circle") {
    spec.path = SyntheticPath::kCircle;
  } else if (path_kind == "line") {
    spec.path = SyntheticPath::kLine;
  } else if (path_kind == "eight") {
    spec.path = SyntheticPath::kFigureEight;
  } else {
    throw std::invalid_argument("unknown path kind: " + path_kind);
  }
  spec.frame_count = frames;
  spec.landmark_count = landmarks;
  spec.seed = seed;
  spec.descriptor_noise_sigma = noise_sigma;
  spec.revolutions = revolutions;
  const SyntheticDataset dataset = generate_synthetic(spec);
  write_synthetic_dataset(dataset, out_dir);
  json manifest{{"command", "synth"},  {"path", path_kind},
                {"frames", frames},    {"landmarks", landmarks},
                {"seed", seed},        {"noise_sigma", noise_sigma},
                {"revolutions", revolutions}};
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
  std::cout << "synthetic dataset with "
            << dataset.world.landmarks.size() << " landmarks -> " << out_dir
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular keyframe visual SLAM toolbox"};
  app.require_subcommand(1);

  // --- run ---
  RunOptions run_opt;
  CLI::App* run = app.add_subcommand("run", "Run the SLAM pipeline");
  run->add_option("--dataset", run_opt.dataset_kind,
                  "Dataset layout: kitti|euroc|synth")
      ->check(CLI::IsMember({"kitti", "euroc", "synth"}));
  run->add_option("path", run_opt.dataset_dir, "Dataset directory")
      ->required();
  run->add_option("--features", run_opt.features,
                  "Feature provider: native|files:<dir>|synthetic");
  run->add_option("--vocab", run_opt.vocab_path, "Vocabulary file");
  run->add_option("--loop-closing", run_opt.loop_closing,
                  "off|interleaved|threaded")
      ->check(CLI::IsMember({"off", "interleaved", "threaded"}));
  run->add_option("--th-low", run_opt.th_low, "Matching threshold (strict)");
  run->add_option("--th-high", run_opt.th_high, "Matching threshold (loose)");
  run->add_flag("--adaptive", run_opt.adaptive, "Adaptive thresholds");
  run->add_option("--th-min", run_opt.th_min, "Adaptive clamp lower bound");
  run->add_option("--th-max", run_opt.th_max, "Adaptive clamp upper bound");
  run->add_option("--drift", run_opt.drift,
                  "Injected per-frame translation drift scale (testing)");
  run->add_option("--seed", run_opt.seed, "Random seed");
  run->add_option("--out", run_opt.out_dir, "Output directory");
  run->add_flag("--trace", run_opt.trace, "Write per-frame tracking trace");

  // --- vocab-build ---
  std::string vb_features, vb_out = "vocab.txt";
  int vb_levels = 6, vb_branching = 10;
  std::uint64_t vb_seed = 7;
  CLI::App* vb = app.add_subcommand("vocab-build",
                                    "Train a vocabulary from feature files");
  vb->add_option("--features", vb_features, "Directory of .feat files")
      ->required();
  vb->add_option("--levels", vb_levels, "Tree depth");
  vb->add_option("--branching", vb_branching, "Clusters per level");
  vb->add_option("--seed", vb_seed, "Random seed");
  vb->add_option("--out", vb_out, "Output vocabulary file");

  // --- distort ---
  std::string d_input, d_out = "distorted";
  double d_gamma = 0.0, d_salt = -1.0;
  std::string d_quantile;
  int d_skip = 0;
  std::uint64_t d_seed = 7;
  CLI::App* distort = app.add_subcommand(
      "distort", "Write a distorted copy of an image sequence");
  distort->add_option("input", d_input, "Sequence directory")->required();
  distort->add_option("--out", d_out, "Output directory");
  distort->add_option("--gamma", d_gamma, "Gamma power transform");
  distort->add_option("--quantile", d_quantile, "q1|q3 truncation")
      ->check(CLI::IsMember({"q1", "q3"}));
  distort->add_option("--salt-pepper", d_salt, "Salt-and-pepper probability");
  distort->add_option("--skip", d_skip, "Keep every n-th frame");
  distort->add_option("--seed", d_seed, "Noise seed");

  // --- evaluate ---
  std::string e_est, e_gt, e_est_format = "tum", e_gt_format = "tum";
  std::string e_rpe = "kitti", e_out;
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "ATE/RPE between two trajectories");
  evaluate->add_option("--est", e_est, "Estimated trajectory")->required();
  evaluate->add_option("--gt", e_gt, "Ground-truth trajectory")->required();
  evaluate->add_option("--est-format", e_est_format, "tum|kitti")
      ->check(CLI::IsMember({"tum", "kitti"}));
  evaluate->add_option("--gt-format", e_gt_format, "tum|kitti")
      ->check(CLI::IsMember({"tum", "kitti"}));
  evaluate->add_option("--rpe-mode", e_rpe, "kitti|delta:<n>");
  evaluate->add_option("--out", e_out, "Write metrics.csv + plots here");

  // --- losses ---
  std::string l_input;
  double l_beta = 10.0, l_margin = 4.0, l_gamma = 1.0;
  CLI::App* losses = app.add_subcommand(
      "losses", "Evaluate the learned-feature training losses on a JSON file");
  losses->add_option("--input", l_input, "JSON input (see docs/formats.md)")
      ->required();
  losses->add_option("--beta", l_beta, "Soft maximum / softargmax sharpness");
  losses->add_option("--margin", l_margin, "Negative-pair hinge margin");
  losses->add_option("--gamma", l_gamma, "Detector loss balance");

  // --- synth ---
  std::string s_path = "circle", s_out = "synth";
  int s_frames = 200, s_landmarks = 500;
  std::uint64_t s_seed = 7;
  double s_noise = 0.0, s_revs = 1.1;
  CLI::App* synth =
      app.add_subcommand("synth", "Generate a synthetic dataset on disk");
  synth->add_option("--path", s_path, "circle|line|eight")
      ->check(CLI::IsMember({"circle", "line", "eight"}));
  synth->add_option("--frames", s_frames, "Frame count");
  synth->add_option("--landmarks", s_landmarks, "Landmark count");
  synth->add_option("--seed", s_seed, "World seed");
  synth->add_option("--noise-sigma", s_noise, "Descriptor noise sigma");
  synth->add_option("--revolutions", s_revs, "Path revolutions (circle/eight)");
  synth->add_option("--out", s_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (run->parsed()) {
      if (run_opt.loop_closing != "off" && run_opt.vocab_path.empty()) {
        std::cerr << "error: --loop-closing requires --vocab\n";
        return 2;
      }
      return command_run(run_opt);
    }
    if (vb->parsed()) {
      return command_vocab_build(vb_features, vb_levels, vb_branching, vb_seed,
                                 vb_out);
    }
    if (distort->parsed()) {
      DistortionSpec spec;
      int selected = 0;
      if (d_gamma > 0.0) {
        spec.kind = DistortionSpec::Kind::kGamma;
        spec.gamma = d_gamma;
        ++selected;
      }
      if (!d_quantile.empty()) {
        spec.kind = DistortionSpec::Kind::kQuantileTruncate;
        spec.quantile = d_quantile == "q1" ? Quantile::kQ1 : Quantile::kQ3;
        ++selected;
      }
      if (d_salt >= 0.0) {
        spec.kind = DistortionSpec::Kind::kSaltPepper;
        spec.salt_prob = d_salt;
        spec.seed = d_seed;
        ++selected;
      }
      if (d_skip > 0) {
        spec.kind = DistortionSpec::Kind::kFrameSkip;
        spec.skip = d_skip;
        ++selected;
      }
      if (selected != 1) {
        std::cerr << "error: pick exactly one of --gamma, --quantile, "
                     "--salt-pepper, --skip\n";
        return 2;
      }
      return command_distort(d_input, d_out, spec);
    }
    if (evaluate->parsed()) {
      return command_evaluate(e_est, e_gt, e_est_format, e_gt_format, e_rpe,
                              e_out);
    }
    if (losses->parsed()) {
      return command_losses(l_input, l_beta, l_margin, l_gamma);
    }
    if (synth->parsed()) {
      return command_synth(s_path, s_frames, s_landmarks, s_seed, s_noise,
                           s_revs, s_out);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
