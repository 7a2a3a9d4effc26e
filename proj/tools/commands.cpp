#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <memory>
#include <set>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/videoio.hpp>

#include "bkind/evaluation.hpp"
#include "bkind/features.hpp"
#include "bkind/formats.hpp"
#include "bkind/segmentation.hpp"
#include "bkind/training.hpp"
#include "bkind/video_io.hpp"

namespace bkind::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

fs::path default_output(const std::string& name) {
  const char* root = std::getenv("BKIND_OUTPUT_ROOT");
  return (root && *root ? fs::path(root) : fs::path("bkind_out")) / name;
}

namespace {

fs::path output_or_default(const std::string& flag, const std::string& name) {
  return flag.empty() ? default_output(name) : fs::path(flag);
}

// Width of the first frame, so stages after synth work at native size.
int native_resolution(const fs::path& path) {
  if (fs::is_directory(path)) {
    const auto files = list_frame_files(path);
    if (files.empty()) throw IoError("no frames in " + path.string());
    const cv::Mat first = cv::imread(files.front().string(), cv::IMREAD_UNCHANGED);
    if (first.empty()) throw IoError("cannot decode frame: " + files.front().string());
    return first.cols;
  }
  cv::VideoCapture cap(path.string());
  if (!cap.isOpened()) throw IoError("cannot open video " + path.string());
  return static_cast<int>(cap.get(cv::CAP_PROP_FRAME_WIDTH));
}

std::vector<Frame> load_frames(const fs::path& path, int resolution = 0) {
  if (!fs::exists(path)) throw IoError("path does not exist: " + path.string());
  return load_sequence(path, resolution > 0 ? resolution : native_resolution(path));
}

fs::path latest_checkpoint(const fs::path& path) {
  if (!fs::is_directory(path)) {
    if (!fs::exists(path)) throw IoError("checkpoint does not exist: " + path.string());
    return path;
  }
  std::vector<fs::path> found;
  for (const auto& e : fs::directory_iterator(path))
    if (e.path().extension() == ".ckpt" && e.path().stem().string().rfind("epoch_", 0) == 0) found.push_back(e.path());
  if (found.empty()) throw IoError("no epoch_*.ckpt in " + path.string());
  return *std::max_element(found.begin(), found.end());
}

ConfidenceMode parse_confidence(const std::string& s) {
  if (s == "sigmoid") return ConfidenceMode::SigmoidOfRawPeak;
  if (s == "raw") return ConfidenceMode::RawPeak;
  throw UsageError("unknown confidence mode '" + s + "'");
}

// Restricts masks to the frames that were loaded, matched by index.
std::vector<AgentMaskSet> masks_for(const std::vector<Frame>& frames, const fs::path& dir) {
  std::map<int, AgentMaskSet> by_frame;
  for (auto& m : read_mask_directory(dir)) by_frame[m.frame_index] = std::move(m);
  std::vector<AgentMaskSet> out;
  for (const auto& f : frames) {
    const auto it = by_frame.find(f.index);
    if (it == by_frame.end())
      throw std::invalid_argument("mask/frame misalignment: no mask for frame " + std::to_string(f.index));
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

void add_synth(CLI::App& app) {
  struct Opts {
    SyntheticConfig config;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("synth", "Render a synthetic multi-agent video with ground truth");
  cmd->add_option("--agents", o->config.agents, "Number of agents")->capture_default_str()->check(CLI::Range(1, 16));
  cmd->add_option("--frames", o->config.frames, "Number of frames")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--resolution", o->config.resolution, "Frame side in pixels")->capture_default_str();
  cmd->add_option("--seed", o->config.seed, "Random seed")->capture_default_str();
  cmd->add_option("--speed", o->config.speed, "Mean speed, pixels per frame at 256 px")->capture_default_str();
  cmd->add_option("--out", o->out, "Output directory (frames, masks/, keypoints.csv)");
  cmd->callback([o] {
    const fs::path out = output_or_default(o->out, "synth");
    const SyntheticVideo video(o->config);
    fs::create_directories(out);
    std::vector<AgentMaskSet> masks;
    for (int t = 0; t < o->config.frames; ++t) {
      char name[32];
      std::snprintf(name, sizeof name, "%06d.png", t);
      write_frame_png(video.render(t), out / name);
      masks.push_back(from_label_map(video.label_map(t), t));
    }
    write_mask_directory(out / "masks", masks, o->config.resolution, o->config.resolution);
    write_keypoint_csv(out / "keypoints.csv", scene_keypoint_rows(video.scene()));
    std::cout << json{{"out", out.string()}, {"frames", o->config.frames}, {"agents", o->config.agents}}.dump()
              << '\n';
  });
}

void add_segment(CLI::App& app) {
  struct Opts {
    std::string frames, out, gt_masks, detector = "threshold";
    double noise_fraction = 0.2;
    std::uint64_t seed = 0;
    ThresholdDetectorConfig threshold;
    SegmentationParams params;
    int agents = 0;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("segment", "Per-agent masks with consistent ids");
  cmd->add_option("--frames", o->frames, "Frame directory or video file")->required();
  cmd->add_option("--detector", o->detector, "Proposal source")
      ->capture_default_str()
      ->check(CLI::IsMember({"oracle", "noisy-oracle", "threshold"}));
  cmd->add_option("--gt-masks", o->gt_masks, "Label maps for the oracle detectors (default: FRAMES/masks)");
  cmd->add_option("--noise-fraction", o->noise_fraction, "Fraction of fragmented frames (noisy-oracle)")
      ->capture_default_str();
  cmd->add_option("--seed", o->seed, "Seed for the noisy oracle")->capture_default_str();
  cmd->add_option("--dino-threshold", o->threshold.dino_threshold, "Minimum proposal score")->capture_default_str();
  cmd->add_option("--prompt", o->threshold.prompt, "Text prompt for detectors that accept one");
  cmd->add_option("--min-contrast", o->threshold.min_contrast, "Foreground contrast (threshold detector)")
      ->capture_default_str();
  cmd->add_option("--min-area", o->threshold.min_area, "Smallest component in pixels")->capture_default_str();
  cmd->add_option("--size", o->params.size, "Internal processing resolution")->capture_default_str();
  cmd->add_option("--clip-size", o->params.clip_size, "Frames per consensus clip")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--max-misses", o->params.tracker.max_misses, "Misses before a segment is deleted")
      ->capture_default_str();
  cmd->add_option("--assoc-threshold", o->params.tracker.assoc_threshold, "IoU needed to keep an id")
      ->capture_default_str();
  cmd->add_option("--agents", o->agents, "Pin the number of live identities (0 = unpinned)")->capture_default_str();
  cmd->add_option("--out", o->out, "Mask directory to write");
  cmd->callback([o] {
    const auto frames = load_frames(o->frames);
    const fs::path out = output_or_default(o->out, "masks");
    if (o->agents > 0) o->params.tracker.fixed_agents = o->agents;
    std::unique_ptr<Detector> detector;
    if (o->detector == "threshold") {
      detector = std::make_unique<ThresholdDetector>(o->threshold);
    } else {
      const fs::path gt = o->gt_masks.empty() ? fs::path(o->frames) / "masks" : fs::path(o->gt_masks);
      auto labels = read_label_maps(gt);
      if (o->detector == "oracle") detector = std::make_unique<OracleDetector>(std::move(labels));
      else detector = std::make_unique<NoisyOracleDetector>(std::move(labels), o->noise_fraction, o->seed);
    }
    const auto masks = segment_video(frames, *detector, o->params);
    write_mask_directory(out, masks, frames.front().rows(), frames.front().cols());
    std::set<int> ids;
    for (const auto& m : masks)
      for (const auto& s : m.segments) ids.insert(s.id);
    std::cout << json{{"out", out.string()}, {"frames", masks.size()}, {"ids", std::vector<int>(ids.begin(), ids.end())}}
                     .dump()
              << '\n';
  });
}

const std::map<std::string, std::string>& config_help() {
  static const std::map<std::string, std::string> help{
      {"batch_size", "Pairs per optimizer step"},
      {"resolution", "Network input side in pixels"},
      {"frame_gap", "Frames between reference and future"},
      {"learning_rate", "Adam learning rate"},
      {"num_agents", "Agents per frame"},
      {"num_keypoints", "Keypoints per agent"},
      {"epochs", "Training epochs"},
      {"w_r", "Rotation loss weight"},
      {"w_s", "Separation loss weight"},
      {"curriculum_epoch", "Auxiliary losses start after this epoch"},
      {"sigma_s", "Separation loss width"},
      {"target_kind", "Reconstruction target: ssim, absolute or raw"},
      {"seed", "Random seed"},
      {"encoder", "Encoder: resnet50 or tiny"},
      {"gaussian_sigma", "Bottleneck Gaussian width"},
      {"pair_stride", "Step between reference frames"},
      {"max_pairs", "Cap on training pairs (0 = all)"},
      {"mask_heatmaps", "Confine keypoints to agent masks"},
      {"mask_target", "Zero the target outside agent masks"},
      {"stop_on_convergence", "Stop after 3 epochs with < 1% improvement"},
      {"threads", "Intra-op threads"},
  };
  return help;
}

void add_train(CLI::App& app) {
  struct Opts {
    std::string frames, masks, config, out, inline_detector;
    bool tiny = false;
    bool quiet = false;
    std::map<std::string, std::string> overrides;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("train", "Train the keypoint model");
  cmd->add_option("--frames", o->frames, "Frame directory or video file")->required();
  cmd->add_option("--masks", o->masks, "Mask directory from `segment`");
  cmd->add_option("--segment-inline", o->inline_detector,
                  "Segment during training with this detector instead of reading --masks")
      ->check(CLI::IsMember({"oracle", "threshold"}));
  cmd->add_option("--config", o->config, "Config file of `key = value` lines");
  cmd->add_flag("--tiny", o->tiny, "Desk-scale profile (64 px, small encoder)");
  cmd->add_option("--out", o->out, "Run directory");
  cmd->add_flag("--quiet", o->quiet, "No per-epoch progress on stderr");
  for (const auto& key : config_keys()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    const auto it = config_help().find(key);
    cmd->add_option_function<std::string>(
        flag, [o, key](const std::string& v) { o->overrides[key] = v; },
        it == config_help().end() ? key : it->second);
  }
  cmd->callback([o] {
    TrainConfig config = o->tiny ? TrainConfig::tiny() : TrainConfig{};
    try {
      if (!o->config.empty()) config = parse_config_text(read_text(o->config), config);
      for (const auto& [k, v] : o->overrides) set_config_value(config, k, v);
      config.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const auto frames = load_frames(o->frames);
    std::vector<AgentMaskSet> masks;
    if (!o->inline_detector.empty()) {
      SegmentationParams params;
      params.tracker.fixed_agents = config.num_agents;
      if (o->inline_detector == "oracle")
        masks = segment_video(frames, OracleDetector(read_label_maps(fs::path(o->frames) / "masks")), params);
      else
        masks = segment_video(frames, ThresholdDetector(), params);
    } else if (!o->masks.empty()) {
      masks = masks_for(frames, o->masks);
    } else if (config.mask_heatmaps || config.mask_target) {
      throw UsageError("--masks or --segment-inline is required unless masking is disabled");
    }

    const fs::path run = output_or_default(o->out, "run");
    const TrainingData data(frames, masks, config);
    if (data.pair_count() == 0) throw std::runtime_error("no usable training pairs");
    TrainOptions opts;
    opts.run_dir = run;
    if (!o->quiet)
      opts.on_epoch = [&](int epoch, double mean) {
        std::cerr << "epoch " << epoch << "/" << config.epochs << " mean loss " << mean << '\n';
      };
    const auto ckpt = train(config, data, opts);
    std::cout << json{{"run_dir", run.string()},
                      {"epochs", ckpt.epoch},
                      {"steps", ckpt.step},
                      {"pairs", data.pair_count()},
                      {"skipped_frames", data.skipped_frames()},
                      {"skipped_pairs", data.skipped_pairs()},
                      {"final_total", ckpt.history.empty() ? 0.0 : ckpt.history.back().total}}
                     .dump()
              << '\n';
  });
}

void add_infer(CLI::App& app) {
  struct Opts {
    std::string checkpoint, frames, masks, out, confidence = "sigmoid";
    double pixel_size = 0;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("infer", "Extract keypoints with a trained model");
  cmd->add_option("--checkpoint", o->checkpoint, "Checkpoint file or run directory (latest epoch)")->required();
  cmd->add_option("--frames", o->frames, "Frame directory or video file")->required();
  cmd->add_option("--masks", o->masks, "Mask directory from `segment`");
  cmd->add_option("--confidence", o->confidence, "Confidence: sigmoid or raw")
      ->capture_default_str()
      ->check(CLI::IsMember({"sigmoid", "raw"}));
  cmd->add_option("--pixel-size", o->pixel_size, "Image width for pixel coordinates (default: frame width)");
  cmd->add_option("--out", o->out, "Inference CSV to write");
  cmd->callback([o] {
    auto ckpt = load_checkpoint(latest_checkpoint(o->checkpoint));
    const auto frames = load_frames(o->frames);
    std::vector<AgentMaskSet> masks;
    if (ckpt.config.mask_heatmaps) {
      if (o->masks.empty()) throw UsageError("this model needs --masks");
      masks = masks_for(frames, o->masks);
    }
    const auto sets = infer(ckpt.model, frames, masks, parse_confidence(o->confidence));
    const fs::path out = output_or_default(o->out, "keypoints.csv");
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    const double size = o->pixel_size > 0 ? o->pixel_size : frames.front().cols();
    write_inference_csv(out, sets, size);
    std::cout << json{{"out", out.string()}, {"frames", sets.size()}}.dump() << '\n';
  });
}

void add_features(CLI::App& app) {
  struct Opts {
    std::string pred, out;
    int gap = 1;
    bool heatmap = false;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("features", "Trajectory features from an inference CSV");
  cmd->add_option("--pred", o->pred, "Inference CSV")->required();
  cmd->add_option("--gap", o->gap, "Frame gap for speed and acceleration")->capture_default_str();
  cmd->add_flag("--heatmap", o->heatmap, "Append confidence and covariance columns");
  cmd->add_option("--out", o->out, "Feature CSV to write");
  cmd->callback([o] {
    const auto rows = read_inference_csv(o->pred);
    const auto coords = inference_matrix(rows, true);
    if (coords.frames.size() < 2) throw std::runtime_error("need at least two frames of keypoints");
    auto table = trajectory_feature_table(trajectory_features(coords.values, o->gap));
    if (o->heatmap) {
      const auto full = inference_matrix(rows, false);
      const auto extra = full.values.cols() - coords.values.cols();
      Eigen::MatrixXd joined(table.values.rows(), table.values.cols() + extra);
      joined << table.values, full.values.rightCols(extra);
      table.values = joined;
      table.header.insert(table.header.end(), full.columns.end() - extra, full.columns.end());
    }
    const fs::path out = output_or_default(o->out, "features.csv");
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_feature_csv(out, coords.frames, table.header, table.values);
    std::cout << json{{"out", out.string()}, {"frames", coords.frames.size()}, {"features", table.header.size()}}.dump()
              << '\n';
  });
}

void add_eval_regression(CLI::App& app) {
  struct Opts {
    std::string pred, gt;
    double image_size = 0;
    bool keypoints_only = false;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("eval-regression", "Linear regression from discovered to ground-truth keypoints");
  cmd->add_option("--pred", o->pred, "Inference CSV")->required();
  cmd->add_option("--gt", o->gt, "Ground-truth CSV frame,agent,kp,x,y")->required();
  cmd->add_option("--image-size", o->image_size, "Image side used to normalize coordinates")
      ->required()
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--keypoints-only", o->keypoints_only, "Use coordinates only, not confidence and covariance");
  cmd->callback([o] {
    const auto [x, y] = align_frames(inference_matrix(read_inference_csv(o->pred), o->keypoints_only),
                                     keypoint_matrix(read_keypoint_csv(o->gt)));
    if (x.frames.empty()) throw std::runtime_error("no frames in common between prediction and ground truth");
    const auto fit = fit_keypoint_regression(x.values, y.values, o->image_size);
    std::cout << json{{"pct_mse", fit.pct_mse},
                      {"n_frames", fit.n_frames},
                      {"features_used", o->keypoints_only ? "keypoints" : "keypoints+confidence+covariance"},
                      {"n_features", x.values.cols()},
                      {"rank_deficient", fit.rank_deficient}}
                     .dump()
              << '\n';
  });
}

BehaviorDataset load_behavior(const fs::path& features, const fs::path& labels) {
  const auto table = read_feature_csv(features);
  std::map<int, int> by_frame;
  for (const auto& [f, l] : read_label_csv(labels)) by_frame[f] = l;
  BehaviorDataset d;
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < table.frames.size(); ++i) {
    const auto it = by_frame.find(table.frames[i]);
    if (it == by_frame.end()) continue;
    keep.push_back(static_cast<Eigen::Index>(i));
    d.labels.push_back(it->second);
  }
  if (keep.empty()) throw std::runtime_error("features and labels share no frames");
  d.features.resize(static_cast<Eigen::Index>(keep.size()), table.values.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) d.features.row(static_cast<Eigen::Index>(i)) = table.values.row(keep[i]);
  return d;
}

void add_eval_behavior(CLI::App& app) {
  struct Opts {
    std::string features, labels, test_features, test_labels, out;
    ClassifierSpec spec;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("eval-behavior", "Train the 1-D conv behaviour classifier and report MAP");
  cmd->add_option("--features", o->features, "Training feature CSV")->required();
  cmd->add_option("--labels", o->labels, "Training label CSV frame,label")->required();
  cmd->add_option("--test-features", o->test_features, "Held-out feature CSV (default: training set)");
  cmd->add_option("--test-labels", o->test_labels, "Held-out label CSV");
  cmd->add_option("--window", o->spec.window, "Centred window length, odd")->capture_default_str();
  cmd->add_option("--hidden", o->spec.hidden, "Hidden channels")->capture_default_str();
  cmd->add_option("--epochs", o->spec.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch-size", o->spec.batch_size, "Windows per step")->capture_default_str();
  cmd->add_option("--lr", o->spec.learning_rate, "Learning rate")->capture_default_str();
  cmd->add_option("--seed", o->spec.seed, "Random seed")->capture_default_str();
  cmd->add_option("--out", o->out, "Directory for per-class PR curves");
  cmd->callback([o] {
    if (o->test_features.empty() != o->test_labels.empty())
      throw UsageError("--test-features and --test-labels go together");
    const auto train_set = load_behavior(o->features, o->labels);
    const auto test_set =
        o->test_features.empty() ? train_set : load_behavior(o->test_features, o->test_labels);
    if (test_set.features.cols() != train_set.features.cols())
      throw std::runtime_error("train and test feature widths differ");
    const auto clf = train_behavior_classifier(train_set, o->spec);
    const auto scores = clf.predict(test_set.features);
    const auto result = mean_average_precision(scores, test_set.labels);

    const fs::path out = output_or_default(o->out, "behavior");
    fs::create_directories(out);
    json ap = json::object();
    for (std::size_t c = 0; c < result.average_precision.size(); ++c) {
      ap[std::to_string(c)] = result.excluded[c] ? json(nullptr) : json(result.average_precision[c]);
      std::string csv = "threshold,precision,recall\n";
      for (const auto& p : result.curves[c])
        csv += std::to_string(p.threshold) + "," + std::to_string(p.precision) + "," + std::to_string(p.recall) + "\n";
      atomic_write_text(out / ("pr_class_" + std::to_string(c) + ".csv"), csv);
    }
    std::vector<int> excluded;
    for (std::size_t c = 0; c < result.excluded.size(); ++c)
      if (result.excluded[c]) excluded.push_back(static_cast<int>(c));
    std::cout << json{{"map", result.map},
                      {"average_precision", ap},
                      {"excluded", excluded},
                      {"accuracy", accuracy(scores, test_set.labels)},
                      {"n_frames", test_set.labels.size()},
                      {"pr_curves", out.string()}}
                     .dump()
              << '\n';
  });
}

void add_plot(CLI::App& app) {
  auto o = std::make_shared<PlotOptions>();
  auto* cmd = app.add_subcommand("plot", "Loss curves and keypoint overlays for a run");
  cmd->add_option("--run", o->run_dir, "Run directory from `train`")->required();
  cmd->add_option("--frames", o->frames, "Frames to overlay");
  cmd->add_option("--masks", o->masks, "Masks for inference when --pred is not given");
  cmd->add_option("--pred", o->predictions, "Inference CSV to draw");
  cmd->add_option("--checkpoint", o->checkpoint, "Checkpoint for inference (default: latest in --run)");
  cmd->add_option("--count", o->overlays, "Number of overlay frames")->capture_default_str();
  cmd->add_option("--out", o->out, "Output directory (default: RUN/plots)");
  cmd->callback([o] {
    for (const auto& f : run_plot(*o)) std::cout << f.string() << '\n';
  });
}

}  // namespace

void register_commands(CLI::App& app) {
  add_synth(app);
  add_segment(app);
  add_train(app);
  add_infer(app);
  add_features(app);
  add_eval_regression(app);
  add_eval_behavior(app);
  add_plot(app);
}

}  // namespace bkind::cli
