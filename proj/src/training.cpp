#include "bkind/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgproc.hpp>

#include "bkind/formats.hpp"

namespace bkind {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::tiny() {
  TrainConfig c;
  c.resolution = 64;
  c.encoder = "tiny";
  c.frame_gap = 6;
  return c;
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.num_keypoints = num_keypoints;
  m.num_agents = model_agents();
  m.resolution = resolution;
  m.gaussian_sigma = gaussian_sigma;
  m.encoder = encoder;
  m.mask_heatmaps = mask_heatmaps;
  return resolved(m);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (frame_gap < 1) throw std::invalid_argument("frame_gap must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (num_agents < 1) throw std::invalid_argument("num_agents must be positive");
  if (num_keypoints < 1) throw std::invalid_argument("num_keypoints must be positive");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (pair_stride < 1) throw std::invalid_argument("pair_stride must be positive");
  if (max_pairs < 0) throw std::invalid_argument("max_pairs must be non-negative");
  if (threads < 1) throw std::invalid_argument("threads must be positive");
  if (loss_weights.curriculum_epoch < 0) throw std::invalid_argument("curriculum_epoch must be non-negative");
  if (!(loss_weights.sigma_s > 0.0)) throw std::invalid_argument("sigma_s must be positive");
  model_config().validate();
}

namespace {

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !(in >> std::ws).eof()) throw std::invalid_argument("config: bad value for " + key + ": '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  throw std::invalid_argument("config: bad value for " + key + ": '" + text + "'");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
Field number_field(T TrainConfig::*member) {
  return {[member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          },
          [member](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>("value", v); }};
}

Field bool_field(bool TrainConfig::*member) {
  return {[member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member](TrainConfig& c, const std::string& v) { c.*member = parse_bool("value", v); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"batch_size", number_field(&TrainConfig::batch_size)},
      {"resolution", number_field(&TrainConfig::resolution)},
      {"frame_gap", number_field(&TrainConfig::frame_gap)},
      {"learning_rate", number_field(&TrainConfig::learning_rate)},
      {"num_agents", number_field(&TrainConfig::num_agents)},
      {"num_keypoints", number_field(&TrainConfig::num_keypoints)},
      {"epochs", number_field(&TrainConfig::epochs)},
      {"w_r", {[](const TrainConfig& c) { return format_double(c.loss_weights.w_r); },
               [](TrainConfig& c, const std::string& v) { c.loss_weights.w_r = parse_number<double>("w_r", v); }}},
      {"w_s", {[](const TrainConfig& c) { return format_double(c.loss_weights.w_s); },
               [](TrainConfig& c, const std::string& v) { c.loss_weights.w_s = parse_number<double>("w_s", v); }}},
      {"curriculum_epoch",
       {[](const TrainConfig& c) { return std::to_string(c.loss_weights.curriculum_epoch); },
        [](TrainConfig& c, const std::string& v) {
          c.loss_weights.curriculum_epoch = parse_number<int>("curriculum_epoch", v);
        }}},
      {"sigma_s", {[](const TrainConfig& c) { return format_double(c.loss_weights.sigma_s); },
                   [](TrainConfig& c, const std::string& v) {
                     c.loss_weights.sigma_s = parse_number<double>("sigma_s", v);
                   }}},
      {"target_kind", {[](const TrainConfig& c) { return std::string(to_string(c.target_kind)); },
                       [](TrainConfig& c, const std::string& v) { c.target_kind = parse_target_kind(v); }}},
      {"seed", number_field(&TrainConfig::seed)},
      {"encoder", {[](const TrainConfig& c) { return c.encoder; },
                   [](TrainConfig& c, const std::string& v) { c.encoder = v; }}},
      {"gaussian_sigma", number_field(&TrainConfig::gaussian_sigma)},
      {"pair_stride", number_field(&TrainConfig::pair_stride)},
      {"max_pairs", number_field(&TrainConfig::max_pairs)},
      {"mask_heatmaps", bool_field(&TrainConfig::mask_heatmaps)},
      {"mask_target", bool_field(&TrainConfig::mask_target)},
      {"stop_on_convergence", bool_field(&TrainConfig::stop_on_convergence)},
      {"threads", number_field(&TrainConfig::threads)},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [k, f] : fields()) {
    if (k != key) continue;
    try {
      f.set(config, trim(value));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config: bad value for " + key + ": '" + trim(value) + "'");
    }
    return;
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string to_config_text(const TrainConfig& config) {
  std::ostringstream out;
  for (const auto& [k, f] : fields()) out << k << " = " << f.get(config) << '\n';
  return out.str();
}

TrainConfig parse_config_text(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

std::string loss_csv(const std::vector<StepLog>& history) {
  std::ostringstream out;
  out << "step,epoch,recon,rot,sep,total,curriculum_active\n";
  for (const auto& s : history)
    out << s.step << ',' << s.epoch << ',' << format_double(s.recon) << ',' << format_double(s.rotation) << ','
        << format_double(s.separation) << ',' << format_double(s.total) << ',' << (s.curriculum_active ? 1 : 0)
        << '\n';
  return out.str();
}

std::vector<StepLog> parse_loss_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<StepLog> out;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (trim(line).empty()) continue;
    StepLog s;
    int active = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%lf,%d", &s.step, &s.epoch, &s.recon, &s.rotation,
                    &s.separation, &s.total, &active) != 7)
      throw std::invalid_argument("loss csv: malformed row '" + line + "'");
    s.curriculum_active = active != 0;
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data

std::optional<torch::Tensor> agent_mask_tensor(const AgentMaskSet& masks, const ModelConfig& model,
                                               std::vector<int>* ids) {
  if (!model.mask_heatmaps) {
    if (ids) *ids = {1};
    return full_frame_mask(model.heatmap_size());
  }
  const int n = static_cast<int>(masks.segments.size());
  if (n > model.num_agents)
    throw std::invalid_argument("frame " + std::to_string(masks.frame_index) + " has " + std::to_string(n) +
                                " agents, model expects " + std::to_string(model.num_agents));
  if (n < model.num_agents) return std::nullopt;
  const auto planes = split_and_downsample(masks, model.heatmap_size());
  for (const auto& p : planes)
    if (cv::countNonZero(p) == 0) return std::nullopt;
  if (ids) {
    ids->clear();
    for (const auto& s : masks.segments) ids->push_back(s.id);
  }
  return masks_to_tensor(planes);
}

namespace {

std::vector<int> segment_ids(const AgentMaskSet& m) {
  std::vector<int> ids;
  for (const auto& s : m.segments) ids.push_back(s.id);
  return ids;
}

cv::Mat union_mask(const AgentMaskSet& m, int resolution) {
  if (m.segments.empty()) return {};
  cv::Mat acc = cv::Mat::zeros(m.segments.front().mask.size(), CV_8U);
  for (const auto& s : m.segments) cv::bitwise_or(acc, s.mask != 0, acc);
  acc.convertTo(acc, CV_8U, 1.0 / 255.0);
  cv::Mat out;
  cv::resize(acc, out, {resolution, resolution}, 0, 0, cv::INTER_NEAREST);
  return out;
}

torch::Tensor mat_to_tensor(const cv::Mat& values) {
  cv::Mat f;
  values.convertTo(f, CV_32F);
  if (!f.isContinuous()) f = f.clone();
  return torch::from_blob(f.data, {1, f.rows, f.cols}, torch::kFloat32).clone();
}

}  // namespace

TrainingData::TrainingData(const std::vector<Frame>& frames, const std::vector<AgentMaskSet>& masks,
                           const TrainConfig& config) {
  config.validate();
  const auto model = config.model_config();
  const bool use_masks = config.mask_heatmaps || config.mask_target;
  if (use_masks && masks.size() != frames.size())
    throw std::invalid_argument("training data: " + std::to_string(frames.size()) + " frames but " +
                                std::to_string(masks.size()) + " mask sets");

  std::vector<Frame> resized(frames.size());
  std::vector<cv::Mat> unions(frames.size());
  std::vector<std::vector<int>> ids(frames.size());
  images_.resize(frames.size());
  masks_.resize(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    resized[i] = frames[i];
    resized[i].pixels = resize_square(frames[i].pixels, config.resolution);
    images_[i] = frame_to_tensor(resized[i]);
    if (!use_masks) {
      masks_[i] = full_frame_mask(model.heatmap_size());
      ids[i] = {1};
      continue;
    }
    if (masks[i].frame_index != frames[i].index)
      throw std::invalid_argument("mask/frame misalignment at frame " + std::to_string(frames[i].index) +
                                  " (mask set is for frame " + std::to_string(masks[i].frame_index) + ")");
    masks_[i] = agent_mask_tensor(masks[i], model, &ids[i]);
    if (!config.mask_heatmaps) ids[i] = segment_ids(masks[i]);
    if (config.mask_target) unions[i] = union_mask(masks[i], config.resolution);
    if (!masks_[i]) ++skipped_frames_;
  }

  const Frame* base = resized.data();
  for (const auto& pair : sample_pairs(resized, config.frame_gap, config.pair_stride)) {
    const int a = static_cast<int>(pair.reference - base);
    const int b = static_cast<int>(pair.future - base);
    if (!masks_[a] || !masks_[b]) continue;
    if (config.mask_heatmaps && ids[a] != ids[b]) {
      ++skipped_pairs_;
      continue;
    }
    if (config.max_pairs > 0 && static_cast<int>(pairs_.size()) >= config.max_pairs) break;
    auto target = mat_to_tensor(difference_target(pair, config.target_kind).values);
    if (config.mask_target) {
      cv::Mat both;
      if (!unions[a].empty() && !unions[b].empty()) cv::bitwise_or(unions[a], unions[b], both);
      else if (!unions[a].empty()) both = unions[a];
      else both = unions[b];
      if (!both.empty()) target = target * mat_to_tensor(both);
    }
    pairs_.emplace_back(a, b);
    targets_.push_back(target);
  }
}

Batch TrainingData::batch(const std::vector<int>& pair_indices) const {
  std::vector<torch::Tensor> ref, fut, mref, mfut, target;
  for (int p : pair_indices) {
    const auto [a, b] = pairs_.at(p);
    ref.push_back(images_[a]);
    fut.push_back(images_[b]);
    mref.push_back(*masks_[a]);
    mfut.push_back(*masks_[b]);
    target.push_back(targets_[p]);
  }
  return {torch::stack(ref), torch::stack(fut), torch::stack(mref), torch::stack(mfut), torch::stack(target)};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

torch::Tensor text_tensor(const std::string& s) {
  auto t = torch::empty({static_cast<int64_t>(s.size())}, torch::kUInt8);
  std::copy(s.begin(), s.end(), t.data_ptr<uint8_t>());
  return t;
}

std::string tensor_text(const torch::Tensor& t) {
  const auto c = t.contiguous();
  const auto* p = c.data_ptr<uint8_t>();
  return std::string(p, p + c.numel());
}

constexpr int64_t kCheckpointFormat = 1;

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  if (!checkpoint.model) throw std::invalid_argument("save_checkpoint: no model");
  torch::serialize::OutputArchive archive;
  archive.write("format", torch::tensor(kCheckpointFormat));
  archive.write("config", text_tensor(to_config_text(checkpoint.config)));
  archive.write("epoch", torch::tensor(static_cast<int64_t>(checkpoint.epoch)));
  archive.write("step", torch::tensor(static_cast<int64_t>(checkpoint.step)));
  archive.write("history", text_tensor(loss_csv(checkpoint.history)));
  torch::serialize::OutputArchive model;
  checkpoint.model->save(model);
  archive.write("model", model);
  if (checkpoint.optimizer) {
    torch::serialize::OutputArchive optim;
    checkpoint.optimizer->save(optim);
    archive.write("optimizer", optim);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  archive.save_to(tmp.string());
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw std::runtime_error("cannot read checkpoint " + path.string());
  }
  const auto read = [&archive](const char* key) {
    torch::Tensor t;
    archive.read(key, t);
    return t;
  };
  if (read("format").item<int64_t>() != kCheckpointFormat) throw std::runtime_error("unsupported checkpoint format");
  Checkpoint c;
  c.config = parse_config_text(tensor_text(read("config")));
  c.epoch = static_cast<int>(read("epoch").item<int64_t>());
  c.step = static_cast<int>(read("step").item<int64_t>());
  c.history = parse_loss_csv(tensor_text(read("history")));
  c.model = KeypointNet(c.config.model_config());
  torch::serialize::InputArchive model;
  archive.read("model", model);
  c.model->load(model);
  c.optimizer = std::make_shared<torch::optim::Adam>(c.model->parameters(),
                                                     torch::optim::AdamOptions(c.config.learning_rate));
  torch::serialize::InputArchive optim;
  if (archive.try_read("optimizer", optim)) c.optimizer->load(optim);
  return c;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<int> perceptual_channels(const std::string& encoder) {
  return encoder == "tiny" ? std::vector<int>{16, 32, 64} : std::vector<int>{64, 128, 256};
}

void dump_nan(const fs::path& run_dir, const StepLog& s, const Batch& batch) {
  std::ostringstream out;
  out << "non-finite loss at step " << s.step << " epoch " << s.epoch << '\n'
      << "recon=" << s.recon << " rot=" << s.rotation << " sep=" << s.separation << " total=" << s.total << '\n'
      << "reference range [" << batch.reference.min().item<double>() << ", "
      << batch.reference.max().item<double>() << "]\n"
      << "target range [" << batch.target.min().item<double>() << ", " << batch.target.max().item<double>()
      << "]\n";
  if (!run_dir.empty()) atomic_write_text(run_dir / "nan_dump.txt", out.str());
  std::cerr << out.str();
}

}  // namespace

Checkpoint train(const TrainConfig& config, const TrainingData& data, const TrainOptions& options) {
  config.validate();
  if (data.pair_count() == 0) throw std::runtime_error("no usable training pairs");
  torch::set_num_threads(config.threads);
  torch::manual_seed(config.seed);

  Checkpoint state;
  state.config = config;
  state.model = KeypointNet(config.model_config());
  if (options.appearance_audit) state.model->set_appearance_audit(options.appearance_audit);
  state.optimizer = std::make_shared<torch::optim::Adam>(state.model->parameters(),
                                                         torch::optim::AdamOptions(config.learning_rate));
  PerceptualFeatures phi(perceptual_channels(config.encoder), config.seed ^ 0x5eedULL);
  auto& model = state.model;

  if (!options.run_dir.empty()) {
    fs::create_directories(options.run_dir);
    atomic_write_text(options.run_dir / "config.snapshot", to_config_text(config));
  }

  BottleneckFn bottleneck = [&model](const torch::Tensor& images, const torch::Tensor& masks) {
    return model->bottleneck(model->keypoints(images, masks).points);
  };

  std::mt19937_64 rng(config.seed);
  std::vector<int> order(data.pair_count());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> epoch_means;
  int slow_epochs = 0;

  model->train();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const bool active = curriculum_active(epoch, config.loss_weights);
    double epoch_total = 0.0;
    int epoch_steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      const auto batch = data.batch(std::vector<int>(order.begin() + begin, order.begin() + end));
      const auto out = model->forward_pair(batch.reference, batch.future, batch.masks_ref, batch.masks_future);
      const auto recon = perceptual_loss(batch.target, out.reconstruction, phi);
      torch::Tensor rot, sep;
      {
        // Before the curriculum switches on the auxiliary terms are only
        // reported.
        std::optional<torch::NoGradGuard> no_grad;
        if (!active) no_grad.emplace();
        sep = separation_loss(out.reference.points, config.loss_weights.sigma_s);
        rot = rotation_equivariance_loss(bottleneck, batch.reference, batch.masks_ref,
                                         model->bottleneck(out.reference.points));
      }
      const auto total = combine_losses(recon, rot, sep, config.loss_weights, epoch);

      StepLog s;
      s.step = ++state.step;
      s.epoch = epoch;
      s.recon = recon.item<double>();
      s.rotation = rot.item<double>();
      s.separation = sep.item<double>();
      s.total = total.item<double>();
      s.curriculum_active = active;
      if (!std::isfinite(s.total)) {
        dump_nan(options.run_dir, s, batch);
        throw std::runtime_error("non-finite loss at step " + std::to_string(s.step));
      }
      state.optimizer->zero_grad();
      total.backward();
      state.optimizer->step();
      state.history.push_back(s);
      if (options.on_step) options.on_step(s);
      epoch_total += s.total;
      ++epoch_steps;
    }
    state.epoch = epoch;
    const double mean = epoch_total / std::max(1, epoch_steps);
    if (options.on_epoch) options.on_epoch(epoch, mean);
    if (!options.run_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
      save_checkpoint(options.run_dir / name, state);
      atomic_write_text(options.run_dir / "losses.csv", loss_csv(state.history));
    }
    if (config.stop_on_convergence && active && !epoch_means.empty() &&
        curriculum_active(epoch - 1, config.loss_weights)) {
      const double previous = epoch_means.back();
      slow_epochs = (previous - mean) < 0.01 * std::abs(previous) ? slow_epochs + 1 : 0;
    }
    epoch_means.push_back(mean);
    if (slow_epochs >= 3) break;
  }
  model->eval();
  return state;
}

Checkpoint train(const TrainConfig& config, const std::vector<Frame>& frames, const std::vector<AgentMaskSet>& masks,
                 const TrainOptions& options) {
  const TrainingData data(frames, masks, config);
  if (data.skipped_frames() > 0)
    std::cerr << "skipped " << data.skipped_frames() << " frames with too few tracked agents\n";
  if (data.skipped_pairs() > 0)
    std::cerr << "skipped " << data.skipped_pairs() << " pairs with mismatched agent ids\n";
  return train(config, data, options);
}

// ---------------------------------------------------------------------------
// Inference

KeypointSet keypoint_set_from(const KeypointOutputs& outputs, int b, int frame_index, const std::vector<int>& ids,
                              ConfidenceMode confidence) {
  const auto probs = outputs.probs[b].to(torch::kDouble).contiguous();     // [N,K,h,w]
  const auto masked = outputs.masked[b].to(torch::kDouble).contiguous();   // [N,K,h,w]
  const auto points = outputs.points[b].to(torch::kDouble).contiguous();   // [N,K,2]
  const int n_agents = static_cast<int>(probs.size(0));
  const int k_points = static_cast<int>(probs.size(1));
  const int h = static_cast<int>(probs.size(2));
  const int w = static_cast<int>(probs.size(3));
  if (static_cast<int>(ids.size()) != n_agents) throw std::invalid_argument("keypoint_set_from: id count mismatch");

  KeypointSet set;
  set.frame_index = frame_index;
  set.num_agents = n_agents;
  set.num_keypoints = k_points;
  set.agent_ids = ids;
  set.points.resize(static_cast<std::size_t>(n_agents) * k_points);
  const auto pa = points.accessor<double, 3>();
  for (int n = 0; n < n_agents; ++n)
    for (int k = 0; k < k_points; ++k) {
      const auto map = probs[n][k];
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> src(
          map.data_ptr<double>(), h, w);
      const Eigen::MatrixXd m = src;
      const double u = pa[n][k][0];
      const double v = pa[n][k][1];
      const double peak = masked[n][k].max().item<double>();
      const auto f = heatmap_moments(m, u, v, peak, confidence);
      auto& kp = set.at(n, k);
      kp.u = u;
      kp.v = v;
      kp.confidence = f.confidence;
      kp.cov_xx = f.cov_xx;
      kp.cov_xy = f.cov_xy;
      kp.cov_yy = f.cov_yy;
    }
  return set;
}

std::vector<KeypointSet> infer(KeypointNet& model, const std::vector<Frame>& frames,
                               const std::vector<AgentMaskSet>& masks, ConfidenceMode confidence) {
  const auto& cfg = model->config();
  if (cfg.mask_heatmaps && masks.size() != frames.size())
    throw std::invalid_argument("infer: " + std::to_string(frames.size()) + " frames but " +
                                std::to_string(masks.size()) + " mask sets");
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<KeypointSet> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::vector<int> ids;
    std::optional<torch::Tensor> m;
    if (cfg.mask_heatmaps) {
      if (masks[i].frame_index != frames[i].index)
        throw std::invalid_argument("mask/frame misalignment at frame " + std::to_string(frames[i].index));
      m = agent_mask_tensor(masks[i], cfg, &ids);
      if (!m)
        throw std::invalid_argument("frame " + std::to_string(frames[i].index) + " has fewer than " +
                                    std::to_string(cfg.num_agents) + " tracked agents");
    } else {
      m = full_frame_mask(cfg.heatmap_size());
      ids = {1};
    }
    Frame f = frames[i];
    f.pixels = resize_square(frames[i].pixels, cfg.resolution);
    const auto outputs = model->keypoints(frame_to_tensor(f).unsqueeze(0), m->unsqueeze(0));
    out.push_back(keypoint_set_from(outputs, 0, frames[i].index, ids, confidence));
  }
  return out;
}

}  // namespace bkind
