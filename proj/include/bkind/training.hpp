#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "bkind/features.hpp"
#include "bkind/keypoint_net.hpp"
#include "bkind/keypoint_set.hpp"
#include "bkind/losses.hpp"
#include "bkind/segmentation.hpp"
#include "bkind/target.hpp"
#include "bkind/video_io.hpp"

namespace bkind {

struct TrainConfig {
  int batch_size = 5;
  int resolution = 256;
  int frame_gap = 6;
  double learning_rate = 1e-3;
  int num_agents = 2;
  int num_keypoints = 10;
  int epochs = 30;
  LossWeights loss_weights;
  TargetKind target_kind = TargetKind::SsimDissimilarity;
  std::uint64_t seed = 0;

  std::string encoder = "resnet50";
  double gaussian_sigma = 0.1;
  int pair_stride = 1;
  int max_pairs = 0;  ///< 0 = use every pair
  /// Per-agent heatmap masking. When off the model sees one full-frame
  /// agent and segmentation masks are ignored.
  bool mask_heatmaps = true;
  /// Zero the reconstruction target outside the agents' masks.
  bool mask_target = true;
  /// Stop once the epoch-average loss improves by less than 1% for three
  /// consecutive epochs.
  bool stop_on_convergence = false;
  int threads = 1;

  /// Desk-scale profile: 64 px input and the tiny encoder.
  static TrainConfig tiny();

  ModelConfig model_config() const;
  int model_agents() const { return mask_heatmaps ? num_agents : 1; }
  void validate() const;
};

/// Flat `key = value` text, one field per line, keys named as the fields
/// (loss weights flattened to w_r, w_s, curriculum_epoch, sigma_s).
std::string to_config_text(const TrainConfig& config);
/// Applies the keys in `text` on top of `base`. Unknown keys and malformed
/// values throw std::invalid_argument. '#' starts a comment.
TrainConfig parse_config_text(const std::string& text, TrainConfig base = {});
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

struct StepLog {
  int step = 0;
  int epoch = 0;
  double recon = 0.0;
  double rotation = 0.0;
  double separation = 0.0;
  double total = 0.0;
  bool curriculum_active = false;
};

/// `step,epoch,recon,rot,sep,total,curriculum_active`
std::string loss_csv(const std::vector<StepLog>& history);
std::vector<StepLog> parse_loss_csv(const std::string& text);

/// Agent masks at heatmap resolution, [N,h,w], agents ordered by id.
/// Returns nullopt when the set holds fewer agents than the model expects
/// and throws when it holds more.
std::optional<torch::Tensor> agent_mask_tensor(const AgentMaskSet& masks, const ModelConfig& model,
                                               std::vector<int>* ids = nullptr);

struct Batch {
  torch::Tensor reference;     ///< [B,3,H,W]
  torch::Tensor future;        ///< [B,3,H,W]
  torch::Tensor masks_ref;     ///< [B,N,h,w]
  torch::Tensor masks_future;  ///< [B,N,h,w]
  torch::Tensor target;        ///< [B,1,H,W]
};

/// Frames, low-resolution agent masks and reconstruction targets for every
/// usable training pair, computed once up front.
class TrainingData {
 public:
  /// Throws std::invalid_argument naming the frame when masks and frames
  /// are misaligned.
  TrainingData(const std::vector<Frame>& frames, const std::vector<AgentMaskSet>& masks,
               const TrainConfig& config);

  int pair_count() const { return static_cast<int>(pairs_.size()); }
  /// Frames dropped because the tracker reported too few agents.
  int skipped_frames() const { return skipped_frames_; }
  /// Pairs dropped because agent ids differ between the two frames.
  int skipped_pairs() const { return skipped_pairs_; }
  Batch batch(const std::vector<int>& pair_indices) const;
  std::pair<int, int> pair_frames(int pair) const { return pairs_.at(pair); }

 private:
  std::vector<torch::Tensor> images_;
  std::vector<std::optional<torch::Tensor>> masks_;
  std::vector<torch::Tensor> targets_;
  std::vector<std::pair<int, int>> pairs_;
  int skipped_frames_ = 0;
  int skipped_pairs_ = 0;
};

struct Checkpoint {
  KeypointNet model{nullptr};
  std::shared_ptr<torch::optim::Adam> optimizer;
  TrainConfig config;
  int epoch = 0;
  int step = 0;
  std::vector<StepLog> history;
};

/// Single archive holding weights, optimizer state, config, epoch and loss
/// history. Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainOptions {
  /// When set, receives config.snapshot, losses.csv and epoch_%04d.ckpt.
  std::filesystem::path run_dir;
  std::function<void(const StepLog&)> on_step;
  std::function<void(int epoch, double mean_total)> on_epoch;
  /// Called with the role of every frame whose appearance reaches the
  /// reconstruction decoder.
  std::function<void(FrameRole)> appearance_audit;
};

Checkpoint train(const TrainConfig& config, const TrainingData& data, const TrainOptions& options = {});
Checkpoint train(const TrainConfig& config, const std::vector<Frame>& frames,
                 const std::vector<AgentMaskSet>& masks, const TrainOptions& options = {});

/// Eval-mode keypoints for every frame, one frame at a time so results do
/// not depend on batching or order. Throws when a frame's agent count does
/// not match the model.
std::vector<KeypointSet> infer(KeypointNet& model, const std::vector<Frame>& frames,
                               const std::vector<AgentMaskSet>& masks,
                               ConfidenceMode confidence = ConfidenceMode::SigmoidOfRawPeak);

/// Keypoints, confidences and covariances of sample `b` of a keypoint-branch
/// output.
KeypointSet keypoint_set_from(const KeypointOutputs& outputs, int b, int frame_index, const std::vector<int>& ids,
                              ConfidenceMode confidence = ConfidenceMode::SigmoidOfRawPeak);

}  // namespace bkind
