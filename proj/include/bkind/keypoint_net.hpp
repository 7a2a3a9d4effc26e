#pragma once

#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "bkind/backbone.hpp"
#include "bkind/segmentation.hpp"
#include "bkind/video_io.hpp"

namespace bkind {

struct ModelConfig {
  int num_keypoints = 10;
  int num_agents = 2;
  int resolution = 256;
  /// Standard deviation of the bottleneck Gaussians, normalized units.
  double gaussian_sigma = 0.1;
  std::string encoder = "resnet50";
  /// Output widths of the reconstruction decoder stages, coarse to fine.
  /// One stage per factor of two between the appearance map and the input.
  /// Empty selects the defaults for the encoder.
  std::vector<int> decoder_channels;
  int pose_width = 0;  ///< 0 selects the default for the encoder
  /// Confine each agent's keypoints to its mask. Off gives the single-agent
  /// baseline (callers then pass one full-frame mask).
  bool mask_heatmaps = true;
  /// Multiply the appearance feature by the union of agent masks before
  /// reconstruction.
  bool mask_appearance = false;

  int heatmap_size() const { return resolution / 4; }
  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;
};

/// Fills unset fields for the given encoder and returns the result.
ModelConfig resolved(ModelConfig config);

/// Value written into off-mask heatmap cells before the spatial softmax.
inline constexpr double kMaskedLogit = -1e9;

/// Cell-centre coordinates of a size-cell axis over [-1, 1].
torch::Tensor normalized_grid(int size, torch::TensorOptions options = {});

/// heatmaps [B,K,h,w], masks [B,N,h,w] (0/1) -> [B,N,K,h,w] with off-mask
/// cells replaced by kMaskedLogit. Throws if any mask is empty.
torch::Tensor mask_heatmaps(const torch::Tensor& heatmaps, const torch::Tensor& masks);

struct SpatialSoftmax {
  torch::Tensor points;  ///< [..., 2] as (u, v): u along columns, v along rows
  torch::Tensor probs;   ///< [..., h, w]
};

/// Softmax over the last two dimensions and the expected cell coordinate.
/// Throws if some map has no finite (unmasked) cell.
SpatialSoftmax spatial_softmax(const torch::Tensor& maps);

/// points [B,N,K,2] -> [B,N*K,size,size]; channel n*K+k is
/// exp(-((x-u)^2 + (y-v)^2) / (2 sigma^2)) on the normalized cell grid.
torch::Tensor geometry_bottleneck(const torch::Tensor& points, double sigma, int size);

/// Counter-clockwise rotation of the last two (spatial) dimensions.
torch::Tensor rotate_quarter_turns(const torch::Tensor& maps, int quarter_turns);

/// Keypoint branch output for a batch of frames.
struct KeypointOutputs {
  torch::Tensor heatmaps;    ///< raw [B,K,h,w]
  torch::Tensor masked;      ///< [B,N,K,h,w]
  torch::Tensor probs;       ///< [B,N,K,h,w]
  torch::Tensor points;      ///< [B,N,K,2]
  torch::Tensor appearance;  ///< [B,C,h_a,w_a]
};

struct PairOutputs {
  torch::Tensor reconstruction;  ///< [B,1,H,W]
  KeypointOutputs reference;
  KeypointOutputs future;
};

enum class FrameRole { Reference, Future };

class KeypointNetImpl : public torch::nn::Module {
 public:
  explicit KeypointNetImpl(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  /// images [B,3,H,W] in [0,1].
  std::vector<torch::Tensor> encode(const torch::Tensor& images);
  torch::Tensor pose_heatmaps(const std::vector<torch::Tensor>& pyramid);

  /// Encoder + pose decoder + masking + spatial softmax.
  /// masks [B,N,h,w] at heatmap resolution.
  KeypointOutputs keypoints(const torch::Tensor& images, const torch::Tensor& masks);

  /// Bottleneck at heatmap resolution, [B,N*K,h,w].
  torch::Tensor bottleneck(const torch::Tensor& points);

  /// Decodes the difference image from the reference appearance and both
  /// frames' keypoints. Returns [B,1,H,W] (mean of the 3 output channels).
  torch::Tensor reconstruct(const torch::Tensor& appearance, const torch::Tensor& points_ref,
                            const torch::Tensor& points_future,
                            const torch::Tensor& appearance_mask = {});

  /// Full pair forward. The future frame contributes geometry only.
  PairOutputs forward_pair(const torch::Tensor& reference, const torch::Tensor& future,
                           const torch::Tensor& masks_ref, const torch::Tensor& masks_future);

  /// Number of channels entering decoder stage `stage`.
  int decoder_stage_inputs(int stage) const;

  /// Called with the role of every frame whose appearance feature reaches
  /// the reconstruction decoder.
  void set_appearance_audit(std::function<void(FrameRole)> hook) { audit_ = std::move(hook); }

 private:
  ModelConfig config_;
  std::shared_ptr<EncoderImpl> encoder_;
  PoseDecoder pose_{nullptr};
  std::vector<ConvBlock> stages_;
  torch::nn::Conv2d output_{nullptr};
  std::function<void(FrameRole)> audit_;
};
TORCH_MODULE(KeypointNet);

/// Frame pixels to a [3,H,W] float tensor.
torch::Tensor frame_to_tensor(const Frame& frame);
/// Stack of per-agent low-resolution masks to [N,h,w] float.
torch::Tensor masks_to_tensor(const std::vector<cv::Mat>& masks);
/// One full-frame mask, [1,size,size].
torch::Tensor full_frame_mask(int size);

}  // namespace bkind
