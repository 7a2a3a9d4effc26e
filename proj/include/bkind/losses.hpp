#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

namespace bkind {

struct LossWeights {
  double w_r = 1.0;
  double w_s = 1.0;
  /// Auxiliary losses switch on strictly after this epoch.
  int curriculum_epoch = 5;
  double sigma_s = 0.05;
};

struct LossReport {
  double recon = 0.0;
  double rotation = 0.0;
  double separation = 0.0;
  double total = 0.0;
  bool curriculum_active = false;
};

/// Indicator for epoch > n.
inline bool curriculum_active(int epoch, const LossWeights& weights) { return epoch > weights.curriculum_epoch; }

LossReport total_loss(double recon, double rotation, double separation, const LossWeights& weights, int epoch);

/// Tensor form used by the training loop; same rule as total_loss.
torch::Tensor combine_losses(const torch::Tensor& recon, const torch::Tensor& rotation,
                             const torch::Tensor& separation, const LossWeights& weights, int epoch);

/// Fixed-weight VGG-style feature pyramid used as the perceptual feature
/// function. Weights are drawn from a private generator seeded with `seed`
/// and never train.
class PerceptualFeaturesImpl : public torch::nn::Module {
 public:
  explicit PerceptualFeaturesImpl(std::vector<int> block_channels = {16, 32, 64}, std::uint64_t seed = 0x5eed);

  /// x [B,C,H,W]; single-channel inputs are tiled to 3 channels. Returns the
  /// output of every block.
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

  const std::vector<torch::nn::Sequential>& blocks() const { return blocks_; }

 private:
  std::vector<torch::nn::Sequential> blocks_;
};
TORCH_MODULE(PerceptualFeatures);

/// Sum over feature blocks of the mean squared difference between the block
/// features of `target` and `prediction`. Throws on shape mismatch.
torch::Tensor perceptual_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                              PerceptualFeatures& features);

/// Model hook for the equivariance loss: (images [B,3,H,W], masks [B,N,h,w])
/// -> bottleneck [B,N*K,h,w].
using BottleneckFn = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;

/// Average over `quarter_turns` of the mean squared error between the model's
/// bottleneck on the rotated frames/masks and the rotated bottleneck of the
/// unrotated input (used as a fixed pseudo-label). When `reference_bottleneck`
/// is undefined it is computed with `model`.
torch::Tensor rotation_equivariance_loss(const BottleneckFn& model, const torch::Tensor& images,
                                         const torch::Tensor& masks,
                                         const torch::Tensor& reference_bottleneck = {},
                                         const std::vector<int>& quarter_turns = {1, 2, 3});

/// points [B,N,K,2] or [N,K,2]. For each agent, the sum over ordered pairs
/// i != j of exp(-|p_i - p_j|^2 / (2 sigma_s^2)); summed over agents and
/// averaged over the batch.
torch::Tensor separation_loss(const torch::Tensor& points, double sigma_s);

}  // namespace bkind
