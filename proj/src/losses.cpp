#include "bkind/losses.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <stdexcept>

#include "bkind/keypoint_net.hpp"

namespace bkind {

namespace nn = torch::nn;

LossReport total_loss(double recon, double rotation, double separation, const LossWeights& weights, int epoch) {
  if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
  LossReport r;
  r.recon = recon;
  r.rotation = rotation;
  r.separation = separation;
  r.curriculum_active = curriculum_active(epoch, weights);
  r.total = r.curriculum_active ? recon + weights.w_r * rotation + weights.w_s * separation : recon;
  return r;
}

torch::Tensor combine_losses(const torch::Tensor& recon, const torch::Tensor& rotation,
                             const torch::Tensor& separation, const LossWeights& weights, int epoch) {
  if (!curriculum_active(epoch, weights)) return recon;
  return recon + weights.w_r * rotation + weights.w_s * separation;
}

PerceptualFeaturesImpl::PerceptualFeaturesImpl(std::vector<int> block_channels, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  int in = 3;
  for (std::size_t b = 0; b < block_channels.size(); ++b) {
    const int out = block_channels[b];
    nn::Sequential block;
    if (b > 0) block->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2)));
    for (int layer = 0; layer < 2; ++layer) {
      nn::Conv2d conv(nn::Conv2dOptions(layer == 0 ? in : out, out, 3).padding(1));
      torch::NoGradGuard no_grad;
      const double fan_in = static_cast<double>(conv->weight.size(1) * 9);
      conv->weight.copy_(torch::randn(conv->weight.sizes(), gen) * std::sqrt(2.0 / fan_in));
      conv->bias.zero_();
      block->push_back(conv);
      block->push_back(nn::ReLU());
    }
    blocks_.push_back(register_module("block" + std::to_string(b), block));
    in = out;
  }
  for (auto& p : parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> PerceptualFeaturesImpl::forward(const torch::Tensor& x) {
  auto h = x.size(1) == 1 ? x.expand({x.size(0), 3, x.size(2), x.size(3)}) : x;
  std::vector<torch::Tensor> out;
  for (auto& block : blocks_) {
    h = block->forward(h);
    out.push_back(h);
  }
  return out;
}

torch::Tensor perceptual_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                              PerceptualFeatures& features) {
  if (target.sizes() != prediction.sizes())
    throw std::invalid_argument("perceptual_loss: target and prediction shapes differ");
  const auto ft = features->forward(target);
  const auto fp = features->forward(prediction);
  auto loss = torch::zeros({}, prediction.options());
  for (std::size_t i = 0; i < ft.size(); ++i) loss = loss + (ft[i] - fp[i]).pow(2).mean();
  return loss;
}

torch::Tensor rotation_equivariance_loss(const BottleneckFn& model, const torch::Tensor& images,
                                         const torch::Tensor& masks, const torch::Tensor& reference_bottleneck,
                                         const std::vector<int>& quarter_turns) {
  if (images.size(-1) != images.size(-2)) throw std::invalid_argument("rotation loss needs square frames");
  if (masks.size(-1) != masks.size(-2)) throw std::invalid_argument("rotation loss needs square masks");
  if (quarter_turns.empty()) throw std::invalid_argument("rotation loss needs at least one angle");
  const auto pseudo_source = (reference_bottleneck.defined() ? reference_bottleneck : model(images, masks)).detach();
  auto loss = torch::zeros({}, pseudo_source.options());
  for (int turns : quarter_turns) {
    const auto predicted = model(rotate_quarter_turns(images, turns), rotate_quarter_turns(masks, turns));
    const auto pseudo_label = rotate_quarter_turns(pseudo_source, turns);
    loss = loss + (predicted - pseudo_label).pow(2).mean();
  }
  return loss / static_cast<double>(quarter_turns.size());
}

torch::Tensor separation_loss(const torch::Tensor& points, double sigma_s) {
  if (sigma_s <= 0.0) throw std::invalid_argument("sigma_s must be positive");
  const auto p = points.dim() == 3 ? points.unsqueeze(0) : points;
  TORCH_CHECK(p.dim() == 4 && p.size(-1) == 2, "separation_loss expects [B,N,K,2]");
  const auto k = p.size(2);
  if (k < 2) throw std::invalid_argument("separation_loss needs at least two keypoints");
  const auto diff = p.unsqueeze(3) - p.unsqueeze(2);  // [B,N,K,K,2]
  const auto d2 = diff.pow(2).sum(-1);
  auto terms = torch::exp(-d2 / (2.0 * sigma_s * sigma_s));
  const auto off_diagonal = 1.0 - torch::eye(k, p.options());
  return (terms * off_diagonal).sum({1, 2, 3}).mean();
}

}  // namespace bkind
