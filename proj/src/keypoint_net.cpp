#include "bkind/keypoint_net.hpp"

#include <bit>
#include <stdexcept>

namespace bkind {

namespace F = torch::nn::functional;

void ModelConfig::validate() const {
  if (num_keypoints < 2) throw std::invalid_argument("num_keypoints must be >= 2");
  if (num_agents < 1) throw std::invalid_argument("num_agents must be >= 1");
  if (gaussian_sigma <= 0.0) throw std::invalid_argument("gaussian_sigma must be positive");
  const int stride = encoder == "resnet50" ? 32 : encoder == "tiny" ? 8 : 0;
  if (stride == 0) throw std::invalid_argument("unknown encoder: " + encoder);
  if (resolution <= 0 || resolution % stride != 0)
    throw std::invalid_argument("resolution " + std::to_string(resolution) +
                                " is not a multiple of the encoder stride " + std::to_string(stride));
  const auto stages = static_cast<std::size_t>(std::countr_zero(static_cast<unsigned>(stride)));
  if (!decoder_channels.empty() && decoder_channels.size() != stages)
    throw std::invalid_argument("decoder_channels must list " + std::to_string(stages) + " stages");
}

ModelConfig resolved(ModelConfig config) {
  const bool tiny = config.encoder == "tiny";
  if (config.decoder_channels.empty())
    config.decoder_channels = tiny ? std::vector<int>{64, 32, 16} : std::vector<int>{1024, 512, 256, 128, 64};
  if (config.pose_width == 0) config.pose_width = tiny ? 32 : 256;
  config.validate();
  return config;
}

torch::Tensor normalized_grid(int size, torch::TensorOptions options) {
  if (!options.has_dtype()) options = options.dtype(torch::kFloat32);
  return (torch::arange(size, options) * 2 + 1) / static_cast<double>(size) - 1.0;
}

torch::Tensor mask_heatmaps(const torch::Tensor& heatmaps, const torch::Tensor& masks) {
  TORCH_CHECK(heatmaps.dim() == 4 && masks.dim() == 4, "mask_heatmaps expects [B,K,h,w] and [B,N,h,w]");
  TORCH_CHECK(heatmaps.size(0) == masks.size(0) && heatmaps.size(2) == masks.size(2) &&
                  heatmaps.size(3) == masks.size(3),
              "mask_heatmaps: masks must match the heatmap batch and resolution");
  const auto areas = masks.flatten(2).gt(0.5).sum(-1);
  if (areas.eq(0).any().item<bool>()) throw std::invalid_argument("mask_heatmaps: empty agent mask");
  const auto keep = masks.unsqueeze(2).gt(0.5);  // [B,N,1,h,w]
  const auto heat = heatmaps.unsqueeze(1);       // [B,1,K,h,w]
  const auto fill = torch::full({}, kMaskedLogit, heatmaps.options());
  return torch::where(keep, heat, fill);
}

SpatialSoftmax spatial_softmax(const torch::Tensor& maps) {
  TORCH_CHECK(maps.dim() >= 2, "spatial_softmax expects [..., h, w]");
  const auto h = maps.size(-2);
  const auto w = maps.size(-1);
  const auto flat = maps.flatten(-2);
  // NaN cells count as unmasked so a diverged map surfaces as a NaN loss.
  if (flat.le(kMaskedLogit / 2).all(-1).any().item<bool>())
    throw std::invalid_argument("spatial_softmax: every cell is masked");
  const auto probs = torch::softmax(flat, -1).view(maps.sizes());
  const auto gx = normalized_grid(static_cast<int>(w), maps.options());
  const auto gy = normalized_grid(static_cast<int>(h), maps.options());
  const auto u = (probs.sum(-2) * gx).sum(-1);
  const auto v = (probs.sum(-1) * gy).sum(-1);
  return {torch::stack({u, v}, -1), probs};
}

torch::Tensor geometry_bottleneck(const torch::Tensor& points, double sigma, int size) {
  TORCH_CHECK(points.dim() == 4 && points.size(-1) == 2, "geometry_bottleneck expects [B,N,K,2]");
  const auto b = points.size(0);
  const auto channels = points.size(1) * points.size(2);
  const auto flat = points.reshape({b, channels, 1, 1, 2});
  const auto u = flat.select(-1, 0);
  const auto v = flat.select(-1, 1);
  const auto grid = normalized_grid(size, points.options());
  const auto gx = grid.view({1, 1, 1, size});
  const auto gy = grid.view({1, 1, size, 1});
  const auto d2 = (gx - u).pow(2) + (gy - v).pow(2);
  return torch::exp(-d2 / (2.0 * sigma * sigma));
}

torch::Tensor rotate_quarter_turns(const torch::Tensor& maps, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return maps;
  return torch::rot90(maps, k, {-2, -1});
}

KeypointNetImpl::KeypointNetImpl(ModelConfig config) : config_(resolved(std::move(config))) {
  encoder_ = register_module("encoder", make_encoder(config_.encoder));
  const auto levels = encoder_->level_channels();
  pose_ = register_module("pose", PoseDecoder(levels, config_.num_keypoints, config_.pose_width));
  for (std::size_t i = 0; i < config_.decoder_channels.size(); ++i)
    stages_.push_back(register_module("stage" + std::to_string(i),
                                      ConvBlock(decoder_stage_inputs(static_cast<int>(i)),
                                                config_.decoder_channels[i])));
  output_ = register_module(
      "output", torch::nn::Conv2d(torch::nn::Conv2dOptions(config_.decoder_channels.back(), 3, 3).padding(1)));
}

int KeypointNetImpl::decoder_stage_inputs(int stage) const {
  const int geometry = config_.num_keypoints * 2 * config_.num_agents;
  const int previous = stage == 0 ? encoder_->level_channels().back() : config_.decoder_channels.at(stage - 1);
  return previous + geometry;
}

std::vector<torch::Tensor> KeypointNetImpl::encode(const torch::Tensor& images) {
  TORCH_CHECK(images.dim() == 4 && images.size(1) == 3, "encode expects [B,3,H,W]");
  if (images.size(2) != config_.resolution || images.size(3) != config_.resolution)
    throw std::invalid_argument("encode: expected " + std::to_string(config_.resolution) + "x" +
                                std::to_string(config_.resolution) + " input, got " +
                                std::to_string(images.size(2)) + "x" + std::to_string(images.size(3)));
  return encoder_->forward((images - 0.5) / 0.25);
}

torch::Tensor KeypointNetImpl::pose_heatmaps(const std::vector<torch::Tensor>& pyramid) {
  return pose_->forward(pyramid);
}

KeypointOutputs KeypointNetImpl::keypoints(const torch::Tensor& images, const torch::Tensor& masks) {
  if (masks.size(1) != config_.num_agents)
    throw std::invalid_argument("expected " + std::to_string(config_.num_agents) + " agent masks, got " +
                                std::to_string(masks.size(1)));
  KeypointOutputs out;
  auto pyramid = encode(images);
  out.heatmaps = pose_heatmaps(pyramid);
  out.appearance = pyramid.back();
  out.masked = mask_heatmaps(out.heatmaps, masks.to(out.heatmaps.dtype()));
  auto soft = spatial_softmax(out.masked);
  out.points = soft.points;
  out.probs = soft.probs;
  return out;
}

torch::Tensor KeypointNetImpl::bottleneck(const torch::Tensor& points) {
  return geometry_bottleneck(points, config_.gaussian_sigma, config_.heatmap_size());
}

torch::Tensor KeypointNetImpl::reconstruct(const torch::Tensor& appearance, const torch::Tensor& points_ref,
                                           const torch::Tensor& points_future,
                                           const torch::Tensor& appearance_mask) {
  const auto expected = std::vector<int64_t>{appearance.size(0), config_.num_agents, config_.num_keypoints, 2};
  if (points_ref.sizes() != expected || points_future.sizes() != expected)
    throw std::invalid_argument("reconstruct: keypoint tensors do not match the model configuration");
  if (appearance.size(1) != encoder_->level_channels().back())
    throw std::invalid_argument("reconstruct: appearance channel mismatch");
  auto x = appearance;
  if (config_.mask_appearance && appearance_mask.defined()) {
    auto m = F::interpolate(appearance_mask.to(x.dtype()),
                            F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{x.size(2), x.size(3)})
                                .mode(torch::kArea));
    x = x * m.gt(0).to(x.dtype());
  }
  for (auto& stage : stages_) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    const int size = static_cast<int>(x.size(2));
    const auto g_ref = geometry_bottleneck(points_ref, config_.gaussian_sigma, size);
    const auto g_fut = geometry_bottleneck(points_future, config_.gaussian_sigma, size);
    x = stage->forward(torch::cat({x, g_ref, g_fut}, 1));
  }
  return output_(x).mean(1, true);
}

PairOutputs KeypointNetImpl::forward_pair(const torch::Tensor& reference, const torch::Tensor& future,
                                          const torch::Tensor& masks_ref, const torch::Tensor& masks_future) {
  PairOutputs out;
  out.reference = keypoints(reference, masks_ref);
  out.future = keypoints(future, masks_future);
  torch::Tensor union_mask;
  if (config_.mask_appearance) union_mask = std::get<0>(masks_ref.max(1, true));
  if (audit_) audit_(FrameRole::Reference);
  out.reconstruction = reconstruct(out.reference.appearance, out.reference.points, out.future.points, union_mask);
  return out;
}

torch::Tensor frame_to_tensor(const Frame& frame) {
  cv::Mat pixels = frame.pixels;
  if (pixels.type() != CV_32FC3) pixels.convertTo(pixels, CV_32FC3);
  if (!pixels.isContinuous()) pixels = pixels.clone();
  return torch::from_blob(pixels.data, {pixels.rows, pixels.cols, 3}, torch::kFloat32).permute({2, 0, 1}).clone();
}

torch::Tensor masks_to_tensor(const std::vector<cv::Mat>& masks) {
  std::vector<torch::Tensor> planes;
  for (const auto& m : masks) {
    cv::Mat f;
    m.convertTo(f, CV_32F);
    if (!f.isContinuous()) f = f.clone();
    planes.push_back(torch::from_blob(f.data, {f.rows, f.cols}, torch::kFloat32).clone());
  }
  TORCH_CHECK(!planes.empty(), "masks_to_tensor: no masks");
  return torch::stack(planes);
}

torch::Tensor full_frame_mask(int size) { return torch::ones({1, size, size}); }

}  // namespace bkind
