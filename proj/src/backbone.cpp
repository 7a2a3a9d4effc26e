#include "bkind/backbone.hpp"

#include <stdexcept>

namespace bkind {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

ConvBlockImpl::ConvBlockImpl(int in_channels, int out_channels, int stride) {
  conv = register_module(
      "conv", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).stride(stride).padding(1).bias(false)));
  bn = register_module("bn", nn::BatchNorm2d(out_channels));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) { return torch::relu(bn(conv(x))); }

BottleneckBlockImpl::BottleneckBlockImpl(int in_channels, int width, int stride) {
  const int out_channels = width * 4;
  conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, width, 1).bias(false)));
  bn1 = register_module("bn1", nn::BatchNorm2d(width));
  conv2 = register_module(
      "conv2", nn::Conv2d(nn::Conv2dOptions(width, width, 3).stride(stride).padding(1).bias(false)));
  bn2 = register_module("bn2", nn::BatchNorm2d(width));
  conv3 = register_module("conv3", nn::Conv2d(nn::Conv2dOptions(width, out_channels, 1).bias(false)));
  bn3 = register_module("bn3", nn::BatchNorm2d(out_channels));
  if (stride != 1 || in_channels != out_channels) {
    downsample = register_module(
        "downsample",
        nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1).stride(stride).bias(false)),
                       nn::BatchNorm2d(out_channels)));
  }
}

torch::Tensor BottleneckBlockImpl::forward(const torch::Tensor& x) {
  auto out = torch::relu(bn1(conv1(x)));
  out = torch::relu(bn2(conv2(out)));
  out = bn3(conv3(out));
  const auto identity = downsample ? downsample->forward(x) : x;
  return torch::relu(out + identity);
}

ResNet50Encoder::ResNet50Encoder() {
  stem_conv = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
  stem_bn = register_module("bn1", nn::BatchNorm2d(64));
  int in_channels = 64;
  layers_.push_back(make_layer(in_channels, 64, 3, 1, "layer1"));
  layers_.push_back(make_layer(in_channels, 128, 4, 2, "layer2"));
  layers_.push_back(make_layer(in_channels, 256, 6, 2, "layer3"));
  layers_.push_back(make_layer(in_channels, 512, 3, 2, "layer4"));
}

nn::Sequential ResNet50Encoder::make_layer(int& in_channels, int width, int blocks, int stride,
                                           const std::string& name) {
  nn::Sequential layer;
  for (int b = 0; b < blocks; ++b) {
    layer->push_back(BottleneckBlock(in_channels, width, b == 0 ? stride : 1));
    in_channels = width * 4;
  }
  return register_module(name, layer);
}

std::vector<torch::Tensor> ResNet50Encoder::forward(const torch::Tensor& images) {
  auto x = torch::relu(stem_bn(stem_conv(images)));
  x = F::max_pool2d(x, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
  std::vector<torch::Tensor> levels;
  for (auto& layer : layers_) {
    x = layer->forward(x);
    levels.push_back(x);
  }
  return levels;
}

TinyEncoder::TinyEncoder(int width) : width_(width) {
  stem_ = register_module("stem", nn::Sequential(ConvBlock(3, width, 2), ConvBlock(width, width, 1)));
  level1_ = register_module("level1", nn::Sequential(ConvBlock(width, 2 * width, 2), ConvBlock(2 * width, 2 * width, 1)));
  level2_ = register_module("level2", nn::Sequential(ConvBlock(2 * width, 4 * width, 2), ConvBlock(4 * width, 4 * width, 1)));
}

std::vector<torch::Tensor> TinyEncoder::forward(const torch::Tensor& images) {
  auto x = stem_->forward(images);
  auto l1 = level1_->forward(x);
  auto l2 = level2_->forward(l1);
  return {l1, l2};
}

std::shared_ptr<EncoderImpl> make_encoder(const std::string& name) {
  if (name == "resnet50") return std::make_shared<ResNet50Encoder>();
  if (name == "tiny") return std::make_shared<TinyEncoder>();
  throw std::invalid_argument("unknown encoder: " + name);
}

PoseDecoderImpl::PoseDecoderImpl(const std::vector<int>& level_channels, int num_keypoints, int width) {
  for (std::size_t i = 0; i < level_channels.size(); ++i)
    laterals_.push_back(register_module("lateral" + std::to_string(i),
                                        nn::Conv2d(nn::Conv2dOptions(level_channels[i], width, 1))));
  smooth_ = register_module("smooth", ConvBlock(width, width));
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(width, num_keypoints, 3).padding(1)));
}

torch::Tensor PoseDecoderImpl::forward(const std::vector<torch::Tensor>& pyramid) {
  if (pyramid.size() != laterals_.size()) throw std::invalid_argument("pose decoder: pyramid depth mismatch");
  auto x = laterals_.back()(pyramid.back());
  for (int i = static_cast<int>(pyramid.size()) - 2; i >= 0; --i) {
    const auto& level = pyramid[i];
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{level.size(2), level.size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = x + laterals_[i](level);
  }
  return head_(smooth_(x));
}

}  // namespace bkind
