#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace bkind {

/// Conv 3x3 -> BatchNorm -> ReLU.
struct ConvBlockImpl : torch::nn::Module {
  ConvBlockImpl(int in_channels, int out_channels, int stride = 1);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Feature pyramid encoder. `forward` returns one map per level, finest
/// (stride 4) first; the last level is the appearance feature.
class EncoderImpl : public torch::nn::Module {
 public:
  virtual std::vector<torch::Tensor> forward(const torch::Tensor& images) = 0;
  virtual std::vector<int> level_channels() const = 0;
  /// Stride of the last level.
  virtual int total_stride() const = 0;
};

struct BottleneckBlockImpl : torch::nn::Module {
  BottleneckBlockImpl(int in_channels, int width, int stride);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(BottleneckBlock);

/// ResNet-50 trunk (conv1 .. layer4); levels are layer1..layer4 with
/// 256/512/1024/2048 channels at strides 4/8/16/32.
class ResNet50Encoder : public EncoderImpl {
 public:
  ResNet50Encoder();
  std::vector<torch::Tensor> forward(const torch::Tensor& images) override;
  std::vector<int> level_channels() const override { return {256, 512, 1024, 2048}; }
  int total_stride() const override { return 32; }

 private:
  torch::nn::Sequential make_layer(int& in_channels, int width, int blocks, int stride,
                                   const std::string& name);

  torch::nn::Conv2d stem_conv{nullptr};
  torch::nn::BatchNorm2d stem_bn{nullptr};
  std::vector<torch::nn::Sequential> layers_;
};

/// Small encoder for desk-scale runs: levels at strides 4 and 8.
class TinyEncoder : public EncoderImpl {
 public:
  explicit TinyEncoder(int width = 16);
  std::vector<torch::Tensor> forward(const torch::Tensor& images) override;
  std::vector<int> level_channels() const override { return {2 * width_, 4 * width_}; }
  int total_stride() const override { return 8; }

 private:
  int width_;
  torch::nn::Sequential stem_{nullptr}, level1_{nullptr}, level2_{nullptr};
};

std::shared_ptr<EncoderImpl> make_encoder(const std::string& name);

/// GlobalNet-style top-down pose decoder: lateral 1x1 projections of every
/// pyramid level, upsample-and-add from coarse to fine, then a 3x3 head on
/// the stride-4 level producing `num_keypoints` raw heatmaps.
class PoseDecoderImpl : public torch::nn::Module {
 public:
  PoseDecoderImpl(const std::vector<int>& level_channels, int num_keypoints, int width);
  torch::Tensor forward(const std::vector<torch::Tensor>& pyramid);

 private:
  std::vector<torch::nn::Conv2d> laterals_;
  ConvBlock smooth_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(PoseDecoder);

}  // namespace bkind
