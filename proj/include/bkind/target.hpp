#pragma once

#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "bkind/video_io.hpp"

namespace bkind {

enum class TargetKind { SsimDissimilarity, Absolute, Raw };

TargetKind parse_target_kind(std::string_view name);
std::string_view to_string(TargetKind kind);

struct SsimParams {
  int window = 11;
  double gaussian_sigma = 1.5;
  double c1 = 0.01 * 0.01;  ///< (0.01 L)^2 with L = 1
  double c2 = 0.03 * 0.03;  ///< (0.03 L)^2
};

/// Single-channel reconstruction target (CV_64F).
struct DifferenceImage {
  cv::Mat values;
  TargetKind kind = TargetKind::SsimDissimilarity;
};

/// Normalized 1-D Gaussian taps of length `window`.
std::vector<double> gaussian_window(int window, double sigma);

/// Local SSIM of the grayscale versions of `a` and `b`. Statistics at each
/// pixel use the Gaussian window centred there, truncated at the image
/// border and renormalized over the in-bounds taps. Output is CV_64F,
/// clamped to [-1, 1].
cv::Mat ssim_map(const cv::Mat& a, const cv::Mat& b, const SsimParams& params = {});
cv::Mat ssim_map(const Frame& a, const Frame& b, const SsimParams& params = {});

DifferenceImage difference_target(const FramePair& pair, TargetKind kind,
                                  const SsimParams& params = {});

/// 8-bit rendering for debugging: raw maps to v*127.5+127.5, the others to v*127.5.
cv::Mat target_to_u8(const DifferenceImage& target);

}  // namespace bkind
