#include "bkind/target.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace bkind {

namespace {

// Separable weighted mean with the window truncated at the border. For a
// rectangular in-bounds region the renormalized 2-D weights factor into two
// renormalized 1-D passes.
cv::Mat windowed_mean(const cv::Mat& src, const std::vector<double>& taps) {
  const int half = static_cast<int>(taps.size()) / 2;
  const int rows = src.rows;
  const int cols = src.cols;
  cv::Mat horiz(rows, cols, CV_64F);
  for (int r = 0; r < rows; ++r) {
    const auto* in = src.ptr<double>(r);
    auto* out = horiz.ptr<double>(r);
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      double wsum = 0.0;
      for (int k = -half; k <= half; ++k) {
        const int cc = c + k;
        if (cc < 0 || cc >= cols) continue;
        acc += taps[k + half] * in[cc];
        wsum += taps[k + half];
      }
      out[c] = acc / wsum;
    }
  }
  cv::Mat result(rows, cols, CV_64F);
  for (int r = 0; r < rows; ++r) {
    auto* out = result.ptr<double>(r);
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      double wsum = 0.0;
      for (int k = -half; k <= half; ++k) {
        const int rr = r + k;
        if (rr < 0 || rr >= rows) continue;
        acc += taps[k + half] * horiz.at<double>(rr, c);
        wsum += taps[k + half];
      }
      out[c] = acc / wsum;
    }
  }
  return result;
}

}  // namespace

TargetKind parse_target_kind(std::string_view name) {
  if (name == "ssim" || name == "ssim_dissimilarity") return TargetKind::SsimDissimilarity;
  if (name == "absolute" || name == "abs") return TargetKind::Absolute;
  if (name == "raw") return TargetKind::Raw;
  throw std::invalid_argument("unknown target kind: " + std::string(name));
}

std::string_view to_string(TargetKind kind) {
  switch (kind) {
    case TargetKind::SsimDissimilarity: return "ssim";
    case TargetKind::Absolute: return "absolute";
    case TargetKind::Raw: return "raw";
  }
  return "ssim";
}

std::vector<double> gaussian_window(int window, double sigma) {
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("SSIM window must be odd and >= 3");
  std::vector<double> taps(window);
  const int half = window / 2;
  double sum = 0.0;
  for (int k = -half; k <= half; ++k) {
    taps[k + half] = std::exp(-(k * k) / (2.0 * sigma * sigma));
    sum += taps[k + half];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

cv::Mat ssim_map(const cv::Mat& a, const cv::Mat& b, const SsimParams& params) {
  if (a.rows != b.rows || a.cols != b.cols || a.channels() != b.channels())
    throw std::invalid_argument("ssim_map: shape mismatch");
  const auto taps = gaussian_window(params.window, params.gaussian_sigma);
  const cv::Mat x = to_grayscale(a);
  const cv::Mat y = to_grayscale(b);

  const cv::Mat mu_x = windowed_mean(x, taps);
  const cv::Mat mu_y = windowed_mean(y, taps);
  const cv::Mat e_xx = windowed_mean(x.mul(x), taps);
  const cv::Mat e_yy = windowed_mean(y.mul(y), taps);
  const cv::Mat e_xy = windowed_mean(x.mul(y), taps);

  cv::Mat out(a.rows, a.cols, CV_64F);
  for (int r = 0; r < a.rows; ++r) {
    for (int c = 0; c < a.cols; ++c) {
      const double mx = mu_x.at<double>(r, c);
      const double my = mu_y.at<double>(r, c);
      const double vx = std::max(0.0, e_xx.at<double>(r, c) - mx * mx);
      const double vy = std::max(0.0, e_yy.at<double>(r, c) - my * my);
      const double cxy = e_xy.at<double>(r, c) - mx * my;
      const double num = (2 * mx * my + params.c1) * (2 * cxy + params.c2);
      const double den = (mx * mx + my * my + params.c1) * (vx + vy + params.c2);
      out.at<double>(r, c) = std::clamp(num / den, -1.0, 1.0);
    }
  }
  return out;
}

cv::Mat ssim_map(const Frame& a, const Frame& b, const SsimParams& params) {
  return ssim_map(a.pixels, b.pixels, params);
}

DifferenceImage difference_target(const FramePair& pair, TargetKind kind, const SsimParams& params) {
  if (!pair.reference || !pair.future) throw std::invalid_argument("difference_target: empty pair");
  DifferenceImage out;
  out.kind = kind;
  switch (kind) {
    case TargetKind::SsimDissimilarity:
      out.values = 1.0 - ssim_map(*pair.reference, *pair.future, params);
      break;
    case TargetKind::Absolute:
      out.values = cv::abs(to_grayscale(pair.future->pixels) - to_grayscale(pair.reference->pixels));
      break;
    case TargetKind::Raw:
      out.values = to_grayscale(pair.future->pixels) - to_grayscale(pair.reference->pixels);
      break;
  }
  return out;
}

cv::Mat target_to_u8(const DifferenceImage& target) {
  cv::Mat out;
  if (target.kind == TargetKind::Raw)
    target.values.convertTo(out, CV_8U, 127.5, 127.5);
  else
    target.values.convertTo(out, CV_8U, 127.5, 0.0);
  return out;
}

}  // namespace bkind
