#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <opencv2/imgproc.hpp>

#include "bkind/target.hpp"
#include "test_support.hpp"

using namespace bkind;

namespace {

// Per-pixel SSIM with explicit loops over the 2-D Gaussian window, truncated
// at the border.
double loop_ssim(const cv::Mat& x, const cv::Mat& y, int r, int c) {
  double w_sum = 0, mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
  for (int dr = -5; dr <= 5; ++dr)
    for (int dc = -5; dc <= 5; ++dc) {
      const int rr = r + dr, cc = c + dc;
      if (rr < 0 || cc < 0 || rr >= x.rows || cc >= x.cols) continue;
      const double w = std::exp(-(dr * dr + dc * dc) / 4.5);
      const double a = x.at<double>(rr, cc), b = y.at<double>(rr, cc);
      w_sum += w, mx += w * a, my += w * b, xx += w * a * a, yy += w * b * b, xy += w * a * b;
    }
  mx /= w_sum, my /= w_sum, xx /= w_sum, yy /= w_sum, xy /= w_sum;
  const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
  return (2 * mx * my + 1e-4) * (2 * cxy + 9e-4) / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
}

Frame frame_of(const cv::Mat& pixels, int index) {
  Frame f;
  f.pixels = pixels;
  f.index = index;
  return f;
}

}  // namespace

TEST_CASE("gaussian window") {
  const auto w = gaussian_window(11, 1.5);
  REQUIRE(w.size() == 11);
  double sum = 0;
  for (double v : w) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w[5] > w[4]);
  CHECK(w[0] == doctest::Approx(w[10]));
  CHECK_THROWS(gaussian_window(4, 1.5));
  CHECK_THROWS(gaussian_window(1, 1.5));
}

TEST_CASE("ssim of identical inputs is one") {
  const cv::Mat a = test::random_frame(24, 1);
  const cv::Mat s = ssim_map(a, a);
  CHECK(cv::norm(s - 1.0, cv::NORM_INF) <= 1e-6);
  const cv::Mat flat(16, 16, CV_32FC3, cv::Scalar::all(0.5));
  CHECK(cv::norm(ssim_map(flat, flat) - 1.0, cv::NORM_INF) <= 1e-6);
}

TEST_CASE("ssim matches a loop oracle on a moved blob") {
  cv::Mat a(48, 48, CV_32FC3, cv::Scalar::all(0.3));
  cv::Mat b = a.clone();
  cv::circle(a, {14, 20}, 6, cv::Scalar::all(0.9), cv::FILLED);
  cv::circle(b, {24, 20}, 6, cv::Scalar::all(0.9), cv::FILLED);
  const cv::Mat s = ssim_map(a, b);
  const cv::Mat ga = to_grayscale(a), gb = to_grayscale(b);
  double err = 0, min_inside = 1;
  for (int r = 0; r < 48; ++r)
    for (int c = 0; c < 48; ++c) {
      err = std::max(err, std::abs(s.at<double>(r, c) - std::clamp(loop_ssim(ga, gb, r, c), -1.0, 1.0)));
      if (std::hypot(c - 14, r - 20) < 6 || std::hypot(c - 24, r - 20) < 6) min_inside = std::min(min_inside, s.at<double>(r, c));
    }
  CHECK(err <= 1e-6);
  CHECK(min_inside < 0.5);
  CHECK(s.at<double>(45, 45) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ssim is symmetric and bounded") {
  for (int seed = 0; seed < 5; ++seed) {
    const cv::Mat a = test::random_frame(20, 10 + seed), b = test::random_frame(20, 20 + seed);
    const cv::Mat ab = ssim_map(a, b), ba = ssim_map(b, a);
    CHECK(cv::norm(ab, ba, cv::NORM_INF) <= 1e-6);
    double lo, hi;
    cv::minMaxLoc(ab, &lo, &hi);
    CHECK(lo >= -1.0);
    CHECK(hi <= 1.0);
  }
  CHECK_THROWS(ssim_map(test::random_frame(8, 1), test::random_frame(9, 1)));
}

TEST_CASE("difference targets") {
  const Frame black = frame_of(cv::Mat(8, 8, CV_32FC3, cv::Scalar::all(0.0)), 0);
  const Frame white = frame_of(cv::Mat(8, 8, CV_32FC3, cv::Scalar::all(1.0)), 1);
  const Frame noise = frame_of(test::random_frame(8, 3), 0);
  const FramePair same{&noise, &noise, 1};
  const FramePair bw{&black, &white, 1};

  CHECK(cv::norm(difference_target(same, TargetKind::SsimDissimilarity).values, cv::NORM_INF) <= 1e-6);
  CHECK(cv::norm(difference_target(same, TargetKind::Absolute).values, cv::NORM_INF) == 0.0);
  const cv::Mat raw = difference_target(bw, TargetKind::Raw).values;
  CHECK(cv::norm(raw - 1.0, cv::NORM_INF) <= 1e-12);
  const FramePair wb{&white, &black, 1};
  CHECK(cv::norm(difference_target(wb, TargetKind::Raw).values + 1.0, cv::NORM_INF) <= 1e-12);
  CHECK(cv::norm(difference_target(wb, TargetKind::Absolute).values - 1.0, cv::NORM_INF) <= 1e-12);

  const cv::Mat d = difference_target(FramePair{&noise, &white, 1}, TargetKind::SsimDissimilarity).values;
  double lo, hi;
  cv::minMaxLoc(d, &lo, &hi);
  CHECK(lo >= 0.0);
  CHECK(hi <= 2.0);
}

TEST_CASE("static background has low dissimilarity") {
  SyntheticConfig c;
  c.frames = 8;
  c.resolution = 128;
  c.seed = 5;
  const auto [frames, scene] = generate_synthetic(c);
  const FramePair pair{&frames[0], &frames[6], 6};
  const cv::Mat d = difference_target(pair, TargetKind::SsimDissimilarity).values;
  cv::Mat moved = (scene.label_maps[0] > 0) | (scene.label_maps[6] > 0);
  cv::Mat background;
  cv::dilate(moved, background, cv::getStructuringElement(cv::MORPH_RECT, {15, 15}));
  background = background == 0;
  const double bg = cv::mean(d, background)[0];
  const double fg = cv::mean(d, moved)[0];
  CHECK(bg < 0.05);
  CHECK(fg > 5 * bg);
}

TEST_CASE("target kinds parse and render") {
  CHECK(parse_target_kind("ssim") == TargetKind::SsimDissimilarity);
  CHECK(parse_target_kind("absolute") == TargetKind::Absolute);
  CHECK(parse_target_kind("raw") == TargetKind::Raw);
  CHECK_THROWS(parse_target_kind("flow"));
  for (auto k : {TargetKind::SsimDissimilarity, TargetKind::Absolute, TargetKind::Raw})
    CHECK(parse_target_kind(to_string(k)) == k);

  DifferenceImage raw{cv::Mat(1, 3, CV_64F), TargetKind::Raw};
  raw.values.at<double>(0) = -1, raw.values.at<double>(1) = 0, raw.values.at<double>(2) = 1;
  const cv::Mat u8 = target_to_u8(raw);
  CHECK(u8.at<std::uint8_t>(0) == 0);
  CHECK(u8.at<std::uint8_t>(1) == 128);
  CHECK(u8.at<std::uint8_t>(2) == 255);
}
