#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace bkind {

/// One video frame. `pixels` is CV_32FC3, RGB order, values in [0,1].
struct Frame {
  cv::Mat pixels;
  int index = 0;
  std::string sequence_id;

  int rows() const { return pixels.rows; }
  int cols() const { return pixels.cols; }
};

/// Two frames of the same sequence, `gap` frames apart.
struct FramePair {
  const Frame* reference = nullptr;
  const Frame* future = nullptr;
  int gap = 0;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decodes a single video file into BGR 8-bit frames. The default
/// implementation goes through cv::VideoCapture.
class VideoDecoder {
 public:
  virtual ~VideoDecoder() = default;
  virtual std::vector<cv::Mat> decode(const std::filesystem::path& file) const = 0;
};

class OpenCvVideoDecoder final : public VideoDecoder {
 public:
  std::vector<cv::Mat> decode(const std::filesystem::path& file) const override;
};

/// Image files in `dir` with a recognised extension, sorted by the numeric
/// value embedded in their stem (frame_2 before frame_10).
std::vector<std::filesystem::path> list_frame_files(const std::filesystem::path& dir);

/// Stretches to resolution x resolution (aspect ratio is not preserved).
/// Returns an identical copy when the input is already that size.
cv::Mat resize_square(const cv::Mat& image, int resolution);

/// Converts a decoded 8-bit BGR image into a normalized RGB float frame.
Frame make_frame(const cv::Mat& bgr8, int index, std::string sequence_id, int resolution);

/// Loads a directory of images or a single video file.
/// Throws IoError when the path is missing, holds fewer than two frames,
/// or a frame cannot be decoded.
std::vector<Frame> load_sequence(const std::filesystem::path& path, int resolution,
                                 const VideoDecoder* decoder = nullptr);

/// Reference frames at list positions 0, stride, 2*stride, ... paired with the
/// frame `gap` positions later. Pairs never straddle two sequence ids and
/// always satisfy future.index - reference.index == gap.
std::vector<FramePair> sample_pairs(const std::vector<Frame>& sequence, int gap, int stride = 1);

/// Writes a frame as an 8-bit PNG.
void write_frame_png(const Frame& frame, const std::filesystem::path& file);

/// 0.299 R + 0.587 G + 0.114 B, CV_64F.
cv::Mat to_grayscale(const cv::Mat& rgb);

// ---------------------------------------------------------------------------
// Synthetic multi-agent scenes

struct SyntheticConfig {
  int agents = 2;
  int frames = 64;
  int resolution = 256;
  std::uint64_t seed = 0;
  /// Mean walking speed in pixels per frame at 256 px.
  double speed = 2.0;
};

/// Pose of one elliptical agent in pixel units.
struct AgentPose {
  double cx = 0.0;
  double cy = 0.0;
  double heading = 0.0;     ///< radians, image axes (y down)
  double half_length = 0.0;
  double half_width = 0.0;
};

struct SyntheticScene {
  int agent_count = 0;
  int resolution = 0;
  /// poses[frame][agent]
  std::vector<std::vector<AgentPose>> poses;
  /// keypoints[frame][agent][part] in pixels; parts are nose, head, body
  /// center and tail base.
  std::vector<std::vector<std::vector<cv::Point2d>>> keypoints;
  /// One CV_8U label map per frame: 0 background, n = agent n (1-based).
  /// Filled by generate_synthetic; left empty by SyntheticVideo::scene().
  std::vector<cv::Mat> label_maps;

  static constexpr int kPartsPerAgent = 4;
};

/// Deterministic synthetic video of same-looking elliptical agents walking
/// over a static textured floor. Each agent has a bright head spot and a
/// grey rump patch so its parts can be told apart under rotation. Frames are
/// rendered on demand so long scenes need not be held in memory.
class SyntheticVideo {
 public:
  /// Throws std::invalid_argument on bad config and std::runtime_error when
  /// the agents cannot be placed without overlap.
  explicit SyntheticVideo(const SyntheticConfig& config);

  const SyntheticConfig& config() const { return config_; }
  /// Poses and keypoints for every frame (label_maps left empty).
  const SyntheticScene& scene() const { return scene_; }

  Frame render(int t) const;
  cv::Mat label_map(int t) const;

 private:
  int owner(int t, double x, double y) const;

  SyntheticConfig config_;
  SyntheticScene scene_;
  cv::Mat background_;  // CV_32FC3
};

std::pair<std::vector<Frame>, SyntheticScene> generate_synthetic(const SyntheticConfig& config);

/// Binary CV_8U mask (values 0/1) of one agent.
cv::Mat agent_mask(const cv::Mat& label_map, int agent_id);

}  // namespace bkind
