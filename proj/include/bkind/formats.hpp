#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <opencv2/core.hpp>

#include "bkind/keypoint_set.hpp"
#include "bkind/segmentation.hpp"
#include "bkind/video_io.hpp"

namespace bkind {

/// Writes through a sibling temporary file and renames it into place.
void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);
void atomic_write_text(const std::filesystem::path& path, const std::string& content);
void atomic_write_png(const std::filesystem::path& path, const cv::Mat& image);

std::string read_text(const std::filesystem::path& path);
/// Splits a CSV file into rows of fields; the header row is returned separately.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, std::vector<std::string>* header);

// ---------------------------------------------------------------------------
// Keypoints

/// Ground-truth keypoints as `frame,agent,kp,x,y` (pixels).
struct KeypointRow {
  int frame = 0;
  int agent = 0;
  int kp = 0;
  double x = 0.0;
  double y = 0.0;
};

void write_keypoint_csv(const std::filesystem::path& path, const std::vector<KeypointRow>& rows);
std::vector<KeypointRow> read_keypoint_csv(const std::filesystem::path& path);
std::vector<KeypointRow> scene_keypoint_rows(const SyntheticScene& scene);

/// Inference output `frame,agent,kp,x_px,y_px,confidence,cov_xx,cov_xy,cov_yy`,
/// coordinates and covariances converted to pixels of an image `pixel_size`
/// wide.
std::string inference_csv(const std::vector<KeypointSet>& sets, double pixel_size);
void write_inference_csv(const std::filesystem::path& path, const std::vector<KeypointSet>& sets,
                         double pixel_size);

struct InferenceRow {
  int frame = 0;
  int agent = 0;
  int kp = 0;
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
  double cov_xx = 0.0;
  double cov_xy = 0.0;
  double cov_yy = 0.0;
};
std::vector<InferenceRow> read_inference_csv(const std::filesystem::path& path);

/// Frame-indexed matrices for regression. Within a frame, agents are
/// ordered by id and keypoints by index; a frame's row is
/// [x,y per keypoint] followed (unless keypoints_only) by
/// [confidence, cov_xx, cov_xy, cov_yy per keypoint].
struct FrameMatrix {
  std::vector<int> frames;
  Eigen::MatrixXd values;
  std::vector<std::string> columns;
};
FrameMatrix inference_matrix(const std::vector<InferenceRow>& rows, bool keypoints_only);
FrameMatrix keypoint_matrix(const std::vector<KeypointRow>& rows);
/// Rows of `a` and `b` restricted to frames present in both, in frame order.
std::pair<FrameMatrix, FrameMatrix> align_frames(const FrameMatrix& a, const FrameMatrix& b);

// ---------------------------------------------------------------------------
// Masks

/// `dir/%06d.png` label maps plus `dir/index.json` with
/// {frame, agents:[{id, area, bbox:[x,y,w,h]}]} per frame.
void write_mask_directory(const std::filesystem::path& dir, const std::vector<AgentMaskSet>& masks, int rows,
                          int cols);
std::vector<AgentMaskSet> read_mask_directory(const std::filesystem::path& dir);
std::vector<cv::Mat> read_label_maps(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Tables

void write_feature_csv(const std::filesystem::path& path, const std::vector<int>& frames,
                       const std::vector<std::string>& header, const Eigen::MatrixXd& values);
FrameMatrix read_feature_csv(const std::filesystem::path& path);

/// `frame,label` with integer labels.
std::vector<std::pair<int, int>> read_label_csv(const std::filesystem::path& path);
void write_label_csv(const std::filesystem::path& path, const std::vector<std::pair<int, int>>& labels);

}  // namespace bkind
