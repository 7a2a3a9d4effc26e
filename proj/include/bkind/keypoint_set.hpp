#pragma once

#include <vector>

namespace bkind {

/// One discovered keypoint in normalized coordinates ([-1,1]^2, u along
/// columns, v along rows) with its heatmap confidence and covariance.
struct Keypoint {
  double u = 0.0;
  double v = 0.0;
  double confidence = 0.0;
  double cov_xx = 0.0;
  double cov_xy = 0.0;
  double cov_yy = 0.0;
};

struct KeypointSet {
  int frame_index = 0;
  int num_agents = 0;
  int num_keypoints = 0;
  std::vector<int> agent_ids;     ///< tracked id of each agent slot
  std::vector<Keypoint> points;   ///< agent-major: points[n * K + k]

  const Keypoint& at(int agent, int keypoint) const { return points.at(agent * num_keypoints + keypoint); }
  Keypoint& at(int agent, int keypoint) { return points.at(agent * num_keypoints + keypoint); }
};

/// Normalized coordinate to pixels for an image `size` pixels wide; the
/// normalized range [-1,1] spans pixel edges [0, size].
inline double normalized_to_pixels(double value, double size) { return (value + 1.0) * 0.5 * size; }
inline double pixels_to_normalized(double value, double size) { return value / size * 2.0 - 1.0; }

}  // namespace bkind
