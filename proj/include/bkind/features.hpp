#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace bkind {

enum class ConfidenceMode {
  SigmoidOfRawPeak,  ///< sigmoid(max raw masked logit), in (0,1)
  RawPeak,           ///< max raw masked logit
};

struct HeatmapFeatures {
  double confidence = 0.0;
  double cov_xx = 0.0;
  double cov_yy = 0.0;
  double cov_xy = 0.0;
};

double confidence_from_peak(double raw_peak, ConfidenceMode mode = ConfidenceMode::SigmoidOfRawPeak);

/// Second moments of `map` (rows = y, cols = x; non-negative, any positive
/// scale) about (u, v) on the normalized cell grid, after normalizing it to
/// unit mass. `raw_peak` is the pre-normalization peak used for the
/// confidence; when NaN the map's own maximum is used. Throws
/// std::invalid_argument when the map has no positive mass or a negative cell.
HeatmapFeatures heatmap_moments(const Eigen::MatrixXd& map, double u, double v,
                                double raw_peak = std::numeric_limits<double>::quiet_NaN(),
                                ConfidenceMode mode = ConfidenceMode::SigmoidOfRawPeak);

/// Keypoint trajectories: positions(t, 2*p) = x, positions(t, 2*p+1) = y for
/// point p. Points from all agents are flattened into one list.
struct TrajectoryFeatures {
  Eigen::MatrixXd speed;         ///< T x P
  Eigen::MatrixXd acceleration;  ///< T x P
  Eigen::MatrixXd distance;      ///< T x pairs, pairs (i<j) in row-major order
  Eigen::MatrixXd angle;         ///< T x pairs, atan2(y_j - y_i, x_j - x_i)
  std::vector<std::pair<int, int>> pairs;
};

/// Speed = |p_t - p_{t-g}| / g and acceleration = |p_{t+g} - 2 p_t + p_{t-g}| / g^2,
/// with frames lacking a neighbour copying the nearest defined value.
/// Requires at least two frames.
TrajectoryFeatures trajectory_features(const Eigen::MatrixXd& positions, int gap = 1);

/// Full distance matrix between the points of one frame.
Eigen::MatrixXd pairwise_distances(const Eigen::VectorXd& frame_positions);
/// Orientation of the segment from point i to point j, in (-pi, pi].
double segment_angle(const Eigen::VectorXd& frame_positions, int i, int j);

/// Flattened per-frame feature table and the header naming each column.
struct FeatureTable {
  std::vector<std::string> header;
  Eigen::MatrixXd values;
};

FeatureTable trajectory_feature_table(const TrajectoryFeatures& features);

}  // namespace bkind
