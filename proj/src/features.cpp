#include "bkind/features.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace bkind {

namespace {

double cell_center(int index, int size) { return (2.0 * index + 1.0) / size - 1.0; }

// Row t of src copied from the nearest row in [lo, hi].
void pad_rows(Eigen::MatrixXd& m, int lo, int hi) {
  for (int t = 0; t < lo; ++t) m.row(t) = m.row(lo);
  for (int t = hi + 1; t < m.rows(); ++t) m.row(t) = m.row(hi);
}

}  // namespace

double confidence_from_peak(double raw_peak, ConfidenceMode mode) {
  if (mode == ConfidenceMode::RawPeak) return raw_peak;
  return 1.0 / (1.0 + std::exp(-raw_peak));
}

HeatmapFeatures heatmap_moments(const Eigen::MatrixXd& map, double u, double v, double raw_peak,
                                ConfidenceMode mode) {
  if (map.size() == 0) throw std::invalid_argument("heatmap_moments: empty map");
  if ((map.array() < 0.0).any()) throw std::invalid_argument("heatmap_moments: negative cell");
  const double mass = map.sum();
  if (!(mass > 0.0)) throw std::invalid_argument("heatmap_moments: map has no mass");

  const int rows = static_cast<int>(map.rows());
  const int cols = static_cast<int>(map.cols());
  HeatmapFeatures f;
  for (int r = 0; r < rows; ++r) {
    const double dy = cell_center(r, rows) - v;
    for (int c = 0; c < cols; ++c) {
      const double p = map(r, c) / mass;
      const double dx = cell_center(c, cols) - u;
      f.cov_xx += dx * dx * p;
      f.cov_yy += dy * dy * p;
      f.cov_xy += dx * dy * p;
    }
  }
  f.confidence = confidence_from_peak(std::isnan(raw_peak) ? map.maxCoeff() : raw_peak, mode);
  return f;
}

Eigen::MatrixXd pairwise_distances(const Eigen::VectorXd& frame_positions) {
  const int points = static_cast<int>(frame_positions.size() / 2);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(points, points);
  for (int i = 0; i < points; ++i)
    for (int j = i + 1; j < points; ++j) {
      const double dx = frame_positions(2 * j) - frame_positions(2 * i);
      const double dy = frame_positions(2 * j + 1) - frame_positions(2 * i + 1);
      d(i, j) = d(j, i) = std::hypot(dx, dy);
    }
  return d;
}

double segment_angle(const Eigen::VectorXd& frame_positions, int i, int j) {
  const double a = std::atan2(frame_positions(2 * j + 1) - frame_positions(2 * i + 1),
                              frame_positions(2 * j) - frame_positions(2 * i));
  // atan2 returns [-pi, pi]; fold -pi onto pi.
  return a == -std::numbers::pi ? std::numbers::pi : a;
}

TrajectoryFeatures trajectory_features(const Eigen::MatrixXd& positions, int gap) {
  const int frames = static_cast<int>(positions.rows());
  if (frames < 2) throw std::invalid_argument("trajectory_features needs at least two frames");
  if (positions.cols() % 2 != 0) throw std::invalid_argument("positions must hold (x, y) pairs");
  if (gap < 1) throw std::invalid_argument("gap must be >= 1");
  const int points = static_cast<int>(positions.cols() / 2);

  TrajectoryFeatures out;
  out.speed = Eigen::MatrixXd::Zero(frames, points);
  out.acceleration = Eigen::MatrixXd::Zero(frames, points);
  for (int t = gap; t < frames; ++t)
    for (int p = 0; p < points; ++p) {
      const double dx = positions(t, 2 * p) - positions(t - gap, 2 * p);
      const double dy = positions(t, 2 * p + 1) - positions(t - gap, 2 * p + 1);
      out.speed(t, p) = std::hypot(dx, dy) / gap;
    }
  if (gap < frames) pad_rows(out.speed, gap, frames - 1);

  if (2 * gap < frames) {
    for (int t = gap; t + gap < frames; ++t)
      for (int p = 0; p < points; ++p) {
        const double ax = positions(t + gap, 2 * p) - 2 * positions(t, 2 * p) + positions(t - gap, 2 * p);
        const double ay =
            positions(t + gap, 2 * p + 1) - 2 * positions(t, 2 * p + 1) + positions(t - gap, 2 * p + 1);
        out.acceleration(t, p) = std::hypot(ax, ay) / (static_cast<double>(gap) * gap);
      }
    pad_rows(out.acceleration, gap, frames - 1 - gap);
  }

  for (int i = 0; i < points; ++i)
    for (int j = i + 1; j < points; ++j) out.pairs.emplace_back(i, j);
  const int pairs = static_cast<int>(out.pairs.size());
  out.distance = Eigen::MatrixXd::Zero(frames, pairs);
  out.angle = Eigen::MatrixXd::Zero(frames, pairs);
  for (int t = 0; t < frames; ++t) {
    const Eigen::VectorXd row = positions.row(t).transpose();
    for (int q = 0; q < pairs; ++q) {
      const auto [i, j] = out.pairs[q];
      out.distance(t, q) = std::hypot(row(2 * j) - row(2 * i), row(2 * j + 1) - row(2 * i + 1));
      out.angle(t, q) = segment_angle(row, i, j);
    }
  }
  return out;
}

FeatureTable trajectory_feature_table(const TrajectoryFeatures& features) {
  const auto frames = features.speed.rows();
  const auto points = features.speed.cols();
  const auto pairs = static_cast<Eigen::Index>(features.pairs.size());
  FeatureTable table;
  table.values.resize(frames, 2 * points + 2 * pairs);
  table.values << features.speed, features.acceleration, features.distance, features.angle;
  for (Eigen::Index p = 0; p < points; ++p) table.header.push_back("speed_" + std::to_string(p));
  for (Eigen::Index p = 0; p < points; ++p) table.header.push_back("accel_" + std::to_string(p));
  for (const auto& [i, j] : features.pairs)
    table.header.push_back("dist_" + std::to_string(i) + "_" + std::to_string(j));
  for (const auto& [i, j] : features.pairs)
    table.header.push_back("angle_" + std::to_string(i) + "_" + std::to_string(j));
  return table;
}

}  // namespace bkind
