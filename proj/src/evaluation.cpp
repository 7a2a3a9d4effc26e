#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "bkind/evaluation.hpp"

namespace bkind {

RegressionResult fit_keypoint_regression(const Eigen::MatrixXd& discovered, const Eigen::MatrixXd& ground_truth,
                                         double image_size) {
  if (discovered.rows() != ground_truth.rows())
    throw std::invalid_argument("regression: feature and ground-truth frame counts differ");
  if (discovered.rows() == 0) throw std::invalid_argument("regression: no frames");
  if (image_size <= 0.0) throw std::invalid_argument("regression: image size must be positive");
  if (!discovered.allFinite() || !ground_truth.allFinite())
    throw std::invalid_argument("regression: missing or non-finite values");

  const Eigen::MatrixXd x = discovered / image_size;
  const Eigen::MatrixXd y = ground_truth / image_size;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
  RegressionResult result;
  result.weights = cod.solve(y);
  result.rank_deficient = cod.rank() < x.cols();
  result.n_frames = static_cast<int>(x.rows());
  const Eigen::MatrixXd residual = y - x * result.weights;
  result.pct_mse = 100.0 * residual.squaredNorm() / static_cast<double>(residual.size());
  return result;
}

double regression_pct_mse(const RegressionResult& fit, const Eigen::MatrixXd& discovered,
                          const Eigen::MatrixXd& ground_truth, double image_size) {
  if (discovered.rows() != ground_truth.rows() || discovered.cols() != fit.weights.rows() ||
      ground_truth.cols() != fit.weights.cols())
    throw std::invalid_argument("regression: shape mismatch with the fitted map");
  const Eigen::MatrixXd residual = ground_truth / image_size - (discovered / image_size) * fit.weights;
  return 100.0 * residual.squaredNorm() / static_cast<double>(residual.size());
}

std::vector<PrecisionRecallPoint> precision_recall_curve(const std::vector<double>& scores,
                                                         const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("precision_recall_curve: size mismatch");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("precision_recall_curve: non-finite score");
  const auto total_pos = std::count(positive.begin(), positive.end(), true);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<PrecisionRecallPoint> curve;
  long tp = 0;
  long fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (positive[order[i]]) ++tp; else ++fp;
    const bool last_of_tie = i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]];
    if (!last_of_tie) continue;
    PrecisionRecallPoint p;
    p.threshold = scores[order[i]];
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = total_pos > 0 ? static_cast<double>(tp) / static_cast<double>(total_pos) : 0.0;
    curve.push_back(p);
  }
  return curve;
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const auto curve = precision_recall_curve(scores, positive);
  if (std::none_of(positive.begin(), positive.end(), [](bool b) { return b; }))
    return std::numeric_limits<double>::quiet_NaN();
  double ap = 0.0;
  double best_after = 0.0;
  // Walk from the lowest threshold up so the running max is the
  // interpolated precision.
  std::vector<double> interpolated(curve.size());
  for (std::size_t i = curve.size(); i-- > 0;) {
    best_after = std::max(best_after, curve[i].precision);
    interpolated[i] = best_after;
  }
  double previous_recall = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - previous_recall) * interpolated[i];
    previous_recall = curve[i].recall;
  }
  return ap;
}

ClassifierResult mean_average_precision(const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size())
    throw std::invalid_argument("mean_average_precision: scores and labels differ in length");
  if (!scores.allFinite()) throw std::invalid_argument("mean_average_precision: non-finite score");
  ClassifierResult result;
  const int classes = static_cast<int>(scores.cols());
  double sum = 0.0;
  int included = 0;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> s(scores.rows());
    std::vector<bool> pos(scores.rows());
    for (Eigen::Index t = 0; t < scores.rows(); ++t) {
      s[t] = scores(t, c);
      pos[t] = labels[t] == c;
    }
    const bool absent = std::none_of(pos.begin(), pos.end(), [](bool b) { return b; });
    result.excluded.push_back(absent);
    result.curves.push_back(precision_recall_curve(s, pos));
    if (absent) {
      result.average_precision.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double ap = average_precision(s, pos);
    result.average_precision.push_back(ap);
    sum += ap;
    ++included;
  }
  result.map = included > 0 ? sum / included : std::numeric_limits<double>::quiet_NaN();
  return result;
}

double accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size() || labels.empty())
    throw std::invalid_argument("accuracy: size mismatch");
  int correct = 0;
  for (Eigen::Index t = 0; t < scores.rows(); ++t) {
    Eigen::Index best = 0;
    scores.row(t).maxCoeff(&best);
    if (best == labels[t]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace bkind
