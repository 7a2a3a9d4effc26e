#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bkind {

// ---------------------------------------------------------------------------
// Keypoint regression

struct RegressionResult {
  Eigen::MatrixXd weights;  ///< features x targets, no intercept
  double pct_mse = 0.0;
  int n_frames = 0;
  bool rank_deficient = false;
};

/// Least-squares W minimizing |Y - X W|^2 without a bias term, after
/// dividing both X and Y by `image_size`. pct_mse is 100 times the mean
/// squared residual over frames and target coordinates.
RegressionResult fit_keypoint_regression(const Eigen::MatrixXd& discovered, const Eigen::MatrixXd& ground_truth,
                                         double image_size);

/// pct_mse of an already fitted map on new data.
double regression_pct_mse(const RegressionResult& fit, const Eigen::MatrixXd& discovered,
                          const Eigen::MatrixXd& ground_truth, double image_size);

// ---------------------------------------------------------------------------
// Average precision

struct PrecisionRecallPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct ClassifierResult {
  std::vector<double> average_precision;  ///< per class; NaN for excluded classes
  std::vector<bool> excluded;             ///< class had no positive frame
  double map = 0.0;                       ///< unweighted mean over included classes
  std::vector<std::vector<PrecisionRecallPoint>> curves;
};

/// Precision/recall at every distinct score threshold (predict positive when
/// score >= threshold), thresholds descending.
std::vector<PrecisionRecallPoint> precision_recall_curve(const std::vector<double>& scores,
                                                         const std::vector<bool>& positive);

/// All-points interpolated AP: sum over curve points of the recall increment
/// times the best precision at that recall or beyond. Tied scores form one
/// operating point.
double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive);

/// scores: frames x classes, labels: class index per frame.
ClassifierResult mean_average_precision(const Eigen::MatrixXd& scores, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Behaviour classifier

struct BehaviorDataset {
  Eigen::MatrixXd features;  ///< frames x F
  std::vector<int> labels;   ///< per frame
};

struct ClassifierSpec {
  int window = 31;  ///< centred window length, odd
  int hidden = 32;
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// Temporal 1-D convolutional classifier over centred windows of the
/// standardized feature stream (edges padded by repetition):
///   conv(F->hidden,k3) ReLU conv(hidden->hidden,k3,dil2) ReLU maxpool2
///   conv(hidden->hidden,k3) ReLU global-avg-pool linear(hidden->classes)
class BehaviorClassifier {
 public:
  BehaviorClassifier(BehaviorClassifier&&) noexcept;
  BehaviorClassifier& operator=(BehaviorClassifier&&) noexcept;
  ~BehaviorClassifier();

  /// Softmax class scores, frames x classes.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& features) const;
  int num_classes() const;
  const ClassifierSpec& spec() const;

 private:
  struct State;
  explicit BehaviorClassifier(std::unique_ptr<State> state);
  std::unique_ptr<State> state_;

  friend BehaviorClassifier train_behavior_classifier(const BehaviorDataset&, const ClassifierSpec&);
};

/// Throws std::invalid_argument when fewer than two classes are present.
BehaviorClassifier train_behavior_classifier(const BehaviorDataset& train, const ClassifierSpec& spec = {});

double accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& labels);

}  // namespace bkind
