#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <torch/torch.h>

#include "bkind/evaluation.hpp"

namespace bkind {

namespace nn = torch::nn;

struct BehaviorClassifier::State {
  ClassifierSpec spec;
  int classes = 0;
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;
  nn::Sequential net{nullptr};

  // [frames, F, window] windows centred on frames[begin, end).
  torch::Tensor windows(const torch::Tensor& standardized, const std::vector<int64_t>& centers) const {
    const int64_t frames = standardized.size(0);
    const int half = spec.window / 2;
    std::vector<int64_t> idx;
    idx.reserve(centers.size() * spec.window);
    for (int64_t c : centers)
      for (int k = -half; k <= half; ++k) idx.push_back(std::clamp<int64_t>(c + k, 0, frames - 1));
    auto gathered = standardized.index_select(0, torch::tensor(idx, torch::kLong));
    return gathered.view({static_cast<int64_t>(centers.size()), spec.window, standardized.size(1)})
        .permute({0, 2, 1})
        .contiguous();
  }

  torch::Tensor standardize(const Eigen::MatrixXd& features) const {
    Eigen::MatrixXf z = ((features.rowwise() - mean).array().rowwise() / scale.array()).cast<float>();
    // Eigen is column-major; copy into a row-major tensor.
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = z;
    return torch::from_blob(rm.data(), {rm.rows(), rm.cols()}, torch::kFloat32).clone();
  }
};

BehaviorClassifier::BehaviorClassifier(std::unique_ptr<State> state) : state_(std::move(state)) {}
BehaviorClassifier::BehaviorClassifier(BehaviorClassifier&&) noexcept = default;
BehaviorClassifier& BehaviorClassifier::operator=(BehaviorClassifier&&) noexcept = default;
BehaviorClassifier::~BehaviorClassifier() = default;

int BehaviorClassifier::num_classes() const { return state_->classes; }
const ClassifierSpec& BehaviorClassifier::spec() const { return state_->spec; }

Eigen::MatrixXd BehaviorClassifier::predict(const Eigen::MatrixXd& features) const {
  if (features.cols() != state_->mean.size())
    throw std::invalid_argument("classifier: feature width differs from training data");
  torch::NoGradGuard no_grad;
  state_->net->eval();
  const auto z = state_->standardize(features);
  Eigen::MatrixXd out(features.rows(), state_->classes);
  const int64_t frames = features.rows();
  for (int64_t begin = 0; begin < frames; begin += 256) {
    const int64_t end = std::min<int64_t>(frames, begin + 256);
    std::vector<int64_t> centers(end - begin);
    std::iota(centers.begin(), centers.end(), begin);
    const auto probs = torch::softmax(state_->net->forward(state_->windows(z, centers)), 1).to(torch::kDouble);
    const auto acc = probs.accessor<double, 2>();
    for (int64_t i = 0; i < end - begin; ++i)
      for (int c = 0; c < state_->classes; ++c) out(begin + i, c) = acc[i][c];
  }
  return out;
}

BehaviorClassifier train_behavior_classifier(const BehaviorDataset& train, const ClassifierSpec& spec) {
  if (static_cast<std::size_t>(train.features.rows()) != train.labels.size())
    throw std::invalid_argument("classifier: features and labels are not aligned");
  if (spec.window < 1 || spec.window % 2 == 0) throw std::invalid_argument("classifier window must be odd");
  const std::set<int> present(train.labels.begin(), train.labels.end());
  if (present.size() < 2) throw std::invalid_argument("classifier needs at least two classes in the training data");
  if (*present.begin() < 0) throw std::invalid_argument("classifier labels must be non-negative");

  auto state = std::make_unique<BehaviorClassifier::State>();
  state->spec = spec;
  state->classes = *present.rbegin() + 1;
  state->mean = train.features.colwise().mean();
  const Eigen::RowVectorXd var =
      (train.features.rowwise() - state->mean).array().square().colwise().mean();
  state->scale = var.array().sqrt().unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; });

  torch::manual_seed(spec.seed);
  const int f = static_cast<int>(train.features.cols());
  const int h = spec.hidden;
  state->net = nn::Sequential(nn::Conv1d(nn::Conv1dOptions(f, h, 3).padding(1)), nn::ReLU(),
                              nn::Conv1d(nn::Conv1dOptions(h, h, 3).padding(2).dilation(2)), nn::ReLU(),
                              nn::MaxPool1d(nn::MaxPool1dOptions(2)),
                              nn::Conv1d(nn::Conv1dOptions(h, h, 3).padding(1)), nn::ReLU(),
                              nn::AdaptiveAvgPool1d(nn::AdaptiveAvgPool1dOptions(1)), nn::Flatten(),
                              nn::Linear(h, state->classes));

  const auto z = state->standardize(train.features);
  const auto labels = torch::tensor(std::vector<int64_t>(train.labels.begin(), train.labels.end()), torch::kLong);
  torch::optim::Adam optimizer(state->net->parameters(), torch::optim::AdamOptions(spec.learning_rate));
  std::mt19937_64 rng(spec.seed);
  std::vector<int64_t> order(train.labels.size());
  std::iota(order.begin(), order.end(), 0);
  state->net->train();
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += spec.batch_size) {
      const std::size_t end = std::min(order.size(), begin + spec.batch_size);
      std::vector<int64_t> centers(order.begin() + begin, order.begin() + end);
      const auto logits = state->net->forward(state->windows(z, centers));
      const auto loss = torch::nn::functional::cross_entropy(
          logits, labels.index_select(0, torch::tensor(centers, torch::kLong)));
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
    }
  }
  return BehaviorClassifier(std::move(state));
}

}  // namespace bkind
