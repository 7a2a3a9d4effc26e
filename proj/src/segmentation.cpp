#include "bkind/segmentation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include <opencv2/imgproc.hpp>

namespace bkind {

namespace {

void require_same_shape(const cv::Mat& a, const cv::Mat& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument(std::string(what) + ": mask shape mismatch");
}

struct Match {
  int prev;
  int next;
  double score;
};

// Greedy one-to-one matching on IoU, highest first; pairs below `min_iou`
// (exclusive) are never matched.
std::vector<Match> greedy_match(const std::vector<cv::Mat>& a, const std::vector<cv::Mat>& b,
                                double min_iou) {
  std::vector<Match> candidates;
  for (int i = 0; i < static_cast<int>(a.size()); ++i)
    for (int j = 0; j < static_cast<int>(b.size()); ++j) {
      const double v = iou(a[i], b[j]);
      if (v > min_iou) candidates.push_back({i, j, v});
    }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Match& x, const Match& y) { return x.score > y.score; });
  std::vector<bool> used_a(a.size(), false);
  std::vector<bool> used_b(b.size(), false);
  std::vector<Match> out;
  for (const auto& m : candidates) {
    if (used_a[m.prev] || used_b[m.next]) continue;
    used_a[m.prev] = used_b[m.next] = true;
    out.push_back(m);
  }
  return out;
}

// Centroid shifts are only trusted between masks of comparable size; a
// fragment matched to a whole agent would drag the estimate sideways.
bool similar_area(const cv::Mat& a, const cv::Mat& b) {
  const double x = cv::countNonZero(a);
  const double y = cv::countNonZero(b);
  return x > 0 && y > 0 && std::min(x, y) / std::max(x, y) >= 2.0 / 3.0;
}

std::vector<cv::Mat> masks_of(const std::vector<MaskProposal>& proposals) {
  std::vector<cv::Mat> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) out.push_back(p.mask);
  return out;
}

cv::Mat resize_mask_nearest(const cv::Mat& mask, int rows, int cols) {
  if (mask.rows == rows && mask.cols == cols) return mask;
  cv::Mat out;
  cv::resize(mask, out, cv::Size(cols, rows), 0, 0, cv::INTER_NEAREST);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Detectors

OracleDetector::OracleDetector(std::vector<cv::Mat> label_maps) : label_maps_(std::move(label_maps)) {}

std::vector<MaskProposal> OracleDetector::exact(int frame_index) const {
  if (frame_index < 0 || frame_index >= static_cast<int>(label_maps_.size()))
    throw std::out_of_range("oracle detector has no labels for frame " + std::to_string(frame_index));
  const cv::Mat& labels = label_maps_[frame_index];
  double max_label = 0.0;
  cv::minMaxLoc(labels, nullptr, &max_label);
  std::vector<MaskProposal> out;
  for (int id = 1; id <= static_cast<int>(max_label); ++id) {
    cv::Mat m = agent_mask(labels, id);
    if (cv::countNonZero(m) == 0) continue;
    out.push_back({m, 1.0, frame_index});
  }
  return out;
}

std::vector<MaskProposal> OracleDetector::detect(const Frame& frame) const { return exact(frame.index); }

NoisyOracleDetector::NoisyOracleDetector(std::vector<cv::Mat> label_maps, double noisy_fraction,
                                         std::uint64_t seed)
    : OracleDetector(std::move(label_maps)), seed_(seed) {
  if (!(noisy_fraction >= 0.0 && noisy_fraction <= 1.0))
    throw std::invalid_argument("noisy fraction must be in [0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  noisy_.resize(label_maps_.size());
  for (std::size_t i = 0; i < noisy_.size(); ++i) noisy_[i] = unit(rng) < noisy_fraction;
}

bool NoisyOracleDetector::is_noisy(int frame_index) const {
  return frame_index >= 0 && frame_index < static_cast<int>(noisy_.size()) && noisy_[frame_index];
}

std::vector<MaskProposal> NoisyOracleDetector::detect(const Frame& frame) const {
  auto clean = exact(frame.index);
  if (!is_noisy(frame.index)) return clean;
  // Each noisy frame cuts every agent along an independently drawn line
  // near its centroid, so fragments rarely agree across frames.
  std::mt19937_64 rng(seed_ ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(frame.index + 1)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<MaskProposal> out;
  for (const auto& p : clean) {
    const cv::Moments m = cv::moments(p.mask, true);
    const double cx = m.m10 / m.m00;
    const double cy = m.m01 / m.m00;
    const double angle = unit(rng) * std::numbers::pi;
    const double ax = std::cos(angle);
    const double ay = std::sin(angle);
    const double offset = (unit(rng) - 0.5) * 0.5 * std::sqrt(m.m00 / std::numbers::pi);
    cv::Mat front = cv::Mat::zeros(p.mask.size(), CV_8U);
    cv::Mat back = cv::Mat::zeros(p.mask.size(), CV_8U);
    for (int r = 0; r < p.mask.rows; ++r)
      for (int c = 0; c < p.mask.cols; ++c) {
        if (!p.mask.at<std::uint8_t>(r, c)) continue;
        const double along = (c - cx) * ax + (r - cy) * ay;
        (along >= offset ? front : back).at<std::uint8_t>(r, c) = 1;
      }
    for (cv::Mat* half : {&front, &back})
      if (cv::countNonZero(*half) > 0) out.push_back({*half, 0.6, frame.index});
  }
  // Spurious blob at a frame-dependent position.
  const cv::Size size = clean.empty() ? frame.pixels.size() : clean.front().mask.size();
  std::uniform_int_distribution<int> px(0, size.width - 1);
  std::uniform_int_distribution<int> py(0, size.height - 1);
  cv::Mat blob = cv::Mat::zeros(size, CV_8U);
  cv::circle(blob, {px(rng), py(rng)}, std::max(2, size.width / 40), cv::Scalar(1), cv::FILLED);
  out.push_back({blob, 0.5, frame.index});
  return out;
}

ThresholdDetector::ThresholdDetector(ThresholdDetectorConfig config) : config_(std::move(config)) {}

std::vector<MaskProposal> ThresholdDetector::detect(const Frame& frame) const {
  const cv::Mat gray = to_grayscale(frame.pixels);
  std::vector<double> values(gray.begin<double>(), gray.end<double>());
  if (values.empty()) return {};
  auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  const double background = *mid;
  const double max_contrast = std::max(background, 1.0 - background);

  cv::Mat contrast = cv::abs(gray - background);
  cv::Mat fg = contrast > config_.min_contrast;
  cv::Mat labels;
  cv::Mat stats;
  cv::Mat centroids;
  const int count = cv::connectedComponentsWithStats(fg, labels, stats, centroids, 8, CV_32S);
  std::vector<double> contrast_sum(count, 0.0);
  for (int r = 0; r < labels.rows; ++r)
    for (int c = 0; c < labels.cols; ++c) contrast_sum[labels.at<int>(r, c)] += contrast.at<double>(r, c);

  std::vector<MaskProposal> out;
  for (int id = 1; id < count; ++id) {
    const int area = stats.at<int>(id, cv::CC_STAT_AREA);
    if (area < config_.min_area) continue;
    const double score = std::min(1.0, contrast_sum[id] / area / max_contrast);
    if (score < config_.dino_threshold) continue;
    cv::Mat m = (labels == id);
    m.convertTo(m, CV_8U, 1.0 / 255.0);
    out.push_back({m, score, frame.index});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mask geometry

double iou(const cv::Mat& a, const cv::Mat& b) {
  require_same_shape(a, b, "iou");
  const int inter = cv::countNonZero(a & b);
  const int uni = cv::countNonZero(a | b);
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

std::optional<cv::Point2d> mask_centroid(const cv::Mat& mask) {
  const cv::Moments m = cv::moments(mask, true);
  if (m.m00 <= 0.0) return std::nullopt;
  return cv::Point2d(m.m10 / m.m00, m.m01 / m.m00);
}

cv::Mat translate_mask(const cv::Mat& mask, cv::Point2d shift) {
  const int dx = static_cast<int>(std::lround(shift.x));
  const int dy = static_cast<int>(std::lround(shift.y));
  cv::Mat out = cv::Mat::zeros(mask.size(), mask.type());
  const int w = mask.cols - std::abs(dx);
  const int h = mask.rows - std::abs(dy);
  if (w <= 0 || h <= 0) return out;
  const cv::Rect src(std::max(0, -dx), std::max(0, -dy), w, h);
  const cv::Rect dst(std::max(0, dx), std::max(0, dy), w, h);
  mask(src).copyTo(out(dst));
  return out;
}

// ---------------------------------------------------------------------------
// In-clip consensus

std::vector<MaskProposal> align_proposals(const std::vector<ClipFrame>& clip, int target_index) {
  const int n = static_cast<int>(clip.size());
  if (target_index < 0 || target_index >= n) throw std::out_of_range("align_proposals: bad target index");

  // link[f][i] = (frame, proposal) one or more steps toward the target that
  // proposal i of frame f was matched to. When the neighbouring frame has no
  // comparable mask (e.g. the detector fragmented it) the search skips ahead.
  struct Link {
    int frame = -1;
    int index = -1;
  };
  std::vector<std::vector<Link>> link(n);
  for (int f = 0; f < n; ++f) {
    if (f == target_index) continue;
    const int step = f > target_index ? -1 : 1;
    link[f].assign(clip[f].proposals.size(), Link{});
    std::vector<int> pending(clip[f].proposals.size());
    std::iota(pending.begin(), pending.end(), 0);
    for (int g = f + step; !pending.empty(); g += step) {
      std::vector<cv::Mat> from;
      for (int i : pending) from.push_back(clip[f].proposals[i].mask);
      std::vector<bool> done(pending.size(), false);
      for (const auto& m : greedy_match(from, masks_of(clip[g].proposals), 0.5)) {
        if (!similar_area(from[m.prev], clip[g].proposals[m.next].mask)) continue;
        link[f][pending[m.prev]] = {g, m.next};
        done[m.prev] = true;
      }
      std::vector<int> rest;
      for (std::size_t i = 0; i < pending.size(); ++i)
        if (!done[i]) rest.push_back(pending[i]);
      pending = std::move(rest);
      if (g == target_index) break;
    }
  }

  std::vector<MaskProposal> out;
  for (int f = 0; f < n; ++f) {
    for (int i = 0; i < static_cast<int>(clip[f].proposals.size()); ++i) {
      const MaskProposal& p = clip[f].proposals[i];
      cv::Point2d shift(0.0, 0.0);
      int frame = f;
      int idx = i;
      while (frame != target_index) {
        const Link next = link[frame][idx];
        if (next.frame < 0) break;
        const auto from = mask_centroid(clip[frame].proposals[idx].mask);
        const auto to = mask_centroid(clip[next.frame].proposals[next.index].mask);
        if (from && to) shift += *to - *from;
        frame = next.frame;
        idx = next.index;
      }
      MaskProposal warped = p;
      if (shift.x != 0.0 || shift.y != 0.0) warped.mask = translate_mask(p.mask, shift);
      if (cv::countNonZero(warped.mask) == 0) continue;
      out.push_back(std::move(warped));
    }
  }
  return out;
}

std::vector<double> support_weights(const std::vector<std::vector<double>>& iou_matrix,
                                    double support_threshold, const std::vector<double>& scores) {
  const std::size_t n = iou_matrix.size();
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && iou_matrix[i][j] > support_threshold) w[i] += 1.0;
  if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) {
    if (scores.size() == n) w = scores;
    else std::fill(w.begin(), w.end(), 1.0);
  }
  return w;
}

ConsensusResult in_clip_consensus(const std::vector<MaskProposal>& proposals,
                                  const ConsensusParams& params) {
  ConsensusResult result;
  const int n = static_cast<int>(proposals.size());
  if (n == 0) return result;
  for (const auto& p : proposals) require_same_shape(p.mask, proposals.front().mask, "in_clip_consensus");

  std::vector<std::vector<double>> overlaps(n, std::vector<double>(n, 1.0));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) overlaps[i][j] = overlaps[j][i] = iou(proposals[i].mask, proposals[j].mask);
  std::vector<double> scores;
  for (const auto& p : proposals) scores.push_back(p.score);
  const auto weights = support_weights(overlaps, params.support_threshold, scores);

  if (n <= params.exact_limit && n <= 30) {
    std::vector<std::uint32_t> conflicts(n, 0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && overlaps[i][j] > params.overlap_threshold) conflicts[i] |= 1u << j;

    double best = -std::numeric_limits<double>::infinity();
    std::uint32_t best_set = 0;
    const std::uint32_t end = n == 32 ? 0 : (1u << n);
    for (std::uint32_t set = 0; set < end; ++set) {
      double value = 0.0;
      int pairs = 0;
      for (std::uint32_t rest = set; rest; rest &= rest - 1) {
        const int i = std::countr_zero(rest);
        value += weights[i];
        pairs += std::popcount(conflicts[i] & set);
      }
      value -= params.overlap_penalty * (pairs / 2);
      if (value > best) {
        best = value;
        best_set = set;
      }
    }
    for (int i = 0; i < n; ++i)
      if (best_set & (1u << i)) result.selected.push_back(i);
    result.objective = best;
  } else {
    result.exact = false;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (weights[a] != weights[b]) return weights[a] > weights[b];
      return proposals[a].score > proposals[b].score;
    });
    double value = 0.0;
    for (int i : order) {
      int clashes = 0;
      for (int j : result.selected)
        if (overlaps[i][j] > params.overlap_threshold) ++clashes;
      const double gain = weights[i] - params.overlap_penalty * clashes;
      if (gain > 0.0) {
        result.selected.push_back(i);
        value += gain;
      }
    }
    std::sort(result.selected.begin(), result.selected.end());
    result.objective = value;
  }

  for (int i : result.selected) {
    std::vector<int> members{i};
    for (int j = 0; j < n; ++j)
      if (j != i && overlaps[i][j] > params.support_threshold) members.push_back(j);
    cv::Mat votes = cv::Mat::zeros(proposals[i].mask.size(), CV_32S);
    for (int j : members) cv::add(votes, proposals[j].mask, votes, cv::noArray(), CV_32S);
    cv::Mat fused = votes * 2 >= static_cast<int>(members.size());
    fused.convertTo(fused, CV_8U, 1.0 / 255.0);
    result.masks.push_back(fused);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Tracking

AgentMaskSet merge_propagation_consensus(const AgentMaskSet& previous,
                                         const std::vector<cv::Mat>& consensus,
                                         const TrackerParams& params, int& next_id, int frame_index) {
  for (const auto& s : previous.segments)
    for (const auto& c : consensus) require_same_shape(s.mask, c, "merge_propagation_consensus");

  std::vector<cv::Mat> propagated;
  propagated.reserve(previous.segments.size());
  for (const auto& s : previous.segments) {
    cv::Mat moved = translate_mask(s.mask, s.velocity);
    propagated.push_back(cv::countNonZero(moved) > 0 ? moved : s.mask);
  }

  AgentMaskSet out;
  out.frame_index = frame_index;
  std::vector<bool> consensus_used(consensus.size(), false);
  std::vector<bool> segment_matched(previous.segments.size(), false);
  for (const auto& m : greedy_match(propagated, consensus, params.assoc_threshold)) {
    const TrackedSegment& prev = previous.segments[m.prev];
    TrackedSegment seg;
    seg.id = prev.id;
    seg.mask = consensus[m.next];
    seg.misses = 0;
    const auto before = mask_centroid(prev.mask);
    const auto after = mask_centroid(seg.mask);
    seg.velocity = (before && after && similar_area(prev.mask, seg.mask)) ? *after - *before : prev.velocity;
    out.segments.push_back(std::move(seg));
    consensus_used[m.next] = true;
    segment_matched[m.prev] = true;
  }
  for (std::size_t i = 0; i < previous.segments.size(); ++i) {
    if (segment_matched[i]) continue;
    TrackedSegment seg = previous.segments[i];
    seg.mask = propagated[i];
    seg.misses += 1;
    if (seg.misses > params.max_misses) continue;
    out.segments.push_back(std::move(seg));
  }

  std::vector<int> spawn;
  for (std::size_t j = 0; j < consensus.size(); ++j)
    if (!consensus_used[j] && cv::countNonZero(consensus[j]) > 0) spawn.push_back(static_cast<int>(j));
  if (params.fixed_agents) {
    std::stable_sort(spawn.begin(), spawn.end(), [&](int a, int b) {
      return cv::countNonZero(consensus[a]) > cv::countNonZero(consensus[b]);
    });
  }
  for (int j : spawn) {
    if (params.fixed_agents && static_cast<int>(out.segments.size()) >= *params.fixed_agents) break;
    TrackedSegment seg;
    seg.id = next_id++;
    seg.mask = consensus[j];
    out.segments.push_back(std::move(seg));
  }

  if (params.fixed_agents && static_cast<int>(out.segments.size()) > *params.fixed_agents) {
    std::stable_sort(out.segments.begin(), out.segments.end(), [](const auto& a, const auto& b) {
      return cv::countNonZero(a.mask) > cv::countNonZero(b.mask);
    });
    out.segments.resize(*params.fixed_agents);
  }
  std::sort(out.segments.begin(), out.segments.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

std::vector<AgentMaskSet> segment_video(const std::vector<Frame>& frames, const Detector& detector,
                                        const SegmentationParams& params) {
  if (params.clip_size < 1) throw std::invalid_argument("clip_size must be >= 1");
  const int count = static_cast<int>(frames.size());
  std::vector<std::vector<MaskProposal>> detections(count);
  int full_rows = 0;
  int full_cols = 0;
  for (int t = 0; t < count; ++t) {
    detections[t] = detector.detect(frames[t]);
    for (auto& p : detections[t]) {
      full_rows = p.mask.rows;
      full_cols = p.mask.cols;
      const int longest = std::max(p.mask.rows, p.mask.cols);
      if (params.size > 0 && longest > params.size) {
        const double s = static_cast<double>(params.size) / longest;
        p.mask = resize_mask_nearest(p.mask, std::max(1, static_cast<int>(p.mask.rows * s)),
                                     std::max(1, static_cast<int>(p.mask.cols * s)));
      }
    }
  }

  std::vector<AgentMaskSet> out;
  out.reserve(count);
  AgentMaskSet state;
  int next_id = 1;
  for (int t = 0; t < count; ++t) {
    std::vector<ClipFrame> clip;
    for (int k = t; k < std::min(count, t + params.clip_size); ++k) clip.push_back({&frames[k], detections[k]});
    const auto aligned = align_proposals(clip, 0);
    const auto consensus = in_clip_consensus(aligned, params.consensus);
    state = merge_propagation_consensus(state, consensus.masks, params.tracker, next_id, frames[t].index);
    AgentMaskSet emitted = state;
    if (full_rows > 0)
      for (auto& s : emitted.segments) s.mask = resize_mask_nearest(s.mask, full_rows, full_cols);
    out.push_back(std::move(emitted));
  }
  return out;
}

cv::Mat downsample_mask(const cv::Mat& mask, int target_size) {
  cv::Mat as_float;
  mask.convertTo(as_float, CV_32F);
  cv::Mat coverage;
  cv::resize(as_float, coverage, cv::Size(target_size, target_size), 0, 0, cv::INTER_AREA);
  cv::Mat out = coverage >= 0.5f;
  out.convertTo(out, CV_8U, 1.0 / 255.0);
  if (cv::countNonZero(out) == 0 && cv::countNonZero(mask) > 0) {
    cv::Point best;
    cv::minMaxLoc(coverage, nullptr, nullptr, nullptr, &best);
    out.at<std::uint8_t>(best) = 1;
  }
  return out;
}

std::vector<cv::Mat> split_and_downsample(const AgentMaskSet& masks, int target_size) {
  if (target_size < 1) throw std::invalid_argument("target_size must be positive");
  std::vector<const TrackedSegment*> order;
  for (const auto& s : masks.segments) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
  std::vector<cv::Mat> out;
  out.reserve(order.size());
  for (const auto* s : order) out.push_back(downsample_mask(s->mask, target_size));
  return out;
}

cv::Mat to_label_map(const AgentMaskSet& masks, int rows, int cols) {
  cv::Mat labels = cv::Mat::zeros(rows, cols, CV_8U);
  for (const auto& s : masks.segments) {
    if (s.id < 1 || s.id > 255) throw std::out_of_range("agent id does not fit an 8-bit label map");
    labels.setTo(cv::Scalar(s.id), s.mask);
  }
  return labels;
}

AgentMaskSet from_label_map(const cv::Mat& labels, int frame_index) {
  AgentMaskSet set;
  set.frame_index = frame_index;
  double max_label = 0.0;
  cv::minMaxLoc(labels, nullptr, &max_label);
  for (int id = 1; id <= static_cast<int>(max_label); ++id) {
    cv::Mat m = agent_mask(labels, id);
    if (cv::countNonZero(m) == 0) continue;
    set.segments.push_back({id, m, 0, {0.0, 0.0}});
  }
  return set;
}

}  // namespace bkind
