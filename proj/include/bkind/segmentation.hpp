#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "bkind/video_io.hpp"

namespace bkind {

// All masks in this module are CV_8U with values 0/1.

struct MaskProposal {
  cv::Mat mask;
  double score = 1.0;
  int source_frame = 0;
};

struct TrackedSegment {
  int id = 0;
  cv::Mat mask;
  int misses = 0;
  /// Centroid displacement per frame, used to propagate the mask forward.
  cv::Point2d velocity{0.0, 0.0};
};

struct AgentMaskSet {
  int frame_index = 0;
  std::vector<TrackedSegment> segments;  ///< sorted by id
};

// ---------------------------------------------------------------------------
// Detectors

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<MaskProposal> detect(const Frame& frame) const = 0;
};

/// Returns the ground-truth agent masks of the frame (looked up by
/// Frame::index in a list of label maps).
class OracleDetector : public Detector {
 public:
  explicit OracleDetector(std::vector<cv::Mat> label_maps);
  std::vector<MaskProposal> detect(const Frame& frame) const override;

 protected:
  std::vector<MaskProposal> exact(int frame_index) const;
  std::vector<cv::Mat> label_maps_;
};

/// Oracle detector that, on a seeded random subset of frames, splits every
/// agent into two halves across its long axis and adds a spurious blob.
class NoisyOracleDetector final : public OracleDetector {
 public:
  NoisyOracleDetector(std::vector<cv::Mat> label_maps, double noisy_fraction, std::uint64_t seed);
  std::vector<MaskProposal> detect(const Frame& frame) const override;
  bool is_noisy(int frame_index) const;

 private:
  std::vector<bool> noisy_;
  std::uint64_t seed_;
};

struct ThresholdDetectorConfig {
  /// Minimum proposal score; same role as a text-grounded detector's box
  /// threshold.
  double dino_threshold = 0.45;
  /// Text prompt, kept for detectors that accept one. Unused here.
  std::string prompt;
  /// Pixels whose grey level differs from the background estimate by more
  /// than this are foreground.
  double min_contrast = 0.2;
  int min_area = 12;
};

/// Foreground by contrast against the median grey level, split into
/// connected components. A component's score is its mean contrast,
/// normalized by the largest possible contrast.
class ThresholdDetector final : public Detector {
 public:
  explicit ThresholdDetector(ThresholdDetectorConfig config = {});
  std::vector<MaskProposal> detect(const Frame& frame) const override;

 private:
  ThresholdDetectorConfig config_;
};

// ---------------------------------------------------------------------------
// Mask geometry

/// |a & b| / |a | b|; 0 when both are empty. Throws on shape mismatch.
double iou(const cv::Mat& a, const cv::Mat& b);
std::optional<cv::Point2d> mask_centroid(const cv::Mat& mask);
/// Integer translation (rounded); pixels shifted out of frame are lost.
cv::Mat translate_mask(const cv::Mat& mask, cv::Point2d shift);

// ---------------------------------------------------------------------------
// In-clip consensus

struct ClipFrame {
  const Frame* frame = nullptr;
  std::vector<MaskProposal> proposals;
};

/// Warps every proposal of the clip onto frame `target_index`. Motion is
/// estimated by greedy IoU matching between adjacent frames and chaining the
/// centroid displacements of matched proposals toward the target; this
/// stands in for a learned propagation model. Proposals that leave the frame
/// are dropped.
std::vector<MaskProposal> align_proposals(const std::vector<ClipFrame>& clip, int target_index);

struct ConsensusParams {
  double support_threshold = 0.5;
  double overlap_threshold = 0.5;
  double overlap_penalty = 10.0;
  int exact_limit = 20;
};

struct ConsensusResult {
  std::vector<int> selected;  ///< indices into the proposal list, ascending
  double objective = 0.0;
  std::vector<cv::Mat> masks;  ///< one fused mask per selected proposal
  bool exact = true;
};

/// Per-proposal weight in the selection objective: the number of other
/// proposals with IoU above the support threshold. When no proposal has any
/// support, every proposal falls back to its detector score (or 1 when
/// `scores` is empty).
std::vector<double> support_weights(const std::vector<std::vector<double>>& iou_matrix,
                                    double support_threshold, const std::vector<double>& scores = {});

/// Chooses the subset maximizing
///   sum_{i in S} w_i - penalty * #{i<j in S : iou(i,j) > overlap_threshold}.
/// Exact enumeration up to `exact_limit` proposals (ties resolve to the
/// first optimum in ascending bitmask order), greedy above. Each selected
/// proposal is fused with its supporters by pixelwise majority.
ConsensusResult in_clip_consensus(const std::vector<MaskProposal>& proposals,
                                  const ConsensusParams& params = {});

// ---------------------------------------------------------------------------
// Tracking

struct TrackerParams {
  double assoc_threshold = 0.3;
  int max_misses = 5;
  /// When set, never more than this many live identities.
  std::optional<int> fixed_agents;
};

/// Greedy highest-IoU-first association of the propagated previous segments
/// with the consensus masks. `next_id` is advanced for every spawned segment.
AgentMaskSet merge_propagation_consensus(const AgentMaskSet& previous,
                                         const std::vector<cv::Mat>& consensus,
                                         const TrackerParams& params, int& next_id,
                                         int frame_index);

struct SegmentationParams {
  int clip_size = 3;
  ConsensusParams consensus;
  TrackerParams tracker;
  /// Internal processing resolution; frames larger than this are segmented
  /// at this size and masks are scaled back.
  int size = 480;
};

std::vector<AgentMaskSet> segment_video(const std::vector<Frame>& frames, const Detector& detector,
                                        const SegmentationParams& params = {});

/// One target_size x target_size mask per segment (ordered by id):
/// area-average downsample, threshold at 0.5, and if that leaves a nonempty
/// mask with no cells the best-covered cell is kept.
std::vector<cv::Mat> split_and_downsample(const AgentMaskSet& masks, int target_size);
cv::Mat downsample_mask(const cv::Mat& mask, int target_size);

/// Label map (0 background, segment id elsewhere). Later ids win on overlap.
cv::Mat to_label_map(const AgentMaskSet& masks, int rows, int cols);
/// Inverse of to_label_map.
AgentMaskSet from_label_map(const cv::Mat& labels, int frame_index);

}  // namespace bkind
