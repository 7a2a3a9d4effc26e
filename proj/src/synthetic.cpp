#include <cmath>
#include <numbers>
#include <random>

#include <opencv2/imgproc.hpp>

#include "bkind/video_io.hpp"

namespace bkind {

namespace {

constexpr double kPi = std::numbers::pi;

// Offsets of the ground-truth parts along the body axis, in half-lengths.
constexpr double kPartOffsets[SyntheticScene::kPartsPerAgent] = {0.9, 0.55, 0.0, -0.8};

struct BodyCoords {
  double along;   // along heading, in half-lengths
  double across;  // perpendicular, in half-widths
};

BodyCoords body_coords(const AgentPose& p, double x, double y) {
  const double dx = x - p.cx;
  const double dy = y - p.cy;
  const double c = std::cos(p.heading);
  const double s = std::sin(p.heading);
  return {(dx * c + dy * s) / p.half_length, (-dx * s + dy * c) / p.half_width};
}

bool clear_of_others(const std::vector<AgentPose>& poses, std::size_t self, double x, double y,
                     double min_dist) {
  for (std::size_t j = 0; j < poses.size(); ++j) {
    if (j == self) continue;
    if (std::hypot(poses[j].cx - x, poses[j].cy - y) < min_dist) return false;
  }
  return true;
}

}  // namespace

SyntheticVideo::SyntheticVideo(const SyntheticConfig& config) : config_(config) {
  if (config.agents < 1) throw std::invalid_argument("synthetic scene needs at least one agent");
  if (config.frames < 2) throw std::invalid_argument("synthetic scene needs at least two frames");
  if (config.resolution < 32) throw std::invalid_argument("synthetic resolution must be >= 32");

  const double res = config.resolution;
  const double scale = res / 256.0;
  const double half_length = 22.0 * scale;
  const double half_width = 10.0 * scale;
  const double margin = half_length + 4.0 * scale;
  // Bounding circles of two agents never touch beyond this distance.
  const double min_dist = 2.0 * half_length + 2.0 * scale;

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> turn(0.0, 0.08);

  scene_.agent_count = config.agents;
  scene_.resolution = config.resolution;
  scene_.poses.resize(config.frames);
  scene_.keypoints.resize(config.frames);

  auto& first = scene_.poses[0];
  for (int n = 0; n < config.agents; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      const double x = margin + unit(rng) * (res - 2 * margin);
      const double y = margin + unit(rng) * (res - 2 * margin);
      if (!clear_of_others(first, first.size(), x, y, min_dist)) continue;
      first.push_back({x, y, unit(rng) * 2 * kPi - kPi, half_length, half_width});
      placed = true;
    }
    if (!placed)
      throw std::runtime_error("cannot place " + std::to_string(config.agents) +
                               " agents without overlap at resolution " +
                               std::to_string(config.resolution));
  }

  std::vector<double> speed(config.agents, config.speed * scale);
  for (int t = 1; t < config.frames; ++t) {
    auto poses = scene_.poses[t - 1];
    for (std::size_t n = 0; n < poses.size(); ++n) {
      auto& p = poses[n];
      const double target = config.speed * scale * (0.2 + 1.6 * unit(rng));
      speed[n] = 0.85 * speed[n] + 0.15 * target;
      double heading = p.heading + turn(rng);
      double nx = p.cx + speed[n] * std::cos(heading);
      double ny = p.cy + speed[n] * std::sin(heading);
      if (nx < margin || nx > res - margin || ny < margin || ny > res - margin) {
        heading = std::atan2(res / 2 - p.cy, res / 2 - p.cx) + turn(rng);
        nx = p.cx + speed[n] * std::cos(heading);
        ny = p.cy + speed[n] * std::sin(heading);
      }
      bool moved = false;
      for (int attempt = 0; attempt < 8 && !moved; ++attempt) {
        if (nx >= margin && nx <= res - margin && ny >= margin && ny <= res - margin &&
            clear_of_others(poses, n, nx, ny, min_dist)) {
          moved = true;
          break;
        }
        heading += (unit(rng) < 0.5 ? -1.0 : 1.0) * kPi / 3;
        nx = p.cx + speed[n] * std::cos(heading);
        ny = p.cy + speed[n] * std::sin(heading);
      }
      if (moved) {
        p.cx = nx;
        p.cy = ny;
      }
      p.heading = std::remainder(heading, 2 * kPi);
    }
    scene_.poses[t] = std::move(poses);
  }

  for (int t = 0; t < config.frames; ++t) {
    auto& kps = scene_.keypoints[t];
    for (const auto& p : scene_.poses[t]) {
      std::vector<cv::Point2d> parts;
      for (double f : kPartOffsets)
        parts.emplace_back(p.cx + f * p.half_length * std::cos(p.heading),
                           p.cy + f * p.half_length * std::sin(p.heading));
      kps.push_back(std::move(parts));
    }
  }

  // Static floor texture: smooth low-frequency noise.
  cv::Mat coarse(6, 6, CV_32FC3);
  for (int r = 0; r < coarse.rows; ++r)
    for (int c = 0; c < coarse.cols; ++c) {
      const float base = static_cast<float>(0.66 + 0.12 * unit(rng));
      coarse.at<cv::Vec3f>(r, c) = {base, base * 0.97f, base * 0.92f};
    }
  cv::resize(coarse, background_, cv::Size(config.resolution, config.resolution), 0, 0,
             cv::INTER_CUBIC);
}

int SyntheticVideo::owner(int t, double x, double y) const {
  const auto& poses = scene_.poses.at(t);
  for (std::size_t n = 0; n < poses.size(); ++n) {
    const auto b = body_coords(poses[n], x, y);
    if (b.along * b.along + b.across * b.across <= 1.0) return static_cast<int>(n) + 1;
  }
  return 0;
}

Frame SyntheticVideo::render(int t) const {
  const auto& poses = scene_.poses.at(t);
  Frame frame;
  frame.pixels = background_.clone();
  frame.index = t;
  frame.sequence_id = "synthetic_" + std::to_string(config_.seed);
  const int res = config_.resolution;
  for (int r = 0; r < res; ++r) {
    auto* row = frame.pixels.ptr<cv::Vec3f>(r);
    for (int c = 0; c < res; ++c) {
      const int id = owner(t, c + 0.5, r + 0.5);
      if (id == 0) continue;
      const auto& p = poses[id - 1];
      const auto b = body_coords(p, c + 0.5, r + 0.5);
      const double rr = b.along * b.along + b.across * b.across;
      const double head_dx = (b.along - 0.55) * p.half_length;
      const double head_dy = b.across * p.half_width;
      cv::Vec3f color;
      if (head_dx * head_dx + head_dy * head_dy <= 0.25 * p.half_width * p.half_width) {
        color = {0.95f, 0.90f, 0.72f};
      } else if (b.along < -0.45) {
        color = {0.52f, 0.47f, 0.44f};
      } else {
        const float shade = static_cast<float>(1.0 - 0.35 * rr);
        color = {0.20f * shade, 0.17f * shade, 0.16f * shade};
      }
      row[c] = color;
    }
  }
  return frame;
}

cv::Mat SyntheticVideo::label_map(int t) const {
  const int res = config_.resolution;
  cv::Mat labels(res, res, CV_8U, cv::Scalar(0));
  for (int r = 0; r < res; ++r) {
    auto* row = labels.ptr<std::uint8_t>(r);
    for (int c = 0; c < res; ++c) row[c] = static_cast<std::uint8_t>(owner(t, c + 0.5, r + 0.5));
  }
  return labels;
}

std::pair<std::vector<Frame>, SyntheticScene> generate_synthetic(const SyntheticConfig& config) {
  SyntheticVideo video(config);
  SyntheticScene scene = video.scene();
  std::vector<Frame> frames;
  frames.reserve(config.frames);
  scene.label_maps.reserve(config.frames);
  for (int t = 0; t < config.frames; ++t) {
    frames.push_back(video.render(t));
    scene.label_maps.push_back(video.label_map(t));
  }
  return {std::move(frames), std::move(scene)};
}

}  // namespace bkind
