#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bkind/formats.hpp"
#include "bkind/training.hpp"
#include "commands.hpp"

namespace bkind::cli {

namespace fs = std::filesystem;

namespace {

const cv::Scalar kAgentColors[] = {{40, 40, 230}, {230, 120, 30}, {40, 180, 40}, {200, 40, 200},
                                   {30, 200, 220}, {120, 120, 120}};

cv::Mat loss_plot(const std::vector<StepLog>& history) {
  const int width = 900, height = 520, left = 80, right = 20, top = 40, bottom = 60;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar::all(255));
  struct Series {
    const char* name;
    double StepLog::*field;
    cv::Scalar color;
  };
  const Series series[] = {{"total", &StepLog::total, {0, 0, 0}},
                           {"recon", &StepLog::recon, {200, 80, 0}},
                           {"rot", &StepLog::rotation, {0, 140, 0}},
                           {"sep", &StepLog::separation, {0, 0, 200}}};

  // Log scale: the separation term sits orders of magnitude above recon.
  double lo = 1e300, hi = -1e300;
  for (const auto& s : history)
    for (const auto& ser : series) {
      const double v = s.*ser.field;
      if (v > 0 && std::isfinite(v)) lo = std::min(lo, std::log10(v)), hi = std::max(hi, std::log10(v));
    }
  if (lo > hi) lo = -1, hi = 1;
  lo = std::floor(lo), hi = std::ceil(hi);
  if (hi == lo) hi = lo + 1;

  const int n = static_cast<int>(history.size());
  auto px = [&](int i) { return left + (n <= 1 ? 0.0 : (width - left - right) * double(i) / (n - 1)); };
  auto py = [&](double v) { return top + (height - top - bottom) * (hi - std::log10(v)) / (hi - lo); };

  cv::rectangle(img, {left, top}, {width - right, height - bottom}, cv::Scalar::all(0));
  for (double e = lo; e <= hi; e += 1) {
    const int y = static_cast<int>(py(std::pow(10.0, e)));
    cv::line(img, {left, y}, {width - right, y}, cv::Scalar::all(220));
    cv::putText(img, "1e" + std::to_string(static_cast<int>(e)), {8, y + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar::all(0));
  }
  for (int i = 1; i < n; ++i)
    if (history[i].curriculum_active && !history[i - 1].curriculum_active) {
      const int x = static_cast<int>(px(i));
      cv::line(img, {x, top}, {x, height - bottom}, cv::Scalar(160, 160, 255), 1, cv::LINE_AA);
    }
  for (const auto& ser : series) {
    std::vector<cv::Point> pts;
    for (int i = 0; i < n; ++i) {
      const double v = history[i].*ser.field;
      if (v > 0 && std::isfinite(v)) pts.emplace_back(static_cast<int>(px(i)), static_cast<int>(py(v)));
    }
    // Total is drawn wider so it stays visible where it equals recon.
    const int thickness = ser.field == &StepLog::total ? 3 : 1;
    if (pts.size() > 1) cv::polylines(img, pts, false, ser.color, thickness, cv::LINE_AA);
  }
  int lx = left + 10;
  for (const auto& ser : series) {
    cv::line(img, {lx, 22}, {lx + 20, 22}, ser.color, 2);
    cv::putText(img, ser.name, {lx + 25, 27}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar::all(0));
    lx += 95;
  }
  cv::putText(img, "step (" + std::to_string(n) + ")", {width / 2 - 40, height - 20}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
              cv::Scalar::all(0));
  return img;
}

cv::Mat to_bgr8(const Frame& f) {
  cv::Mat bgr, out;
  cv::cvtColor(f.pixels, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(out, CV_8UC3, 255.0);
  return out;
}

}  // namespace

std::vector<fs::path> run_plot(const PlotOptions& o) {
  if (!fs::is_directory(o.run_dir)) throw IoError("run directory does not exist: " + o.run_dir.string());
  const fs::path losses = o.run_dir / "losses.csv";
  if (!fs::exists(losses)) throw IoError("no losses.csv in " + o.run_dir.string());
  const auto history = parse_loss_csv(read_text(losses));
  if (history.empty()) throw IoError("losses.csv in " + o.run_dir.string() + " has no steps");

  const fs::path out = o.out.empty() ? o.run_dir / "plots" : o.out;
  fs::create_directories(out);
  std::vector<fs::path> written{out / "losses.png"};
  atomic_write_png(written.back(), loss_plot(history));
  if (o.frames.empty()) return written;

  const auto frames = load_sequence(o.frames, cv::imread(list_frame_files(o.frames).at(0).string()).cols);
  std::vector<InferenceRow> rows;
  if (!o.predictions.empty()) {
    rows = read_inference_csv(o.predictions);
  } else {
    fs::path ckpt = o.checkpoint;
    if (ckpt.empty()) {
      for (const auto& e : fs::directory_iterator(o.run_dir))
        if (e.path().extension() == ".ckpt" && (ckpt.empty() || e.path() > ckpt)) ckpt = e.path();
      if (ckpt.empty()) throw IoError("no checkpoint in " + o.run_dir.string());
    }
    auto state = load_checkpoint(ckpt);
    std::vector<AgentMaskSet> masks;
    if (state.config.mask_heatmaps) {
      if (o.masks.empty()) throw std::invalid_argument("overlays need --masks or --pred");
      masks = read_mask_directory(o.masks);
    }
    const int count = std::min<int>(o.overlays, static_cast<int>(frames.size()));
    std::vector<Frame> chosen(frames.begin(), frames.begin() + count);
    if (masks.size() > chosen.size()) masks.resize(chosen.size());
    const fs::path csv = out / "keypoints.csv";
    write_inference_csv(csv, infer(state.model, chosen, masks), frames.front().cols());
    rows = read_inference_csv(csv);
  }

  std::map<int, std::vector<const InferenceRow*>> by_frame;
  for (const auto& r : rows) by_frame[r.frame].push_back(&r);
  int drawn = 0;
  for (const auto& f : frames) {
    if (drawn >= o.overlays) break;
    const auto it = by_frame.find(f.index);
    if (it == by_frame.end()) continue;
    cv::Mat img = to_bgr8(f);
    // Small frames are enlarged so the dots stay legible.
    const double scale = img.cols < 256 ? std::ceil(256.0 / img.cols) : 1.0;
    if (scale > 1.0) cv::resize(img, img, {}, scale, scale, cv::INTER_NEAREST);
    std::map<int, int> agent_slot;
    for (const auto* r : it->second) agent_slot.emplace(r->agent, static_cast<int>(agent_slot.size()));
    const int radius = std::max(3, img.cols / 80);
    for (const auto* r : it->second) {
      const auto& color = kAgentColors[agent_slot[r->agent] % std::size(kAgentColors)];
      const cv::Point p(static_cast<int>(std::lround(r->x * scale)), static_cast<int>(std::lround(r->y * scale)));
      cv::circle(img, p, radius, color, cv::FILLED, cv::LINE_AA);
      cv::circle(img, p, radius, cv::Scalar::all(255), 1, cv::LINE_AA);
    }
    char name[40];
    std::snprintf(name, sizeof name, "overlay_%06d.png", f.index);
    written.push_back(out / name);
    atomic_write_png(written.back(), img);
    ++drawn;
  }
  return written;
}

}  // namespace bkind::cli
