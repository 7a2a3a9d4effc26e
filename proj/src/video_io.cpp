#include "bkind/video_io.hpp"

#include <algorithm>
#include <cctype>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

namespace bkind {

namespace fs = std::filesystem;

namespace {

bool is_image_extension(std::string ext) {
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" ||
         ext == ".tiff" || ext == ".ppm" || ext == ".pgm";
}

// Last run of digits in the stem, or -1 if there is none.
long long stem_number(const fs::path& p) {
  const std::string stem = p.stem().string();
  long long value = -1;
  std::size_t i = stem.size();
  while (i > 0 && !std::isdigit(static_cast<unsigned char>(stem[i - 1]))) --i;
  std::size_t end = i;
  while (i > 0 && std::isdigit(static_cast<unsigned char>(stem[i - 1]))) --i;
  if (i < end) value = std::stoll(stem.substr(i, std::min<std::size_t>(end - i, 18)));
  return value;
}

}  // namespace

std::vector<cv::Mat> OpenCvVideoDecoder::decode(const fs::path& file) const {
  cv::VideoCapture cap(file.string());
  if (!cap.isOpened()) throw IoError("cannot open video: " + file.string());
  std::vector<cv::Mat> out;
  cv::Mat frame;
  while (cap.read(frame)) out.push_back(frame.clone());
  return out;
}

std::vector<fs::path> list_frame_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_extension(entry.path().extension().string()))
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const auto na = stem_number(a);
    const auto nb = stem_number(b);
    if (na != nb) return na < nb;
    return a.filename() < b.filename();
  });
  return files;
}

cv::Mat resize_square(const cv::Mat& image, int resolution) {
  if (resolution <= 0) throw std::invalid_argument("resolution must be positive");
  if (image.rows == resolution && image.cols == resolution) return image.clone();
  const bool shrinking = image.rows >= resolution && image.cols >= resolution;
  cv::Mat out;
  cv::resize(image, out, cv::Size(resolution, resolution), 0, 0,
             shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  return out;
}

Frame make_frame(const cv::Mat& bgr8, int index, std::string sequence_id, int resolution) {
  cv::Mat bgr;
  if (bgr8.channels() == 1) {
    cv::cvtColor(bgr8, bgr, cv::COLOR_GRAY2BGR);
  } else if (bgr8.channels() == 4) {
    cv::cvtColor(bgr8, bgr, cv::COLOR_BGRA2BGR);
  } else {
    bgr = bgr8;
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  const double scale = bgr8.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  cv::Mat as_float;
  rgb.convertTo(as_float, CV_32FC3, scale);
  Frame frame;
  frame.pixels = resize_square(as_float, resolution);
  cv::min(cv::max(frame.pixels, 0.0), 1.0, frame.pixels);
  frame.index = index;
  frame.sequence_id = std::move(sequence_id);
  return frame;
}

std::vector<Frame> load_sequence(const fs::path& path, int resolution, const VideoDecoder* decoder) {
  if (!fs::exists(path)) throw IoError("path does not exist: " + path.string());
  std::vector<Frame> frames;
  if (fs::is_directory(path)) {
    const auto files = list_frame_files(path);
    const std::string seq = path.filename().empty() ? path.parent_path().filename().string()
                                                    : path.filename().string();
    frames.reserve(files.size());
    for (const auto& file : files) {
      cv::Mat image = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
      if (image.empty()) throw IoError("cannot decode frame: " + file.string());
      frames.push_back(make_frame(image, static_cast<int>(frames.size()), seq, resolution));
    }
  } else {
    OpenCvVideoDecoder fallback;
    const VideoDecoder& dec = decoder ? *decoder : fallback;
    const auto images = dec.decode(path);
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i].empty())
        throw IoError("cannot decode frame " + std::to_string(i) + " of " + path.string());
      frames.push_back(make_frame(images[i], static_cast<int>(i), path.stem().string(), resolution));
    }
  }
  if (frames.size() < 2)
    throw IoError("need at least 2 frames, found " + std::to_string(frames.size()) + " in " +
                  path.string());
  return frames;
}

std::vector<FramePair> sample_pairs(const std::vector<Frame>& sequence, int gap, int stride) {
  if (gap < 1) throw std::invalid_argument("gap must be >= 1");
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  std::vector<FramePair> pairs;
  const auto n = static_cast<int>(sequence.size());
  for (int i = 0; i + gap < n; i += stride) {
    const Frame& ref = sequence[i];
    const Frame& fut = sequence[i + gap];
    if (ref.sequence_id != fut.sequence_id) continue;
    if (fut.index - ref.index != gap) continue;
    pairs.push_back(FramePair{&ref, &fut, gap});
  }
  return pairs;
}

void write_frame_png(const Frame& frame, const fs::path& file) {
  cv::Mat rgb8;
  frame.pixels.convertTo(rgb8, CV_8UC3, 255.0);
  cv::Mat bgr8;
  cv::cvtColor(rgb8, bgr8, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(file.string(), bgr8)) throw IoError("cannot write " + file.string());
}

cv::Mat to_grayscale(const cv::Mat& rgb) {
  if (rgb.channels() == 1) {
    cv::Mat out;
    rgb.convertTo(out, CV_64F);
    return out;
  }
  cv::Mat rgb64;
  rgb.convertTo(rgb64, CV_64FC3);
  cv::Mat gray(rgb.rows, rgb.cols, CV_64F);
  for (int r = 0; r < rgb.rows; ++r) {
    const auto* src = rgb64.ptr<cv::Vec3d>(r);
    auto* dst = gray.ptr<double>(r);
    for (int c = 0; c < rgb.cols; ++c)
      dst[c] = 0.299 * src[c][0] + 0.587 * src[c][1] + 0.114 * src[c][2];
  }
  return gray;
}

cv::Mat agent_mask(const cv::Mat& label_map, int agent_id) {
  cv::Mat mask = (label_map == agent_id);
  mask.convertTo(mask, CV_8U, 1.0 / 255.0);
  return mask;
}

}  // namespace bkind
