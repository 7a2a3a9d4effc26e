#include "bkind/formats.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"

namespace bkind {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(field);
  }
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

int column_of(const std::vector<std::string>& header, const std::string& name, const fs::path& file) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw IoError(file.string() + ": missing column '" + name + "'");
  return static_cast<int>(it - header.begin());
}

double to_double(const std::string& s, const fs::path& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(file.string() + ": not a number: '" + s + "'");
  }
}

int to_int(const std::string& s, const fs::path& file) {
  const double v = to_double(s, file);
  return static_cast<int>(v);
}

std::string frame_png_name(int frame) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.png", frame);
  return buf;
}

}  // namespace

void atomic_write(const fs::path& path, const std::function<void(std::ostream&)>& writer) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    writer(out);
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void atomic_write_text(const fs::path& path, const std::string& content) {
  atomic_write(path, [&](std::ostream& out) { out << content; });
}

void atomic_write_png(const fs::path& path, const cv::Mat& image) {
  std::vector<uchar> buffer;
  if (!cv::imencode(".png", image, buffer)) throw IoError("cannot encode PNG for " + path.string());
  atomic_write(path, [&](std::ostream& out) {
    out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
  });
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::vector<std::string>* header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line);
    if (first) {
      first = false;
      if (header) *header = std::move(fields);
      continue;
    }
    rows.push_back(std::move(fields));
  }
  if (first) throw IoError(path.string() + ": empty CSV");
  return rows;
}

void write_keypoint_csv(const fs::path& path, const std::vector<KeypointRow>& rows) {
  std::string out = "frame,agent,kp,x,y\n";
  for (const auto& r : rows)
    out += std::to_string(r.frame) + "," + std::to_string(r.agent) + "," + std::to_string(r.kp) + "," +
           fmt_double(r.x) + "," + fmt_double(r.y) + "\n";
  atomic_write_text(path, out);
}

std::vector<KeypointRow> read_keypoint_csv(const fs::path& path) {
  std::vector<std::string> header;
  const auto rows = read_csv(path, &header);
  const int cf = column_of(header, "frame", path);
  const int ca = column_of(header, "agent", path);
  const int ck = column_of(header, "kp", path);
  const int cx = column_of(header, "x", path);
  const int cy = column_of(header, "y", path);
  std::vector<KeypointRow> out;
  for (const auto& r : rows) {
    if (r.size() < header.size()) throw IoError(path.string() + ": short row");
    out.push_back({to_int(r[cf], path), to_int(r[ca], path), to_int(r[ck], path), to_double(r[cx], path),
                   to_double(r[cy], path)});
  }
  return out;
}

std::vector<KeypointRow> scene_keypoint_rows(const SyntheticScene& scene) {
  std::vector<KeypointRow> rows;
  for (std::size_t t = 0; t < scene.keypoints.size(); ++t)
    for (std::size_t n = 0; n < scene.keypoints[t].size(); ++n)
      for (std::size_t k = 0; k < scene.keypoints[t][n].size(); ++k)
        rows.push_back({static_cast<int>(t), static_cast<int>(n) + 1, static_cast<int>(k),
                        scene.keypoints[t][n][k].x, scene.keypoints[t][n][k].y});
  return rows;
}

std::string inference_csv(const std::vector<KeypointSet>& sets, double pixel_size) {
  std::string out = "frame,agent,kp,x_px,y_px,confidence,cov_xx,cov_xy,cov_yy\n";
  const double cov_scale = (pixel_size / 2.0) * (pixel_size / 2.0);
  for (const auto& set : sets)
    for (int n = 0; n < set.num_agents; ++n)
      for (int k = 0; k < set.num_keypoints; ++k) {
        const auto& p = set.at(n, k);
        const int id = n < static_cast<int>(set.agent_ids.size()) ? set.agent_ids[n] : n + 1;
        out += std::to_string(set.frame_index) + "," + std::to_string(id) + "," + std::to_string(k) + "," +
               fmt_double(normalized_to_pixels(p.u, pixel_size)) + "," +
               fmt_double(normalized_to_pixels(p.v, pixel_size)) + "," + fmt_double(p.confidence, 8) + "," +
               fmt_double(p.cov_xx * cov_scale) + "," + fmt_double(p.cov_xy * cov_scale) + "," +
               fmt_double(p.cov_yy * cov_scale) + "\n";
      }
  return out;
}

void write_inference_csv(const fs::path& path, const std::vector<KeypointSet>& sets, double pixel_size) {
  atomic_write_text(path, inference_csv(sets, pixel_size));
}

std::vector<InferenceRow> read_inference_csv(const fs::path& path) {
  std::vector<std::string> header;
  const auto rows = read_csv(path, &header);
  const std::vector<std::string> names{"frame", "agent", "kp", "x_px", "y_px", "confidence", "cov_xx", "cov_xy", "cov_yy"};
  std::vector<int> cols;
  for (const auto& n : names) cols.push_back(column_of(header, n, path));
  std::vector<InferenceRow> out;
  for (const auto& r : rows) {
    if (r.size() < header.size()) throw IoError(path.string() + ": short row");
    InferenceRow row;
    row.frame = to_int(r[cols[0]], path);
    row.agent = to_int(r[cols[1]], path);
    row.kp = to_int(r[cols[2]], path);
    row.x = to_double(r[cols[3]], path);
    row.y = to_double(r[cols[4]], path);
    row.confidence = to_double(r[cols[5]], path);
    row.cov_xx = to_double(r[cols[6]], path);
    row.cov_xy = to_double(r[cols[7]], path);
    row.cov_yy = to_double(r[cols[8]], path);
    out.push_back(row);
  }
  return out;
}

namespace {

// Groups rows by frame, then by (agent rank, kp); every frame must have the
// same number of agents and keypoints.
template <typename Row, typename Emit>
FrameMatrix frame_matrix(const std::vector<Row>& rows, int values_per_point, Emit emit,
                         const std::vector<std::string>& value_names, const char* what) {
  std::map<int, std::map<std::pair<int, int>, const Row*>> by_frame;
  for (const auto& r : rows) by_frame[r.frame][{r.agent, r.kp}] = &r;
  FrameMatrix m;
  if (by_frame.empty()) return m;
  const auto layout_size = by_frame.begin()->second.size();
  m.values.resize(static_cast<Eigen::Index>(by_frame.size()),
                  static_cast<Eigen::Index>(layout_size * values_per_point));
  Eigen::Index row = 0;
  for (const auto& [frame, points] : by_frame) {
    if (points.size() != layout_size)
      throw IoError(std::string(what) + ": frame " + std::to_string(frame) + " has " +
                    std::to_string(points.size()) + " keypoints, expected " + std::to_string(layout_size));
    m.frames.push_back(frame);
    Eigen::Index col = 0;
    std::vector<double> buffer(values_per_point);
    // First pass: coordinates; second: extra values (if any).
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& [key, r] : points) {
        emit(*r, buffer.data());
        if (pass == 0) {
          m.values(row, col++) = buffer[0];
          m.values(row, col++) = buffer[1];
        } else {
          for (int v = 2; v < values_per_point; ++v) m.values(row, col++) = buffer[v];
        }
      }
    ++row;
  }
  int rank = 0;
  int last_agent = -1;
  std::vector<std::string> extra;
  for (const auto& [key, r] : by_frame.begin()->second) {
    if (key.first != last_agent) {
      if (last_agent != -1) ++rank;
      last_agent = key.first;
    }
    const std::string stem = "a" + std::to_string(rank) + "_k" + std::to_string(key.second) + "_";
    m.columns.push_back(stem + value_names[0]);
    m.columns.push_back(stem + value_names[1]);
    for (int v = 2; v < values_per_point; ++v) extra.push_back(stem + value_names[v]);
  }
  m.columns.insert(m.columns.end(), extra.begin(), extra.end());
  return m;
}

}  // namespace

FrameMatrix inference_matrix(const std::vector<InferenceRow>& rows, bool keypoints_only) {
  // Agent ids may differ between frames; order within a frame is by id.
  std::vector<InferenceRow> ranked = rows;
  std::map<int, std::set<int>> agents;
  for (const auto& r : rows) agents[r.frame].insert(r.agent);
  for (auto& r : ranked) {
    const auto& ids = agents[r.frame];
    r.agent = static_cast<int>(std::distance(ids.begin(), ids.find(r.agent)));
  }
  if (keypoints_only)
    return frame_matrix(
        ranked, 2, [](const InferenceRow& r, double* v) { v[0] = r.x; v[1] = r.y; }, {"x", "y"}, "inference");
  return frame_matrix(
      ranked, 6,
      [](const InferenceRow& r, double* v) {
        v[0] = r.x;
        v[1] = r.y;
        v[2] = r.confidence;
        v[3] = r.cov_xx;
        v[4] = r.cov_xy;
        v[5] = r.cov_yy;
      },
      {"x", "y", "conf", "cov_xx", "cov_xy", "cov_yy"}, "inference");
}

FrameMatrix keypoint_matrix(const std::vector<KeypointRow>& rows) {
  return frame_matrix(
      rows, 2, [](const KeypointRow& r, double* v) { v[0] = r.x; v[1] = r.y; }, {"x", "y"}, "ground truth");
}

std::pair<FrameMatrix, FrameMatrix> align_frames(const FrameMatrix& a, const FrameMatrix& b) {
  std::map<int, Eigen::Index> in_b;
  for (std::size_t i = 0; i < b.frames.size(); ++i) in_b[b.frames[i]] = static_cast<Eigen::Index>(i);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> common;
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    const auto it = in_b.find(a.frames[i]);
    if (it != in_b.end()) common.emplace_back(static_cast<Eigen::Index>(i), it->second);
  }
  FrameMatrix ra{{}, Eigen::MatrixXd(common.size(), a.values.cols()), a.columns};
  FrameMatrix rb{{}, Eigen::MatrixXd(common.size(), b.values.cols()), b.columns};
  for (std::size_t i = 0; i < common.size(); ++i) {
    ra.frames.push_back(a.frames[common[i].first]);
    rb.frames.push_back(b.frames[common[i].second]);
    ra.values.row(static_cast<Eigen::Index>(i)) = a.values.row(common[i].first);
    rb.values.row(static_cast<Eigen::Index>(i)) = b.values.row(common[i].second);
  }
  return {ra, rb};
}

void write_mask_directory(const fs::path& dir, const std::vector<AgentMaskSet>& masks, int rows, int cols) {
  fs::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& set : masks) {
    atomic_write_png(dir / frame_png_name(set.frame_index), to_label_map(set, rows, cols));
    nlohmann::json agents = nlohmann::json::array();
    for (const auto& s : set.segments) {
      const cv::Rect box = cv::boundingRect(s.mask);
      agents.push_back({{"id", s.id},
                        {"area", cv::countNonZero(s.mask)},
                        {"bbox", {box.x, box.y, box.width, box.height}}});
    }
    index.push_back({{"frame", set.frame_index}, {"agents", agents}});
  }
  atomic_write_text(dir / "index.json", index.dump(1) + "\n");
}

std::vector<cv::Mat> read_label_maps(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("mask directory does not exist: " + dir.string());
  std::vector<cv::Mat> maps;
  for (const auto& file : list_frame_files(dir)) {
    cv::Mat labels = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
    if (labels.empty()) throw IoError("cannot decode mask " + file.string());
    if (labels.channels() != 1) cv::cvtColor(labels, labels, cv::COLOR_BGR2GRAY);
    if (labels.depth() != CV_8U) labels.convertTo(labels, CV_8U);
    maps.push_back(labels);
  }
  if (maps.empty()) throw IoError("no masks in " + dir.string());
  return maps;
}

std::vector<AgentMaskSet> read_mask_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("mask directory does not exist: " + dir.string());
  std::vector<AgentMaskSet> out;
  for (const auto& file : list_frame_files(dir)) {
    cv::Mat labels = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
    if (labels.empty()) throw IoError("cannot decode mask " + file.string());
    if (labels.channels() != 1) cv::cvtColor(labels, labels, cv::COLOR_BGR2GRAY);
    out.push_back(from_label_map(labels, std::stoi(file.stem().string())));
  }
  if (out.empty()) throw IoError("no masks in " + dir.string());
  return out;
}

void write_feature_csv(const fs::path& path, const std::vector<int>& frames, const std::vector<std::string>& header,
                       const Eigen::MatrixXd& values) {
  if (static_cast<Eigen::Index>(frames.size()) != values.rows() ||
      static_cast<Eigen::Index>(header.size()) != values.cols())
    throw std::invalid_argument("write_feature_csv: shape mismatch");
  std::string out = "frame";
  for (const auto& h : header) out += "," + h;
  out += "\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    out += std::to_string(frames[r]);
    for (Eigen::Index c = 0; c < values.cols(); ++c) out += "," + fmt_double(values(r, c), 8);
    out += "\n";
  }
  atomic_write_text(path, out);
}

FrameMatrix read_feature_csv(const fs::path& path) {
  std::vector<std::string> header;
  const auto rows = read_csv(path, &header);
  const int cf = column_of(header, "frame", path);
  FrameMatrix m;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (static_cast<int>(c) != cf) m.columns.push_back(header[c]);
  m.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != header.size()) throw IoError(path.string() + ": ragged row " + std::to_string(r + 2));
    m.frames.push_back(to_int(rows[r][cf], path));
    Eigen::Index col = 0;
    for (std::size_t c = 0; c < header.size(); ++c)
      if (static_cast<int>(c) != cf) m.values(static_cast<Eigen::Index>(r), col++) = to_double(rows[r][c], path);
  }
  return m;
}

std::vector<std::pair<int, int>> read_label_csv(const fs::path& path) {
  std::vector<std::string> header;
  const auto rows = read_csv(path, &header);
  const int cf = column_of(header, "frame", path);
  const int cl = column_of(header, "label", path);
  std::vector<std::pair<int, int>> out;
  for (const auto& r : rows) out.emplace_back(to_int(r.at(cf), path), to_int(r.at(cl), path));
  return out;
}

void write_label_csv(const fs::path& path, const std::vector<std::pair<int, int>>& labels) {
  std::string out = "frame,label\n";
  for (const auto& [f, l] : labels) out += std::to_string(f) + "," + std::to_string(l) + "\n";
  atomic_write_text(path, out);
}

}  // namespace bkind
