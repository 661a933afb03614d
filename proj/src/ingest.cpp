#include "fpl/ingest.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <stdexcept>

#include "fpl/text.hpp"

namespace fpl {

void GridSpec::validate() const {
  const bool ok = std::isfinite(x_min) && std::isfinite(x_max) && std::isfinite(y_min) &&
                  std::isfinite(y_max) && std::isfinite(height_threshold) && x_min < x_max &&
                  y_min < y_max && cells_x >= 1 && cells_y >= 1;
  if (!ok) throw InvalidParameter("grid spec: need finite ranges with min < max and cells >= 1");
}

namespace {

int cell_index(double v, double lo, double hi, int cells) {
  if (v < lo || v > hi) return -1;
  const auto i = static_cast<int>(std::floor((v - lo) / (hi - lo) * cells));
  return std::min(i, cells - 1);
}

}  // namespace

OccupancyGrid points_to_grid(const PointCloud& cloud, const GridSpec& spec) {
  spec.validate();
  OccupancyGrid g;
  g.timestamp = cloud.timestamp;
  g.values = Eigen::MatrixXd::Zero(spec.cells_y, spec.cells_x);
  for (const Point& p : cloud.points) {
    if (!(p.h >= spec.height_threshold)) continue;
    const int cx = cell_index(p.x, spec.x_min, spec.x_max, spec.cells_x);
    const int cy = cell_index(p.y, spec.y_min, spec.y_max, spec.cells_y);
    if (cx < 0 || cy < 0) continue;
    g.values(cy, cx) = std::max(g.values(cy, cx), p.h - spec.height_threshold);
  }
  return g;
}

Eigen::RowVectorXd stack_frames(const OccupancyGrid& current, const OccupancyGrid& previous) {
  if (current.values.rows() != previous.values.rows() ||
      current.values.cols() != previous.values.cols())
    throw InvalidParameter("stack_frames: grid shapes differ (" +
                           std::to_string(current.values.rows()) + "x" +
                           std::to_string(current.values.cols()) + " vs " +
                           std::to_string(previous.values.rows()) + "x" +
                           std::to_string(previous.values.cols()) + ")");
  const auto n = current.values.size();
  Eigen::RowVectorXd z(2 * n);
  Eigen::Index i = 0;
  for (const auto* g : {&current, &previous})
    for (Eigen::Index r = 0; r < g->values.rows(); ++r)
      for (Eigen::Index c = 0; c < g->values.cols(); ++c) z[i++] = g->values(r, c);
  return z;
}

double min_resolvable_velocity(double resolution, double sample_rate_hz) {
  if (!(resolution > 0.0) || !(sample_rate_hz > 0.0))
    throw InvalidParameter("min_resolvable_velocity: inputs must be > 0");
  return resolution * sample_rate_hz;
}

int action_from_letter(char c) {
  switch (c) {
    case 'A': return 0;
    case 'D': return 1;
    case 'R': return 2;
    case 'C': return 3;
    default: throw std::invalid_argument(std::string("unknown action letter '") + c + "'");
  }
}

char letter_from_action(int action) {
  static constexpr char kLetters[] = {'A', 'D', 'R', 'C'};
  if (action < 0 || action >= kNumIngestActions)
    throw std::invalid_argument("action index out of range");
  return kLetters[action];
}

PointCloud read_point_cloud(std::istream& in, const std::string& source) {
  PointCloud cloud;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    try {
      if (t.front() == '#') {
        const auto body = trim(t.substr(1));
        if (body.starts_with("timestamp=")) cloud.timestamp = parse_double(body.substr(10));
        continue;
      }
      const auto tokens = split_whitespace(t);
      if (tokens.size() != 3)
        throw std::invalid_argument("expected 'x y h', found " + std::to_string(tokens.size()) +
                                    " fields");
      const Point p{parse_double(tokens[0]), parse_double(tokens[1]), parse_double(tokens[2])};
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.h))
        throw std::invalid_argument("non-finite coordinate");
      cloud.points.push_back(p);
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return cloud;
}

PointCloud load_point_cloud(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open point file " + path);
  return read_point_cloud(f, path);
}

std::vector<int> read_labels(std::istream& in, const std::string& source) {
  std::vector<int> labels;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    try {
      if (t.size() != 1) throw std::invalid_argument("expected one action letter (A, D, R, C)");
      labels.push_back(action_from_letter(t.front()));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return labels;
}

std::vector<int> load_labels(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open label file " + path);
  return read_labels(f, path);
}

ObservationSet build_sequence(const std::vector<OccupancyGrid>& frames,
                              const std::vector<int>& labels) {
  if (frames.size() < 2) throw InvalidParameter("sequence: need at least two frames");
  if (labels.size() + 1 != frames.size())
    throw InvalidParameter("sequence: " + std::to_string(frames.size()) + " frames need " +
                           std::to_string(frames.size() - 1) + " labels, found " +
                           std::to_string(labels.size()));
  ObservationSet out;
  out.num_actions = kNumIngestActions;
  const auto dim = 2 * frames.front().values.size();
  out.Z.resize(static_cast<Eigen::Index>(labels.size()), dim);
  for (std::size_t t = 1; t < frames.size(); ++t)
    out.Z.row(static_cast<Eigen::Index>(t - 1)) = stack_frames(frames[t], frames[t - 1]);
  out.actions = labels;
  return out;
}

ObservationSet load_labeled_sequence(const std::vector<std::string>& frame_files,
                                     const std::string& label_file, const GridSpec& spec) {
  const std::vector<int> labels = load_labels(label_file);
  std::vector<OccupancyGrid> frames;
  frames.reserve(frame_files.size());
  for (const auto& path : frame_files) frames.push_back(points_to_grid(load_point_cloud(path), spec));
  return build_sequence(frames, labels);
}

}  // namespace fpl
