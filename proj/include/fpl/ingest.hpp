#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fpl/model.hpp"

namespace fpl {

struct Point {
  double x;  ///< longitudinal, meters
  double y;  ///< lateral, meters
  double h;  ///< height relative to the sensor, meters
};

struct PointCloud {
  std::vector<Point> points;
  double timestamp = 0.0;
};

struct GridSpec {
  double x_min = -10.0;
  double x_max = 30.0;
  double y_min = -3.0;
  double y_max = 3.0;
  int cells_x = 65;
  int cells_y = 21;
  /// Ground level relative to the sensor; lower points are dropped.
  double height_threshold = -1.5;

  void validate() const;
  double resolution_x() const { return (x_max - x_min) / cells_x; }
  double resolution_y() const { return (y_max - y_min) / cells_y; }
};

struct OccupancyGrid {
  Eigen::MatrixXd values;  ///< cells_y x cells_x, height above the threshold
  double timestamp = 0.0;
};

/// Max height above the threshold per cell; empty cells are 0. Points below
/// the threshold or outside the ranges are dropped. Cells are half-open
/// except that the upper range edge belongs to the last cell.
OccupancyGrid points_to_grid(const PointCloud& cloud, const GridSpec& spec);

/// Row-major flattening of the current grid followed by the previous one.
Eigen::RowVectorXd stack_frames(const OccupancyGrid& current, const OccupancyGrid& previous);

/// Smallest relative speed whose displacement between frames spans one cell.
double min_resolvable_velocity(double resolution, double sample_rate_hz);

/// Action letters A, D, R, C map to 0..3.
inline constexpr int kNumIngestActions = 4;
int action_from_letter(char c);
char letter_from_action(int action);

/// Point file: one "x y h" per line; "# timestamp=<seconds>" sets the
/// timestamp, other lines starting with '#' are comments.
PointCloud read_point_cloud(std::istream& in, const std::string& source = "points");
PointCloud load_point_cloud(const std::string& path);

/// One action letter per line.
std::vector<int> read_labels(std::istream& in, const std::string& source = "labels");
std::vector<int> load_labels(const std::string& path);

/// Pairs frame t with frame t-1 for t = 1..T-1; needs T-1 labels.
ObservationSet build_sequence(const std::vector<OccupancyGrid>& frames,
                              const std::vector<int>& labels);

ObservationSet load_labeled_sequence(const std::vector<std::string>& frame_files,
                                     const std::string& label_file, const GridSpec& spec);

}  // namespace fpl
