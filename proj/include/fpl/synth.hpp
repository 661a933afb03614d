#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fpl/model.hpp"

namespace fpl {

struct SynthConfig {
  int k_true = 5;
  int n_z = 100;
  int dim = 30;
  int n_u = 4;
  double snr_db = 30.0;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
  /// Rows [0, train_size()) are used for training, the rest for testing.
  int train_size() const;
};

struct GroundTruth {
  Eigen::MatrixXd weights;   ///< K x D
  Eigen::MatrixXi active;    ///< K x D
  Eigen::MatrixXi levels;    ///< N_z x K grid levels, all rows
  Eigen::MatrixXd policies;  ///< K x N_u
  double sigma2 = 0.0;
  double gamma_w = 0.0;
  int grid_levels = 2;

  int num_features() const { return static_cast<int>(weights.rows()); }
  Eigen::MatrixXd features() const;
  Eigen::MatrixXd substates() const;
  /// Noise-free observations S F.
  Eigen::MatrixXd signal() const;
};

struct SyntheticData {
  GroundTruth truth;
  ObservationSet data;  ///< all N_z rows
  ObservationSet train() const;
  ObservationSet test() const;
  int train_rows = 0;
};

/// Probability vector putting `peak` on `action` and the rest evenly elsewhere.
Eigen::RowVectorXd peaked_policy(int n_u, int action, double peak = 0.95);

SyntheticData generate_ground_truth(const SynthConfig& config, const SubstateGrid& grid,
                                    RandomSource& rng);

/// Pearson correlation matrix between the rows of two matrices with equal
/// column counts.
Eigen::MatrixXd row_correlations(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Maximum-total-correlation one-to-one assignment of estimated rows to true
/// rows. Entry i holds the matched true row of estimated row i, or -1.
std::vector<int> match_features(const Eigen::MatrixXd& f_est, const Eigen::MatrixXd& f_true);

/// Maximizes sum score(i, assignment[i]) over one-to-one partial assignments
/// of min(rows, cols) pairs (Hungarian algorithm).
std::vector<int> max_weight_assignment(const Eigen::MatrixXd& score);

struct MetricsRecord {
  double eps_f = 0.0;
  double eps_s = 0.0;
  double eps_x = 0.0;
  double policy_mad = 0.0;
  double accuracy_map = 0.0;
  double accuracy_mmse = 0.0;
  int k_err = 0;
};

double accuracy(std::span<const int> labels, std::span<const int> predictions);

/// Error metrics of an estimate fitted to the first estimate.num_observations()
/// rows of the ground truth. Prediction spans may be empty, which leaves the
/// matching accuracy at NaN.
MetricsRecord evaluate(const LatentState& estimate, const SubstateGrid& grid,
                       const GroundTruth& truth, std::span<const int> test_labels,
                       std::span<const int> map_predictions,
                       std::span<const int> mmse_predictions);

// Ground-truth file: a single line of key=value fields with matrices
// comma-separated and flattened row-major.
void write_ground_truth(std::ostream& out, const GroundTruth& truth);
GroundTruth read_ground_truth(std::istream& in, const std::string& source = "truth");
void save_ground_truth(const std::string& path, const GroundTruth& truth);
GroundTruth load_ground_truth(const std::string& path);

inline constexpr const char* kMetricsHeader =
    "seed,snr_db,K_true,eps_F,eps_S,eps_X,policy_mad,accuracy_map,accuracy_mmse,K_err";

struct MetricsRow {
  std::string seed;  ///< numeric seed, or "all" for an aggregate row
  double snr_db = 0.0;
  int k_true = 0;
  MetricsRecord metrics;
  double k_err = 0.0;  ///< integer per run, RMSE when aggregated
};

void write_metrics_row(std::ostream& out, const MetricsRow& row);
std::vector<MetricsRow> read_metrics_csv(std::istream& in, const std::string& source = "metrics");

/// One row per (snr_db, K_true) cell: RMSE across seeds for the error
/// columns and K_err, mean for the accuracies.
std::vector<MetricsRow> aggregate_metrics(const std::vector<MetricsRow>& rows);

}  // namespace fpl
