#include "fpl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <tuple>

#include "fpl/gibbs.hpp"
#include "matrix_text.hpp"

namespace fpl {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidParameter(what);
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

void SynthConfig::validate() const {
  require(k_true >= 1, "synth: K_true must be >= 1");
  require(n_z >= 2, "synth: N_z must be >= 2");
  require(dim >= 1, "synth: D must be >= 1");
  require(n_u >= 2, "synth: N_u must be >= 2");
  require(std::isfinite(snr_db), "synth: SNR must be finite");
  require(train_fraction > 0.0 && train_fraction < 1.0, "synth: train fraction must be in (0, 1)");
  const int train = train_size();
  require(train >= 1 && train < n_z, "synth: split leaves an empty train or test set");
}

int SynthConfig::train_size() const {
  return static_cast<int>(std::lround(train_fraction * n_z));
}

Eigen::MatrixXd GroundTruth::features() const {
  return (active.cast<double>().array() * weights.array()).matrix();
}

Eigen::MatrixXd GroundTruth::substates() const {
  return levels.cast<double>() / static_cast<double>(grid_levels - 1);
}

Eigen::MatrixXd GroundTruth::signal() const { return substates() * features(); }

ObservationSet SyntheticData::train() const { return data.slice(0, train_rows); }
ObservationSet SyntheticData::test() const { return data.slice(train_rows, data.size()); }

Eigen::RowVectorXd peaked_policy(int n_u, int action, double peak) {
  Eigen::RowVectorXd p = Eigen::RowVectorXd::Constant(n_u, (1.0 - peak) / (n_u - 1));
  p[action] = peak;
  return p;
}

SyntheticData generate_ground_truth(const SynthConfig& config, const SubstateGrid& grid,
                                    RandomSource& rng) {
  config.validate();
  const int k = config.k_true;
  const int dim = config.dim;
  const int n_z = config.n_z;
  SyntheticData out;
  GroundTruth& t = out.truth;
  t.grid_levels = grid.levels();

  t.gamma_w = sample(dist::InverseGamma{100.0, 100.0}, rng);
  t.weights.resize(k, dim);
  for (Eigen::Index i = 0; i < t.weights.size(); ++i)
    t.weights.data()[i] = sample(dist::Exponential{t.gamma_w}, rng);

  t.active.resize(k, dim);
  for (int r = 0; r < k; ++r) {
    int attempts = 0;
    do {
      if (++attempts > 100)
        throw std::runtime_error("synth: activation row stayed empty after 100 draws");
      for (int d = 0; d < dim; ++d) t.active(r, d) = sample(dist::Bernoulli{0.5}, rng) ? 1 : 0;
    } while (t.active.row(r).sum() == 0);
  }

  t.levels.resize(n_z, k);
  const dist::Dirichlet sub_prior{Eigen::VectorXd::Constant(k, 1.0 / k)};
  for (int n = 0; n < n_z; ++n) {
    const Eigen::VectorXd s = sample(sub_prior, rng);
    for (int j = 0; j < k; ++j) t.levels(n, j) = grid.nearest_level(s[j]);
  }

  t.policies.resize(k, config.n_u);
  for (int r = 0; r < k; ++r) {
    const auto peak = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(config.n_u));
    t.policies.row(r) = peaked_policy(config.n_u, peak);
  }

  const Eigen::MatrixXd x = t.signal();
  const double power = x.squaredNorm() / static_cast<double>(x.size());
  t.sigma2 = power / std::pow(10.0, config.snr_db / 10.0);
  const double sd = std::sqrt(t.sigma2);

  ObservationSet& data = out.data;
  data.num_actions = config.n_u;
  data.Z.resize(n_z, dim);
  data.actions.resize(static_cast<std::size_t>(n_z));
  const Eigen::MatrixXd svals = t.substates();
  for (int n = 0; n < n_z; ++n) {
    for (int d = 0; d < dim; ++d) data.Z(n, d) = x(n, d) + sd * rng.standard_normal();
    const Eigen::VectorXd p = action_probabilities(svals.row(n).transpose(), t.policies);
    data.actions[static_cast<std::size_t>(n)] = sample(dist::Categorical{p / p.sum()}, rng);
  }
  out.train_rows = config.train_size();
  return out;
}

Eigen::MatrixXd row_correlations(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.cols() == b.cols(), "row_correlations: column counts differ");
  Eigen::MatrixXd c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) c(i, j) = feature_correlation(a.row(i), b.row(j));
  return c;
}

std::vector<int> max_weight_assignment(const Eigen::MatrixXd& score) {
  const auto rows = static_cast<int>(score.rows());
  const auto cols = static_cast<int>(score.cols());
  std::vector<int> result(static_cast<std::size_t>(rows), -1);
  if (rows == 0 || cols == 0) return result;
  if (rows > cols) {
    const std::vector<int> t = max_weight_assignment(score.transpose());
    for (int j = 0; j < cols; ++j)
      if (t[static_cast<std::size_t>(j)] >= 0) result[static_cast<std::size_t>(t[static_cast<std::size_t>(j)])] = j;
    return result;
  }
  // Shortest augmenting path with potentials on cost = -score; 1-based with a
  // virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(rows) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(cols) + 1, 0.0);
  std::vector<int> owner(static_cast<std::size_t>(cols) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(cols) + 1, 0);
  for (int i = 1; i <= rows; ++i) {
    owner[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(cols) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(cols) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = owner[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= cols; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) continue;
        const double cur = -score(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[sj];
        if (cur < minv[sj]) {
          minv[sj] = cur;
          way[sj] = j0;
        }
        if (minv[sj] < delta) {
          delta = minv[sj];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) {
          u[static_cast<std::size_t>(owner[sj])] += delta;
          v[sj] -= delta;
        } else {
          minv[sj] -= delta;
        }
      }
      j0 = j1;
    } while (owner[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      owner[static_cast<std::size_t>(j0)] = owner[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  for (int j = 1; j <= cols; ++j) {
    const int i = owner[static_cast<std::size_t>(j)];
    if (i > 0) result[static_cast<std::size_t>(i - 1)] = j - 1;
  }
  return result;
}

std::vector<int> match_features(const Eigen::MatrixXd& f_est, const Eigen::MatrixXd& f_true) {
  return max_weight_assignment(row_correlations(f_est, f_true));
}

double accuracy(std::span<const int> labels, std::span<const int> predictions) {
  require(labels.size() == predictions.size(), "accuracy: label/prediction count mismatch");
  if (labels.empty()) return kNaN;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == predictions[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

MetricsRecord evaluate(const LatentState& estimate, const SubstateGrid& grid,
                       const GroundTruth& truth, std::span<const int> test_labels,
                       std::span<const int> map_predictions,
                       std::span<const int> mmse_predictions) {
  const int rows = estimate.num_observations();
  require(rows <= truth.levels.rows(), "evaluate: estimate has more rows than the ground truth");
  require(estimate.dim() == truth.weights.cols(), "evaluate: dimension mismatch");

  const Eigen::MatrixXd f_est = estimate.features();
  const Eigen::MatrixXd f_true = truth.features();
  const Eigen::MatrixXd s_est = estimate.substates(grid);
  const Eigen::MatrixXd s_true = truth.substates().topRows(rows);
  const std::vector<int> match = match_features(f_est, f_true);

  MetricsRecord m;
  double se_f = 0.0;
  double se_s = 0.0;
  double ad_phi = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < match.size(); ++i) {
    const int j = match[i];
    if (j < 0) continue;
    const auto ii = static_cast<Eigen::Index>(i);
    se_f += (f_est.row(ii) - f_true.row(j)).squaredNorm();
    se_s += (s_est.col(ii) - s_true.col(j)).squaredNorm();
    ad_phi += (estimate.policies.row(ii) - truth.policies.row(j)).cwiseAbs().sum();
    ++pairs;
  }
  if (pairs > 0) {
    m.eps_f = std::sqrt(se_f / (static_cast<double>(pairs) * estimate.dim()));
    m.eps_s = std::sqrt(se_s / (static_cast<double>(pairs) * rows));
    m.policy_mad = ad_phi / (static_cast<double>(pairs) * estimate.num_actions());
  } else {
    m.eps_f = m.eps_s = m.policy_mad = kNaN;
  }
  const Eigen::MatrixXd x_true = truth.signal().topRows(rows);
  m.eps_x = std::sqrt((estimate.reconstruction(grid) - x_true).squaredNorm() /
                      static_cast<double>(x_true.size()));
  m.accuracy_map = map_predictions.empty() ? kNaN : accuracy(test_labels, map_predictions);
  m.accuracy_mmse = mmse_predictions.empty() ? kNaN : accuracy(test_labels, mmse_predictions);
  m.k_err = std::abs(estimate.num_features() - truth.num_features());
  return m;
}

void write_ground_truth(std::ostream& out, const GroundTruth& t) {
  out << "truth L=" << t.grid_levels << " N_z=" << t.levels.rows() << " D=" << t.weights.cols()
      << " N_u=" << t.policies.cols() << " K=" << t.num_features()
      << " sigma2=" << format_double(t.sigma2) << " gamma_w=" << format_double(t.gamma_w)
      << " W=" << detail::join_matrix(t.weights) << " A=" << detail::join_matrix(t.active)
      << " S=" << detail::join_matrix(t.levels) << " Phi=" << detail::join_matrix(t.policies)
      << '\n';
}

GroundTruth read_ground_truth(std::istream& in, const std::string& source) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_whitespace(line);
    if (tokens.empty()) continue;
    try {
      if (tokens[0] != "truth") throw std::invalid_argument("expected 'truth' record");
      const detail::Fields f(tokens, 1);
      GroundTruth t;
      t.grid_levels = f.get_int("L");
      const int n_z = f.get_int("N_z");
      const int dim = f.get_int("D");
      const int n_u = f.get_int("N_u");
      const int k = f.get_int("K");
      if (t.grid_levels < 2 || n_z < 1 || dim < 1 || n_u < 2 || k < 0)
        throw std::invalid_argument("invalid dimensions");
      t.sigma2 = f.get_double("sigma2");
      t.gamma_w = f.get_double("gamma_w");
      t.weights = detail::parse_matrix<double>(f.get("W"), k, dim);
      t.active = detail::parse_matrix<int>(f.get("A"), k, dim);
      t.levels = detail::parse_matrix<int>(f.get("S"), n_z, k);
      t.policies = detail::parse_matrix<double>(f.get("Phi"), k, n_u);
      return t;
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  throw ParseError(source, line_no, "no ground-truth record");
}

void save_ground_truth(const std::string& path, const GroundTruth& truth) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  write_ground_truth(f, truth);
  if (!f) throw std::runtime_error("write failed: " + path);
}

GroundTruth load_ground_truth(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  return read_ground_truth(f, path);
}

void write_metrics_row(std::ostream& out, const MetricsRow& row) {
  const MetricsRecord& m = row.metrics;
  out << row.seed << ',' << format_double(row.snr_db) << ',' << row.k_true << ','
      << format_double(m.eps_f) << ',' << format_double(m.eps_s) << ',' << format_double(m.eps_x)
      << ',' << format_double(m.policy_mad) << ',' << format_double(m.accuracy_map) << ','
      << format_double(m.accuracy_mmse) << ',' << format_double(row.k_err) << '\n';
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in, const std::string& source) {
  std::string line;
  int line_no = 0;
  std::vector<MetricsRow> rows;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = trim(line);
    if (trimmed.empty()) continue;
    if (!header) {
      if (trimmed != kMetricsHeader) throw ParseError(source, line_no, "unexpected CSV header");
      header = true;
      continue;
    }
    const auto cells = detail::split_commas(trimmed);
    if (cells.size() != 10) throw ParseError(source, line_no, "expected 10 columns");
    try {
      MetricsRow r;
      r.seed = std::string(cells[0]);
      r.snr_db = parse_double(cells[1]);
      r.k_true = static_cast<int>(parse_int(cells[2]));
      r.metrics.eps_f = parse_double(cells[3]);
      r.metrics.eps_s = parse_double(cells[4]);
      r.metrics.eps_x = parse_double(cells[5]);
      r.metrics.policy_mad = parse_double(cells[6]);
      r.metrics.accuracy_map = parse_double(cells[7]);
      r.metrics.accuracy_mmse = parse_double(cells[8]);
      r.k_err = parse_double(cells[9]);
      r.metrics.k_err = static_cast<int>(std::lround(r.k_err));
      rows.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  if (!header) throw ParseError(source, line_no, "missing CSV header");
  return rows;
}

std::vector<MetricsRow> aggregate_metrics(const std::vector<MetricsRow>& rows) {
  struct Acc {
    double f = 0, s = 0, x = 0, mad = 0, acc_map = 0, acc_mmse = 0, k = 0;
    int n = 0;
  };
  std::map<std::pair<double, int>, Acc> cells;
  for (const auto& r : rows) {
    Acc& a = cells[{r.snr_db, r.k_true}];
    const MetricsRecord& m = r.metrics;
    a.f += m.eps_f * m.eps_f;
    a.s += m.eps_s * m.eps_s;
    a.x += m.eps_x * m.eps_x;
    a.mad += m.policy_mad * m.policy_mad;
    a.acc_map += m.accuracy_map;
    a.acc_mmse += m.accuracy_mmse;
    a.k += r.k_err * r.k_err;
    ++a.n;
  }
  std::vector<MetricsRow> out;
  for (const auto& [key, a] : cells) {
    MetricsRow r;
    r.seed = "all";
    r.snr_db = key.first;
    r.k_true = key.second;
    const double n = a.n;
    r.metrics.eps_f = std::sqrt(a.f / n);
    r.metrics.eps_s = std::sqrt(a.s / n);
    r.metrics.eps_x = std::sqrt(a.x / n);
    r.metrics.policy_mad = std::sqrt(a.mad / n);
    r.metrics.accuracy_map = a.acc_map / n;
    r.metrics.accuracy_mmse = a.acc_mmse / n;
    r.k_err = std::sqrt(a.k / n);
    r.metrics.k_err = static_cast<int>(std::lround(r.k_err));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fpl
