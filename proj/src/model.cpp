#include "fpl/model.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "fpl/text.hpp"

namespace fpl {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidParameter(what);
}

bool positive_finite(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace

void ObservationSet::validate() const {
  require(size() >= 1, "observations: need at least one observation");
  require(dim() >= 1, "observations: dimension must be >= 1");
  require(num_actions >= 2, "observations: need at least two actions");
  require(static_cast<int>(actions.size()) == size(), "observations: one action per row required");
  for (int a : actions)
    require(a >= 0 && a < num_actions, "observations: action index out of range");
  require(Z.allFinite(), "observations: non-finite entry");
}

ObservationSet ObservationSet::slice(int begin, int end) const {
  require(0 <= begin && begin <= end && end <= size(), "observations: slice out of range");
  ObservationSet out;
  out.Z = Z.middleRows(begin, end - begin);
  out.actions.assign(actions.begin() + begin, actions.begin() + end);
  out.num_actions = num_actions;
  return out;
}

SubstateGrid::SubstateGrid(int levels) : levels_(levels) {
  require(levels >= 2, "substate grid: L must be >= 2");
}

int SubstateGrid::nearest_level(double v) const {
  const double scaled = std::round(v * (levels_ - 1));
  if (scaled <= 0.0) return 0;
  if (scaled >= levels_ - 1) return levels_ - 1;
  return static_cast<int>(scaled);
}

Eigen::VectorXd SubstateGrid::values() const {
  Eigen::VectorXd v(levels_);
  for (int i = 0; i < levels_; ++i) v[i] = value(i);
  return v;
}

void Hyperparameters::validate() const {
  for (double v : {h1_alpha_sigma, h2_alpha_sigma, h1_beta_sigma, h2_beta_sigma, h1_alpha_a,
                   h2_alpha_a, h1_beta_a, h2_beta_a, alpha_gamma, beta_gamma, h1_phi, h2_phi,
                   alpha_s_zero, alpha_s_nonzero})
    require(positive_finite(v), "hyperparameters: all prior parameters must be > 0");
  require(p_plus > 0.0 && p_plus < 1.0, "hyperparameters: P_plus must lie in (0, 1)");
  require(t_corr > 0.0 && t_corr <= 1.0, "hyperparameters: T_corr must lie in (0, 1]");
  require(n_iter >= 1, "hyperparameters: N_iter must be >= 1");
  require(L >= 2, "hyperparameters: L must be >= 2");
  require(n_t >= 1, "hyperparameters: N_t must be >= 1");
}

Eigen::MatrixXd LatentState::features() const {
  return (active.cast<double>().array() * weights.array()).matrix();
}

Eigen::MatrixXd LatentState::substates(const SubstateGrid& grid) const {
  return levels.cast<double>() / static_cast<double>(grid.levels() - 1);
}

Eigen::MatrixXd LatentState::reconstruction(const SubstateGrid& grid) const {
  if (num_features() == 0) return Eigen::MatrixXd::Zero(num_observations(), dim());
  return substates(grid) * features();
}

void LatentState::remove_feature(int k) {
  std::vector<int> keep;
  for (int j = 0; j < num_features(); ++j)
    if (j != k) keep.push_back(j);
  select_features(keep);
}

void LatentState::select_features(const std::vector<int>& keep) {
  const auto n = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd w(n, dim());
  Eigen::MatrixXi a(n, dim());
  Eigen::MatrixXi s(num_observations(), n);
  Eigen::MatrixXd p(n, num_actions());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = keep[static_cast<std::size_t>(i)];
    w.row(i) = weights.row(k);
    a.row(i) = active.row(k);
    s.col(i) = levels.col(k);
    p.row(i) = policies.row(k);
  }
  weights = std::move(w);
  active = std::move(a);
  levels = std::move(s);
  policies = std::move(p);
}

void LatentState::check_invariants(const SubstateGrid& grid) const {
  const auto k = weights.rows();
  require(active.rows() == k && active.cols() == weights.cols(), "state: A/W shape mismatch");
  require(levels.cols() == k, "state: S column count must equal K");
  require(policies.rows() == k, "state: Phi row count must equal K");
  require(dim() >= 1 && num_actions() >= 2, "state: invalid D or N_u");
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    require(positive_finite(weights.data()[i]), "state: weights must be finite and > 0");
  for (Eigen::Index i = 0; i < active.size(); ++i)
    require(active.data()[i] == 0 || active.data()[i] == 1, "state: activations must be 0/1");
  for (Eigen::Index i = 0; i < levels.size(); ++i)
    require(levels.data()[i] >= 0 && levels.data()[i] < grid.levels(),
            "state: substate outside the grid");
  for (Eigen::Index r = 0; r < policies.rows(); ++r) {
    require((policies.row(r).array() >= 0.0).all(), "state: negative policy entry");
    require(std::abs(policies.row(r).sum() - 1.0) <= 1e-9, "state: policy row does not sum to 1");
  }
  for (double v : {sigma_z2, gamma_w, alpha_a, beta_a, alpha_sigma, beta_sigma, alpha_phi})
    require(positive_finite(v), "state: scalar parameters must be finite and > 0");
}

double log_obs_likelihood(const LatentState& state, const ObservationSet& data,
                          const SubstateGrid& grid) {
  const Eigen::MatrixXd resid = data.Z - state.reconstruction(grid);
  const double n = static_cast<double>(resid.size());
  return -0.5 * n * std::log(2.0 * std::numbers::pi * state.sigma_z2) -
         resid.squaredNorm() / (2.0 * state.sigma_z2);
}

Eigen::VectorXd action_probabilities(const Eigen::Ref<const Eigen::VectorXd>& s,
                                     const Eigen::MatrixXd& policies) {
  const auto n_actions = policies.cols();
  if (s.size() == 0 || s.sum() <= 0.0)
    return Eigen::VectorXd::Constant(n_actions, 1.0 / static_cast<double>(n_actions));
  Eigen::VectorXd mix = policies.transpose() * s;
  const double z = mix.sum();
  if (!(z > 0.0)) return Eigen::VectorXd::Constant(n_actions, 1.0 / static_cast<double>(n_actions));
  return mix / z;
}

double log_action_likelihood(const LatentState& state, const ObservationSet& data,
                             const SubstateGrid& grid, bool reweight) {
  const Eigen::MatrixXd s = state.substates(grid);
  double total = 0.0;
  for (int n = 0; n < data.size(); ++n) {
    const Eigen::VectorXd p = action_probabilities(s.row(n).transpose(), state.policies);
    total += std::log(std::max(p[data.actions[static_cast<std::size_t>(n)]], kProbabilityFloor));
  }
  return reweight ? total * data.dim() : total;
}

int count_active_rows(const Eigen::MatrixXi& active) {
  int k = 0;
  for (Eigen::Index r = 0; r < active.rows(); ++r)
    if (active.row(r).sum() > 0) ++k;
  return k;
}

double ibp_harmonic(int dim, double beta_a) {
  double h = 0.0;
  for (int d = 1; d <= dim; ++d) h += beta_a / (beta_a + d - 1.0);
  return h;
}

double log_ibp_prior(const Eigen::MatrixXi& active, double alpha_a, double beta_a) {
  const int dim = static_cast<int>(active.cols());
  double out = -alpha_a * ibp_harmonic(dim, beta_a);
  for (Eigen::Index r = 0; r < active.rows(); ++r) {
    const int m = active.row(r).sum();
    if (m == 0) continue;
    out += std::log(alpha_a * beta_a) + log_beta_function(m, dim - m + beta_a);
  }
  return out;
}

double log_substate_prior(const Eigen::MatrixXi& levels, const SubstateGrid& grid,
                          const Hyperparameters& hyper) {
  const double a0 = hyper.alpha_s_zero;
  const double a1 = hyper.alpha_s_nonzero;
  const double log_nonzero_values = std::log(grid.levels() - 1.0);
  double out = 0.0;
  for (Eigen::Index k = 0; k < levels.cols(); ++k) {
    const auto zeros = static_cast<double>((levels.col(k).array() == 0).count());
    const double nonzeros = static_cast<double>(levels.rows()) - zeros;
    out += log_beta_function(zeros + a0, nonzeros + a1) - log_beta_function(a0, a1) -
           nonzeros * log_nonzero_values;
  }
  return out;
}

std::string PosteriorTerms::first_non_finite() const {
  const std::pair<const char*, double> terms[] = {
      {"observation likelihood", observations}, {"action likelihood", actions},
      {"noise prior", noise_prior},             {"substate prior", substate_prior},
      {"weight prior", weight_prior},           {"IBP prior", ibp_prior},
      {"policy prior", policy_prior},           {"hyperpriors", hyperpriors}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) return name;
  return {};
}

PosteriorTerms posterior_terms(const LatentState& state, const ObservationSet& data,
                               const SubstateGrid& grid, const Hyperparameters& hyper) {
  PosteriorTerms t;
  t.observations = log_obs_likelihood(state, data, grid);
  t.actions = log_action_likelihood(state, data, grid, hyper.reweight_actions);
  t.noise_prior =
      log_density(dist::InverseGamma{state.alpha_sigma, state.beta_sigma}, state.sigma_z2);
  t.substate_prior = log_substate_prior(state.levels, grid, hyper);

  const dist::Exponential weight_prior{state.gamma_w};
  for (Eigen::Index i = 0; i < state.weights.size(); ++i)
    t.weight_prior += log_density(weight_prior, state.weights.data()[i]);

  t.ibp_prior = log_ibp_prior(state.active, state.alpha_a, state.beta_a);

  const double a = state.alpha_phi;
  const auto n_u = static_cast<double>(state.num_actions());
  for (Eigen::Index k = 0; k < state.policies.rows(); ++k) {
    double row = std::lgamma(n_u * a) - n_u * std::lgamma(a);
    for (Eigen::Index u = 0; u < state.policies.cols(); ++u)
      row += (a - 1.0) * std::log(std::max(state.policies(k, u), kProbabilityFloor));
    t.policy_prior += row;
  }

  t.hyperpriors =
      log_density(dist::Gamma{hyper.h1_alpha_sigma, hyper.h2_alpha_sigma}, state.alpha_sigma) +
      log_density(dist::Gamma{hyper.h1_beta_sigma, hyper.h2_beta_sigma}, state.beta_sigma) +
      log_density(dist::InverseGamma{hyper.alpha_gamma, hyper.beta_gamma}, state.gamma_w) +
      log_density(dist::Gamma{hyper.h1_alpha_a, hyper.h2_alpha_a}, state.alpha_a) +
      log_density(dist::Gamma{hyper.h1_beta_a, hyper.h2_beta_a}, state.beta_a) +
      log_density(dist::Gamma{hyper.h1_phi, hyper.h2_phi}, state.alpha_phi);
  return t;
}

double log_joint_posterior(const LatentState& state, const ObservationSet& data,
                           const SubstateGrid& grid, const Hyperparameters& hyper) {
  return posterior_terms(state, data, grid, hyper).total();
}

void write_observations(std::ostream& out, const ObservationSet& data) {
  out << "D=" << data.dim() << " N_u=" << data.num_actions << '\n';
  for (int n = 0; n < data.size(); ++n) {
    for (int d = 0; d < data.dim(); ++d) out << format_double(data.Z(n, d)) << ' ';
    out << data.actions[static_cast<std::size_t>(n)] << '\n';
  }
}

ObservationSet read_observations(std::istream& in, const std::string& source) {
  std::string line;
  int line_no = 0;
  int dim = -1;
  ObservationSet out;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_whitespace(line);
    if (tokens.empty()) continue;
    if (dim < 0) {
      if (tokens.size() != 2 || !tokens[0].starts_with("D=") || !tokens[1].starts_with("N_u="))
        throw ParseError(source, line_no, "expected header 'D=<int> N_u=<int>'");
      try {
        dim = static_cast<int>(parse_int(tokens[0].substr(2)));
        out.num_actions = static_cast<int>(parse_int(tokens[1].substr(4)));
      } catch (const std::invalid_argument& e) {
        throw ParseError(source, line_no, e.what());
      }
      if (dim < 1 || out.num_actions < 2)
        throw ParseError(source, line_no, "header needs D >= 1 and N_u >= 2");
      continue;
    }
    if (static_cast<int>(tokens.size()) != dim + 1)
      throw ParseError(source, line_no,
                       "expected " + std::to_string(dim + 1) + " fields, found " +
                           std::to_string(tokens.size()));
    try {
      for (int d = 0; d < dim; ++d) {
        const double v = parse_double(tokens[static_cast<std::size_t>(d)]);
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite value");
        values.push_back(v);
      }
      const long long a = parse_int(tokens.back());
      if (a < 0 || a >= out.num_actions) throw std::invalid_argument("action index out of range");
      out.actions.push_back(static_cast<int>(a));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  if (dim < 0) throw ParseError(source, line_no, "missing header");
  if (out.actions.empty()) throw ParseError(source, line_no, "no observations");
  const auto n = static_cast<Eigen::Index>(out.actions.size());
  out.Z = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), n, dim);
  return out;
}

void save_observations(const std::string& path, const ObservationSet& data) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  write_observations(f, data);
  if (!f) throw std::runtime_error("write failed: " + path);
}

ObservationSet load_observations(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  return read_observations(f, path);
}

}  // namespace fpl
