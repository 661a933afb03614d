#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fpl/distributions.hpp"

namespace fpl {

/// N_z observation vectors of length D, each paired with a discrete action.
struct ObservationSet {
  Eigen::MatrixXd Z;         ///< N_z x D
  std::vector<int> actions;  ///< N_z entries in [0, num_actions)
  int num_actions = 2;

  int size() const { return static_cast<int>(Z.rows()); }
  int dim() const { return static_cast<int>(Z.cols()); }

  /// Throws InvalidParameter on shape or range violations.
  void validate() const;

  /// Rows [begin, end) as a new set.
  ObservationSet slice(int begin, int end) const;
};

/// L equidistant substate values 0, 1/(L-1), ..., 1. Substates are stored as
/// integer levels into this grid.
class SubstateGrid {
 public:
  explicit SubstateGrid(int levels);

  int levels() const { return levels_; }
  double value(int level) const { return static_cast<double>(level) / (levels_ - 1); }
  int nearest_level(double v) const;
  Eigen::VectorXd values() const;

 private:
  int levels_;
};

struct Hyperparameters {
  double h1_alpha_sigma = 1000.0;
  double h2_alpha_sigma = 1.0;
  double h1_beta_sigma = 1.0;
  double h2_beta_sigma = 1.0;
  double h1_alpha_a = 1.0;
  double h2_alpha_a = 1.0;
  double h1_beta_a = 1.0;
  double h2_beta_a = 10.0;
  double alpha_gamma = 1.0;
  double beta_gamma = 1.0;
  double h1_phi = 1.0;
  double h2_phi = 1.0;
  double alpha_s_zero = 1.0;
  double alpha_s_nonzero = 1.0;
  double p_plus = 0.01;
  double t_corr = 0.9;
  int n_iter = 10000;
  int L = 100;
  int n_t = 1000;
  bool reweight_actions = false;

  void validate() const;
};

/// One full assignment of the latent variables.
struct LatentState {
  Eigen::MatrixXd weights;  ///< K x D, strictly positive
  Eigen::MatrixXi active;   ///< K x D, entries in {0, 1}
  Eigen::MatrixXi levels;   ///< N_z x K substate grid levels
  Eigen::MatrixXd policies; ///< K x N_u, rows on the simplex

  double sigma_z2 = 1.0;
  double gamma_w = 1.0;
  double alpha_a = 1.0;
  double beta_a = 1.0;
  double alpha_sigma = 1.0;
  double beta_sigma = 1.0;
  double alpha_phi = 1.0;

  int num_features() const { return static_cast<int>(weights.rows()); }
  int dim() const { return static_cast<int>(weights.cols()); }
  int num_observations() const { return static_cast<int>(levels.rows()); }
  int num_actions() const { return static_cast<int>(policies.cols()); }

  /// F = A (.) W
  Eigen::MatrixXd features() const;
  /// Substate values S (N_z x K).
  Eigen::MatrixXd substates(const SubstateGrid& grid) const;
  /// S F (N_z x D).
  Eigen::MatrixXd reconstruction(const SubstateGrid& grid) const;

  void remove_feature(int k);
  /// Keeps only the listed feature indices, in the given order.
  void select_features(const std::vector<int>& keep);

  /// Throws InvalidParameter if any structural invariant fails.
  void check_invariants(const SubstateGrid& grid) const;

  friend bool operator==(const LatentState&, const LatentState&) = default;
};

/// Probabilities below this are raised to it before taking logs.
inline constexpr double kProbabilityFloor = 1e-300;

double log_obs_likelihood(const LatentState& state, const ObservationSet& data,
                          const SubstateGrid& grid);

/// Mixture of the feature policies weighted by s, normalized over actions.
/// An all-zero s gives the uniform distribution.
Eigen::VectorXd action_probabilities(const Eigen::Ref<const Eigen::VectorXd>& s,
                                     const Eigen::MatrixXd& policies);

double log_action_likelihood(const LatentState& state, const ObservationSet& data,
                             const SubstateGrid& grid, bool reweight);

/// Number of rows of A with at least one active element.
int count_active_rows(const Eigen::MatrixXi& active);

/// Two-parameter IBP log prior over the active rows of A, without the
/// history-count factor prod_h K_h!.
double log_ibp_prior(const Eigen::MatrixXi& active, double alpha_a, double beta_a);

/// sum_{d=1..D} beta / (beta + d - 1); times alpha_a this is the expected
/// number of features.
double ibp_harmonic(int dim, double beta_a);

/// Marginal (Beta-Binomial) log prior of the substate columns.
double log_substate_prior(const Eigen::MatrixXi& levels, const SubstateGrid& grid,
                          const Hyperparameters& hyper);

/// Every factor of the joint posterior, kept separate so a non-finite total
/// can be traced to its source.
struct PosteriorTerms {
  double observations = 0.0;
  double actions = 0.0;
  double noise_prior = 0.0;
  double substate_prior = 0.0;
  double weight_prior = 0.0;
  double ibp_prior = 0.0;
  double policy_prior = 0.0;
  double hyperpriors = 0.0;

  double total() const {
    return observations + actions + noise_prior + substate_prior + weight_prior + ibp_prior +
           policy_prior + hyperpriors;
  }
  /// Name of the first non-finite term, or empty when all are finite.
  std::string first_non_finite() const;
};

PosteriorTerms posterior_terms(const LatentState& state, const ObservationSet& data,
                               const SubstateGrid& grid, const Hyperparameters& hyper);

double log_joint_posterior(const LatentState& state, const ObservationSet& data,
                           const SubstateGrid& grid, const Hyperparameters& hyper);

// Observation file: header "D=<int> N_u=<int>", then one line per observation
// with D reals followed by the integer action.
void write_observations(std::ostream& out, const ObservationSet& data);
ObservationSet read_observations(std::istream& in, const std::string& source = "observations");
void save_observations(const std::string& path, const ObservationSet& data);
ObservationSet load_observations(const std::string& path);

}  // namespace fpl
