#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fpl/distributions.hpp"
#include "fpl/model.hpp"

namespace fpl {

struct ChainConfig {
  int n_iter = 10000;
  int burn_in = 5000;
  int thin = 1;
  std::uint64_t seed = 0;
  /// Sweeps between merge passes; 0 disables merging and pruning.
  int merge_every = 10;
  /// Shape of the Gamma random-walk proposals used by every MH move.
  double mh_concentration = 50.0;
  /// Upper bound on K enforced by the birth move; 0 means unbounded.
  int max_features = 0;

  void validate() const;
};

struct MoveStats {
  std::int64_t proposed = 0;
  std::int64_t accepted = 0;
  double rate() const {
    return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  }
};

struct AcceptStats {
  MoveStats alpha_sigma;
  MoveStats beta_sigma;
  MoveStats beta_a;
  MoveStats alpha_phi;
  MoveStats births;
};

struct TraceSample {
  int sweep = 0;
  LatentState state;
  double log_posterior = 0.0;
};

struct Trace {
  int grid_levels = 2;
  std::vector<TraceSample> samples;
  AcceptStats stats;
};

// ---------------------------------------------------------------------------
// Metropolis-Hastings with a mean-preserving Gamma random walk:
// proposal ~ Gamma(shape = c, rate = c / current).

/// log q(current | proposed) - log q(proposed | current).
double gamma_walk_log_hastings(double current, double proposed, double concentration);

/// One MH step on a positive scalar. Returns true on acceptance.
bool gamma_walk_step(double& value, double concentration,
                     const std::function<double(double)>& log_target, RandomSource& rng,
                     MoveStats& stats);

// ---------------------------------------------------------------------------
// Conditional updates. All take the state by reference and update in place.

void sample_noise_variance(LatentState& state, const ObservationSet& data,
                           const SubstateGrid& grid, RandomSource& rng);

void sample_noise_hyperparams(LatentState& state, const Hyperparameters& hyper,
                              double concentration, RandomSource& rng, AcceptStats& stats);

/// Unnormalized log mass of every grid level for s_{n,k} given everything else.
std::vector<double> substate_log_conditional(const LatentState& state, const ObservationSet& data,
                                             const SubstateGrid& grid,
                                             const Hyperparameters& hyper, int n, int k);

/// Systematic scan over all (n, k).
void sample_substates(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                      const Hyperparameters& hyper, RandomSource& rng);

/// Parameters of the untruncated Gaussian whose positive part is the
/// conditional of w_{k,d}. Empty when feature k is unused (sum_n s_{n,k}^2 = 0).
struct WeightConditional {
  double mean;
  double variance;
};
std::optional<WeightConditional> weight_conditional(const LatentState& state,
                                                    const ObservationSet& data,
                                                    const SubstateGrid& grid, int k, int d);

void sample_weight_row(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                       int k, RandomSource& rng);

void sample_gamma_w(LatentState& state, const Hyperparameters& hyper, RandomSource& rng);

/// P(a_{k,d} = 1 | everything else).
double activation_probability(const LatentState& state, const ObservationSet& data,
                              const SubstateGrid& grid, int k, int d);

void sample_activation(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                       int k, int d, RandomSource& rng);

/// Scan over all (k, d) except singleton elements (a feature's only active
/// entry), which belong to the birth/death move.
void sample_activations(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                        RandomSource& rng);

/// Rate of the Poisson prior on the number of singleton features per column,
/// alpha_a beta_a / (beta_a + D - 1).
double new_feature_rate(double alpha_a, double beta_a, int dim);

/// Birth/death MH move on single-column features, one proposal per column.
void propose_new_features(LatentState& state, const ObservationSet& data,
                          const SubstateGrid& grid, const Hyperparameters& hyper,
                          const ChainConfig& config, RandomSource& rng, AcceptStats& stats);

void sample_ibp_hyperparams(LatentState& state, const Hyperparameters& hyper,
                            double concentration, RandomSource& rng, AcceptStats& stats);

/// Indicator draws, Dirichlet policy update, and the alpha_phi MH move.
void sample_policies(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                     const Hyperparameters& hyper, double concentration, RandomSource& rng,
                     AcceptStats& stats);

/// Indicator co-occurrence counts (K x N_u), averaged over hyper.n_t draws.
Eigen::MatrixXd policy_indicator_counts(const LatentState& state, const ObservationSet& data,
                                        const SubstateGrid& grid, int draws, RandomSource& rng);

/// Pearson correlation of two feature rows; 1 for identical rows, 0 when
/// either row is constant.
double feature_correlation(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                           const Eigen::Ref<const Eigen::RowVectorXd>& b);

/// Greedily merges feature pairs whose correlation exceeds hyper.t_corr,
/// then prunes dead features. Returns the number of merges.
int merge_similar_features(LatentState& state, const SubstateGrid& grid,
                           const Hyperparameters& hyper);

/// Removes features with an all-zero activation row or substate column.
int prune_dead_features(LatentState& state);

/// One feature with every latent variable drawn from its prior.
LatentState initial_state(const ObservationSet& data, const SubstateGrid& grid,
                          const Hyperparameters& hyper, RandomSource& rng);

/// Latent variables of one new feature, drawn from their priors.
struct FeatureDraw {
  Eigen::RowVectorXd weights;
  Eigen::VectorXi levels;
  Eigen::RowVectorXd policy;
};
FeatureDraw draw_feature_parameters(const LatentState& state, const SubstateGrid& grid,
                                    const Hyperparameters& hyper, RandomSource& rng);

/// One full sweep in the fixed order: substates, weights, gamma_w,
/// activations, births, IBP hyperparameters, noise variance, noise
/// hyperparameters, policies. `sweep` is the zero-based sweep index and
/// drives the merge schedule.
void gibbs_sweep(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                 const Hyperparameters& hyper, const ChainConfig& config, int sweep,
                 RandomSource& rng, AcceptStats& stats);

Trace run_chain(const ObservationSet& data, const Hyperparameters& hyper,
                const ChainConfig& config);
Trace run_chain(const ObservationSet& data, const Hyperparameters& hyper,
                const ChainConfig& config, LatentState initial);

// Trace file: a header line followed by one record per retained sample.
// Field order of a record:
//   sweep K log_post sigma_z2 gamma_w alpha_a beta_a alpha_sigma beta_sigma
//   alpha_phi W A S Phi
// where W, A (K x D), S (N_z x K, grid levels) and Phi (K x N_u) are
// comma-separated and flattened row-major.
void write_trace(std::ostream& out, const Trace& trace);
Trace read_trace(std::istream& in, const std::string& source = "trace");
void save_trace(const std::string& path, const Trace& trace);
Trace load_trace(const std::string& path);

}  // namespace fpl
