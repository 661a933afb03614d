#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "fpl/gibbs.hpp"

namespace fpl {

struct PredictionResult {
  Eigen::VectorXd distribution;  ///< over the N_u actions
  int best_action = 0;           ///< argmax, lowest index on ties
  std::vector<Eigen::VectorXi> substate_draws;
};

/// Argmax with ties resolved toward the lowest index.
int best_action(const Eigen::VectorXd& distribution);

/// Sample with the highest recorded log posterior; earliest wins ties.
/// Throws std::invalid_argument on an empty trace.
const TraceSample& map_estimate(const Trace& trace);
std::size_t map_index(const Trace& trace);

/// Frozen prior masses for inferring substates of unseen observations: the
/// training zero/non-zero counts of each feature with the prior pseudo-counts
/// added.
struct SubstatePrior {
  Eigen::VectorXd log_zero;     ///< log(m0 + alpha_s0), per feature
  Eigen::VectorXd log_nonzero;  ///< log((m1 + alpha_s1) / (L - 1)), per feature
};
SubstatePrior frozen_substate_prior(const LatentState& state, const SubstateGrid& grid,
                                    const Hyperparameters& hyper);

/// Gibbs sweeps over the substate levels of z_star alone, starting from zero.
/// The action of z_star is unknown, so only the observation term and the
/// frozen prior enter. Returns the levels after the last sweep.
Eigen::VectorXi infer_substate(const Eigen::Ref<const Eigen::RowVectorXd>& z_star,
                               const LatentState& state, const SubstateGrid& grid,
                               const SubstatePrior& prior, RandomSource& rng, int n_sweeps);

/// Coordinate ascent on the same conditional, from zero and from
/// `restarts` random starting points; keeps the best fixed point.
Eigen::VectorXi maximize_substate(const Eigen::Ref<const Eigen::RowVectorXd>& z_star,
                                  const LatentState& state, const SubstateGrid& grid,
                                  const SubstatePrior& prior, RandomSource& rng,
                                  int restarts = 4, int max_sweeps = 100);

PredictionResult predict_action_map(const Eigen::Ref<const Eigen::RowVectorXd>& z_star,
                                    const LatentState& map_state, const SubstateGrid& grid,
                                    const Hyperparameters& hyper, RandomSource& rng);

struct MmseOptions {
  int draws_per_sample = 10;
  int n_sweeps = 10;
  bool keep_draws = false;
};

/// Posterior-predictive average over every trace sample and substate draw.
/// Each sample gets its own stream derived from `seed` and the sample's
/// content, so the result does not depend on sample order.
PredictionResult predict_action_mmse(const Eigen::Ref<const Eigen::RowVectorXd>& z_star,
                                     const Trace& trace, const SubstateGrid& grid,
                                     const Hyperparameters& hyper, std::uint64_t seed,
                                     const MmseOptions& options = {});

/// 64-bit FNV-1a digest of a state's contents.
std::uint64_t state_digest(const LatentState& state);

// One line per query: index, the N_u probabilities, best action.
void write_predictions(std::ostream& out, const std::vector<PredictionResult>& results);

}  // namespace fpl
