#include "fpl/predict.hpp"

#include <algorithm>
#include <cstring>
#include <ostream>
#include <stdexcept>

#include "fpl/text.hpp"

namespace fpl {

int best_action(const Eigen::VectorXd& distribution) {
  int best = 0;
  for (int u = 1; u < distribution.size(); ++u)
    if (distribution[u] > distribution[best]) best = u;
  return best;
}

std::size_t map_index(const Trace& trace) {
  if (trace.samples.empty()) throw std::invalid_argument("MAP estimate of an empty trace");
  std::size_t best = 0;
  for (std::size_t i = 1; i < trace.samples.size(); ++i)
    if (trace.samples[i].log_posterior > trace.samples[best].log_posterior) best = i;
  return best;
}

const TraceSample& map_estimate(const Trace& trace) { return trace.samples[map_index(trace)]; }

SubstatePrior frozen_substate_prior(const LatentState& state, const SubstateGrid& grid,
                                    const Hyperparameters& hyper) {
  const int n_feat = state.num_features();
  SubstatePrior p;
  p.log_zero.resize(n_feat);
  p.log_nonzero.resize(n_feat);
  const double n_obs = state.num_observations();
  for (int k = 0; k < n_feat; ++k) {
    const auto zeros = static_cast<double>((state.levels.col(k).array() == 0).count());
    p.log_zero[k] = std::log(zeros + hyper.alpha_s_zero);
    p.log_nonzero[k] =
        std::log(n_obs - zeros + hyper.alpha_s_nonzero) - std::log(grid.levels() - 1.0);
  }
  return p;
}

namespace {

// Unnormalized log conditional of every level of coordinate k; `e` is the
// residual with coordinate k's contribution removed.
void coordinate_masses(const Eigen::RowVectorXd& e, const Eigen::RowVectorXd& f_k, double c_k,
                       double sigma2, double log_zero, double log_nonzero,
                       const SubstateGrid& grid, std::vector<double>& out) {
  const double b = e.dot(f_k);
  out.resize(static_cast<std::size_t>(grid.levels()));
  for (int l = 0; l < grid.levels(); ++l) {
    const double v = grid.value(l);
    out[static_cast<std::size_t>(l)] =
        (2.0 * v * b - v * v * c_k) / (2.0 * sigma2) + (l == 0 ? log_zero : log_nonzero);
  }
}

double substate_objective(const Eigen::Ref<const Eigen::RowVectorXd>& z, const Eigen::VectorXi& s,
                          const Eigen::MatrixXd& f, double sigma2, const SubstatePrior& prior,
                          const SubstateGrid& grid) {
  Eigen::RowVectorXd recon = Eigen::RowVectorXd::Zero(z.size());
  double out = 0.0;
  for (int k = 0; k < s.size(); ++k) {
    recon += grid.value(s[k]) * f.row(k);
    out += s[k] == 0 ? prior.log_zero[k] : prior.log_nonzero[k];
  }
  return out - (z - recon).squaredNorm() / (2.0 * sigma2);
}

Eigen::VectorXi ascend(const Eigen::Ref<const Eigen::RowVectorXd>& z, Eigen::VectorXi s,
                       const Eigen::MatrixXd& f, const Eigen::VectorXd& c, double sigma2,
                       const SubstatePrior& prior, const SubstateGrid& grid, int max_sweeps) {
  Eigen::RowVectorXd e = z;
  for (int k = 0; k < s.size(); ++k) e -= grid.value(s[k]) * f.row(k);
  std::vector<double> masses;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool changed = false;
    for (int k = 0; k < s.size(); ++k) {
      e += grid.value(s[k]) * f.row(k);
      coordinate_masses(e, f.row(k), c[k], sigma2, prior.log_zero[k], prior.log_nonzero[k], grid,
                        masses);
      const auto best =
          static_cast<int>(std::max_element(masses.begin(), masses.end()) - masses.begin());
      if (best != s[k]) changed = true;
      s[k] = best;
      e -= grid.value(s[k]) * f.row(k);
    }
    if (!changed) break;
  }
  return s;
}

}  // namespace

Eigen::VectorXi infer_substate(const Eigen::Ref<const Eigen::RowVectorXd>& z_star,
                               const LatentState& state, const SubstateGrid& grid,
                               const SubstatePrior& prior, RandomSource& rng, int n_sweeps) {
  if (n_sweeps < 1) throw InvalidParameter("infer_substate: n_sweeps must be >= 1");
  const int n_feat = state.num_features();
  const Eigen::MatrixXd f = state.features();
  const Eigen::VectorXd c = f.rowwise().squaredNorm();
  Eigen::VectorXi s = Eigen::VectorXi::Zero(n_feat);
  Eigen::RowVectorXd e = z_star;
  std::vector<double> masses;
  for (int sweep = 0; sweep < n_sweeps; ++sweep) {
    for (int k = 0; k < n_feat; ++k) {
      e += grid.value(s[k]) * f.row(k);
      coordinate_masses(e, f.row(k), c[k], state.sigma_z2, prior.log_zero[k],
                        prior.log_nonzero[k], grid, masses);
      s[k] = sample_log_categorical(masses, rng);
      e -= grid.value(s[k]) * f.row(k);
    }
  }
  return s;
}

Eigen::VectorXi maximize_substate(const Eigen::Ref<const Eigen::RowVectorXd>& z_star,
                                  const LatentState& state, const SubstateGrid& grid,
                                  const SubstatePrior& prior, RandomSource& rng, int restarts,
                                  int max_sweeps) {
  const int n_feat = state.num_features();
  const Eigen::MatrixXd f = state.features();
  const Eigen::VectorXd c = f.rowwise().squaredNorm();
  Eigen::VectorXi best = ascend(z_star, Eigen::VectorXi::Zero(n_feat), f, c, state.sigma_z2,
                                prior, grid, max_sweeps);
  double best_value = substate_objective(z_star, best, f, state.sigma_z2, prior, grid);
  for (int r = 0; r < restarts; ++r) {
    Eigen::VectorXi start(n_feat);
    for (int k = 0; k < n_feat; ++k) {
      const double p_zero =
          1.0 / (1.0 + std::exp(prior.log_nonzero[k] + std::log(grid.levels() - 1.0) -
                                prior.log_zero[k]));
      start[k] = rng.uniform() < p_zero
                     ? 0
                     : 1 + static_cast<int>(rng.next_u64() %
                                            static_cast<std::uint64_t>(grid.levels() - 1));
    }
    Eigen::VectorXi s = ascend(z_star, start, f, c, state.sigma_z2, prior, grid, max_sweeps);
    const double value = substate_objective(z_star, s, f, state.sigma_z2, prior, grid);
    if (value > best_value) {
      best_value = value;
      best = s;
    }
  }
  return best;
}

PredictionResult predict_action_map(const Eigen::Ref<const Eigen::RowVectorXd>& z_star,
                                    const LatentState& map_state, const SubstateGrid& grid,
                                    const Hyperparameters& hyper, RandomSource& rng) {
  const SubstatePrior prior = frozen_substate_prior(map_state, grid, hyper);
  const Eigen::VectorXi s = maximize_substate(z_star, map_state, grid, prior, rng);
  PredictionResult out;
  Eigen::VectorXd values(s.size());
  for (int k = 0; k < s.size(); ++k) values[k] = grid.value(s[k]);
  out.distribution = action_probabilities(values, map_state.policies);
  out.best_action = best_action(out.distribution);
  out.substate_draws.push_back(s);
  return out;
}

std::uint64_t state_digest(const LatentState& state) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  const int dims[] = {state.num_features(), state.dim(), state.num_observations(),
                      state.num_actions()};
  mix(dims, sizeof dims);
  mix(state.weights.data(), sizeof(double) * static_cast<std::size_t>(state.weights.size()));
  mix(state.active.data(), sizeof(int) * static_cast<std::size_t>(state.active.size()));
  mix(state.levels.data(), sizeof(int) * static_cast<std::size_t>(state.levels.size()));
  mix(state.policies.data(), sizeof(double) * static_cast<std::size_t>(state.policies.size()));
  const double scalars[] = {state.sigma_z2,    state.gamma_w,    state.alpha_a,  state.beta_a,
                            state.alpha_sigma, state.beta_sigma, state.alpha_phi};
  mix(scalars, sizeof scalars);
  return h;
}

PredictionResult predict_action_mmse(const Eigen::Ref<const Eigen::RowVectorXd>& z_star,
                                     const Trace& trace, const SubstateGrid& grid,
                                     const Hyperparameters& hyper, std::uint64_t seed,
                                     const MmseOptions& options) {
  if (trace.samples.empty()) throw std::invalid_argument("MMSE prediction from an empty trace");
  if (options.draws_per_sample < 1) throw InvalidParameter("draws_per_sample must be >= 1");

  struct Contribution {
    std::uint64_t digest;
    Eigen::VectorXd mean;
    std::vector<Eigen::VectorXi> draws;
  };
  std::vector<Contribution> parts;
  parts.reserve(trace.samples.size());
  for (const auto& rec : trace.samples) {
    const LatentState& state = rec.state;
    const std::uint64_t digest = state_digest(state);
    RandomSource rng(derive_seed(seed, digest));
    const SubstatePrior prior = frozen_substate_prior(state, grid, hyper);
    Contribution part{digest, Eigen::VectorXd::Zero(state.num_actions()), {}};
    for (int i = 0; i < options.draws_per_sample; ++i) {
      const Eigen::VectorXi s = infer_substate(z_star, state, grid, prior, rng, options.n_sweeps);
      Eigen::VectorXd values(s.size());
      for (int k = 0; k < s.size(); ++k) values[k] = grid.value(s[k]);
      part.mean += action_probabilities(values, state.policies);
      if (options.keep_draws) part.draws.push_back(s);
    }
    part.mean /= options.draws_per_sample;
    parts.push_back(std::move(part));
  }
  // Sum in digest order so a permuted trace gives a bitwise-identical result.
  std::stable_sort(parts.begin(), parts.end(),
                   [](const Contribution& a, const Contribution& b) { return a.digest < b.digest; });
  PredictionResult out;
  out.distribution = Eigen::VectorXd::Zero(parts.front().mean.size());
  for (auto& part : parts) {
    out.distribution += part.mean;
    for (auto& d : part.draws) out.substate_draws.push_back(std::move(d));
  }
  out.distribution /= static_cast<double>(parts.size());
  out.best_action = best_action(out.distribution);
  return out;
}

void write_predictions(std::ostream& out, const std::vector<PredictionResult>& results) {
  for (std::size_t i = 0; i < results.size(); ++i) {
    out << i;
    for (Eigen::Index u = 0; u < results[i].distribution.size(); ++u)
      out << ' ' << format_double(results[i].distribution[u]);
    out << ' ' << results[i].best_action << '\n';
  }
}

}  // namespace fpl
