#include "fpl/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace fpl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidParameter(what);
}

// Z - S F, the current residual.
Eigen::MatrixXd residuals(const LatentState& state, const ObservationSet& data,
                          const SubstateGrid& grid) {
  return data.Z - state.reconstruction(grid);
}

double action_weight(const Hyperparameters& hyper, int dim) {
  return hyper.reweight_actions ? static_cast<double>(dim) : 1.0;
}

double safe_log(double p) { return std::log(std::max(p, kProbabilityFloor)); }

// Log density of the Dirichlet(a, ..., a) policy prior over all rows.
double log_policy_prior(const Eigen::MatrixXd& policies, double a) {
  const auto n_u = static_cast<double>(policies.cols());
  double out = 0.0;
  for (Eigen::Index k = 0; k < policies.rows(); ++k) {
    out += std::lgamma(n_u * a) - n_u * std::lgamma(a);
    for (Eigen::Index u = 0; u < policies.cols(); ++u)
      out += (a - 1.0) * safe_log(policies(k, u));
  }
  return out;
}

// One site of the substate conditional, given quantities with feature k's
// contribution removed: b = e.f_k, mix/total = action mixture of the other
// features, zeros = zero count of column k excluding this site.
struct SiteContext {
  double b;
  double c;  // |f_k|^2
  double mix_u;
  double total;
  double phi_ku;
  double phi_k_sum;
  double zeros;
  double nonzeros;
  double uniform;  // 1 / N_u
};

void site_log_masses(const SiteContext& ctx, const SubstateGrid& grid, double sigma2,
                     double act_weight, const Hyperparameters& hyper, std::vector<double>& out) {
  const int levels = grid.levels();
  out.resize(static_cast<std::size_t>(levels));
  const double log_zero = std::log(ctx.zeros + hyper.alpha_s_zero);
  const double log_nonzero =
      std::log(ctx.nonzeros + hyper.alpha_s_nonzero) - std::log(levels - 1.0);
  for (int l = 0; l < levels; ++l) {
    const double v = grid.value(l);
    const double obs = (2.0 * v * ctx.b - v * v * ctx.c) / (2.0 * sigma2);
    const double den = ctx.total + v * ctx.phi_k_sum;
    const double p = den > 0.0 ? (ctx.mix_u + v * ctx.phi_ku) / den : ctx.uniform;
    out[static_cast<std::size_t>(l)] =
        obs + act_weight * safe_log(p) + (l == 0 ? log_zero : log_nonzero);
  }
}

// Contribution of the current row-n substates to the action mixture.
struct RowMixture {
  Eigen::VectorXd mix;  // sum_k s_k phi_k
  double total = 0.0;   // sum_k s_k |phi_k|_1
};

RowMixture row_mixture(const LatentState& state, const SubstateGrid& grid, int n) {
  RowMixture r;
  r.mix = Eigen::VectorXd::Zero(state.num_actions());
  for (int k = 0; k < state.num_features(); ++k) {
    const double v = grid.value(state.levels(n, k));
    if (v == 0.0) continue;
    r.mix += v * state.policies.row(k).transpose();
    r.total += v * state.policies.row(k).sum();
  }
  return r;
}

double log_pmf_poisson(int k, double mean) { return log_density(dist::Poisson{mean}, k); }

// log Phi(t), with the asymptotic tail series where erfc underflows.
double log_normal_cdf(double t) {
  if (t > -30.0) return std::log(0.5 * std::erfc(-t / std::sqrt(2.0)));
  const double t2 = t * t;
  return -0.5 * t2 - std::log(-t) - 0.5 * std::log(2.0 * M_PI) +
         std::log1p(-1.0 / t2 + 3.0 / (t2 * t2));
}

// Conditional of a single-column feature's weight given its substate column
// and the column residual of the other features. Empty for an unused column.
std::optional<WeightConditional> singleton_weight_conditional(
    const Eigen::Ref<const Eigen::VectorXd>& s, const Eigen::VectorXd& residual, double sigma2,
    double gamma_w) {
  const double ss = s.squaredNorm();
  if (ss <= 0.0) return std::nullopt;
  const double precision = ss / sigma2;
  return WeightConditional{(s.dot(residual) / sigma2 - 1.0 / gamma_w) / precision,
                           1.0 / precision};
}

// log prior - log proposal of a birth-column weight drawn from the conditional.
double weight_proposal_correction(double w, const std::optional<WeightConditional>& c,
                                  double gamma_w) {
  if (!c) return 0.0;
  const double log_q = log_density(dist::Gaussian{c->mean, c->variance}, w) -
                       log_normal_cdf(c->mean / std::sqrt(c->variance));
  return log_density(dist::Exponential{gamma_w}, w) - log_q;
}

// Pólya urn draw of one substate column from the Beta-Binomial prior.
Eigen::VectorXi draw_substate_column(int rows, const SubstateGrid& grid,
                                     const Hyperparameters& hyper, RandomSource& rng) {
  Eigen::VectorXi col(rows);
  double zeros = 0.0;
  for (int n = 0; n < rows; ++n) {
    const double p_zero = (zeros + hyper.alpha_s_zero) /
                          (n + hyper.alpha_s_zero + hyper.alpha_s_nonzero);
    if (rng.uniform() < p_zero) {
      col[n] = 0;
      zeros += 1.0;
    } else {
      col[n] = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(grid.levels() - 1));
    }
  }
  return col;
}

}  // namespace

void ChainConfig::validate() const {
  require(n_iter >= 1, "chain: n_iter must be >= 1");
  require(burn_in >= 0 && burn_in < n_iter, "chain: burn_in must satisfy 0 <= burn_in < n_iter");
  require(thin >= 1, "chain: thin must be >= 1");
  require(merge_every >= 0, "chain: merge_every must be >= 0");
  require(std::isfinite(mh_concentration) && mh_concentration > 0.0,
          "chain: MH concentration must be > 0");
  require(max_features >= 0, "chain: max_features must be >= 0");
}

double gamma_walk_log_hastings(double current, double proposed, double concentration) {
  const double c = concentration;
  return log_density(dist::Gamma{c, c / proposed}, current) -
         log_density(dist::Gamma{c, c / current}, proposed);
}

bool gamma_walk_step(double& value, double concentration,
                     const std::function<double(double)>& log_target, RandomSource& rng,
                     MoveStats& stats) {
  const double proposed = sample(dist::Gamma{concentration, concentration / value}, rng);
  ++stats.proposed;
  if (!(proposed > 0.0) || !std::isfinite(proposed)) return false;
  const double log_r = log_target(proposed) - log_target(value) +
                       gamma_walk_log_hastings(value, proposed, concentration);
  if (std::log(rng.uniform()) < log_r) {
    value = proposed;
    ++stats.accepted;
    return true;
  }
  return false;
}

void sample_noise_variance(LatentState& state, const ObservationSet& data,
                           const SubstateGrid& grid, RandomSource& rng) {
  const double rss = residuals(state, data, grid).squaredNorm();
  const double n = static_cast<double>(data.size()) * data.dim();
  state.sigma_z2 =
      sample(dist::InverseGamma{state.alpha_sigma + 0.5 * n, state.beta_sigma + 0.5 * rss}, rng);
}

void sample_noise_hyperparams(LatentState& state, const Hyperparameters& hyper,
                              double concentration, RandomSource& rng, AcceptStats& stats) {
  const double s2 = state.sigma_z2;
  gamma_walk_step(
      state.alpha_sigma, concentration,
      [&](double a) {
        return log_density(dist::Gamma{hyper.h1_alpha_sigma, hyper.h2_alpha_sigma}, a) +
               log_density(dist::InverseGamma{a, state.beta_sigma}, s2);
      },
      rng, stats.alpha_sigma);
  gamma_walk_step(
      state.beta_sigma, concentration,
      [&](double b) {
        return log_density(dist::Gamma{hyper.h1_beta_sigma, hyper.h2_beta_sigma}, b) +
               log_density(dist::InverseGamma{state.alpha_sigma, b}, s2);
      },
      rng, stats.beta_sigma);
}

std::vector<double> substate_log_conditional(const LatentState& state, const ObservationSet& data,
                                             const SubstateGrid& grid,
                                             const Hyperparameters& hyper, int n, int k) {
  const Eigen::MatrixXd f = state.features();
  const double s_old = grid.value(state.levels(n, k));
  Eigen::RowVectorXd e = data.Z.row(n) - state.substates(grid).row(n) * f;
  e += s_old * f.row(k);
  RowMixture rm = row_mixture(state, grid, n);
  rm.mix -= s_old * state.policies.row(k).transpose();
  rm.total -= s_old * state.policies.row(k).sum();
  const int u = data.actions[static_cast<std::size_t>(n)];

  const double zeros_all = static_cast<double>((state.levels.col(k).array() == 0).count());
  SiteContext ctx{};
  ctx.b = e.dot(f.row(k));
  ctx.c = f.row(k).squaredNorm();
  if (rm.total < 1e-12) {
    rm.total = 0.0;
    rm.mix.setZero();
  }
  ctx.total = rm.total;
  ctx.mix_u = rm.mix[u];
  ctx.uniform = 1.0 / state.num_actions();
  ctx.phi_ku = state.policies(k, u);
  ctx.phi_k_sum = state.policies.row(k).sum();
  ctx.zeros = zeros_all - (state.levels(n, k) == 0 ? 1.0 : 0.0);
  ctx.nonzeros = static_cast<double>(state.num_observations() - 1) - ctx.zeros;

  std::vector<double> out;
  site_log_masses(ctx, grid, state.sigma_z2, action_weight(hyper, data.dim()), hyper, out);
  return out;
}

void sample_substates(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                      const Hyperparameters& hyper, RandomSource& rng) {
  const int n_obs = state.num_observations();
  const int n_feat = state.num_features();
  if (n_feat == 0) return;
  const Eigen::MatrixXd f = state.features();
  const Eigen::VectorXd c = f.rowwise().squaredNorm();
  const Eigen::VectorXd phi_sum = state.policies.rowwise().sum();
  const double act_weight = action_weight(hyper, data.dim());
  const double inv_l = 1.0 / static_cast<double>(grid.levels() - 1);

  std::vector<double> zeros(static_cast<std::size_t>(n_feat));
  for (int k = 0; k < n_feat; ++k)
    zeros[static_cast<std::size_t>(k)] =
        static_cast<double>((state.levels.col(k).array() == 0).count());

  std::vector<double> masses;
  for (int n = 0; n < n_obs; ++n) {
    const int u = data.actions[static_cast<std::size_t>(n)];
    Eigen::RowVectorXd e = data.Z.row(n) - state.substates(grid).row(n) * f;
    RowMixture rm = row_mixture(state, grid, n);
    for (int k = 0; k < n_feat; ++k) {
      const int l_old = state.levels(n, k);
      const double s_old = l_old * inv_l;
      auto& zk = zeros[static_cast<std::size_t>(k)];
      if (s_old != 0.0) {
        e += s_old * f.row(k);
        rm.mix -= s_old * state.policies.row(k).transpose();
        rm.total -= s_old * phi_sum[k];
      }
      if (l_old == 0) zk -= 1.0;
      // Round-off can leave a tiny positive total after removal.
      if (rm.total < 1e-12) {
        rm.total = 0.0;
        rm.mix.setZero();
      }

      SiteContext ctx{};
      ctx.b = e.dot(f.row(k));
      ctx.c = c[k];
      ctx.total = rm.total;
      ctx.mix_u = rm.mix[u];
      ctx.uniform = 1.0 / state.num_actions();
      ctx.phi_ku = state.policies(k, u);
      ctx.phi_k_sum = phi_sum[k];
      ctx.zeros = zk;
      ctx.nonzeros = static_cast<double>(n_obs - 1) - zk;
      site_log_masses(ctx, grid, state.sigma_z2, act_weight, hyper, masses);
      const int l_new = sample_log_categorical(masses, rng);

      state.levels(n, k) = l_new;
      const double s_new = l_new * inv_l;
      if (s_new != 0.0) {
        e -= s_new * f.row(k);
        rm.mix += s_new * state.policies.row(k).transpose();
        rm.total += s_new * phi_sum[k];
      }
      if (l_new == 0) zk += 1.0;
    }
  }
}

std::optional<WeightConditional> weight_conditional(const LatentState& state,
                                                    const ObservationSet& data,
                                                    const SubstateGrid& grid, int k, int d) {
  const Eigen::VectorXd s = state.substates(grid).col(k);
  const double ss = s.squaredNorm();
  if (ss == 0.0) return std::nullopt;
  Eigen::VectorXd r = residuals(state, data, grid).col(d);
  if (state.active(k, d) == 1) r += s * state.weights(k, d);
  const double precision = ss / state.sigma_z2;
  const double mean = (s.dot(r) / state.sigma_z2 - 1.0 / state.gamma_w) / precision;
  return WeightConditional{mean, 1.0 / precision};
}

void sample_weight_row(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                       int k, RandomSource& rng) {
  const Eigen::VectorXd s = state.substates(grid).col(k);
  const double ss = s.squaredNorm();
  const dist::Exponential prior{state.gamma_w};
  if (ss == 0.0) {
    for (int d = 0; d < state.dim(); ++d) state.weights(k, d) = sample(prior, rng);
    return;
  }
  const double precision = ss / state.sigma_z2;
  Eigen::MatrixXd r = residuals(state, data, grid);
  for (int d = 0; d < state.dim(); ++d) {
    if (state.active(k, d) == 0) {
      state.weights(k, d) = sample(prior, rng);
      continue;
    }
    const double proj = s.dot(r.col(d)) + ss * state.weights(k, d);
    const double mean = (proj / state.sigma_z2 - 1.0 / state.gamma_w) / precision;
    state.weights(k, d) = sample_truncated_normal(mean, 1.0 / precision, rng);
  }
}

void sample_gamma_w(LatentState& state, const Hyperparameters& hyper, RandomSource& rng) {
  const double n = static_cast<double>(state.weights.size());
  state.gamma_w =
      sample(dist::InverseGamma{hyper.alpha_gamma + n, hyper.beta_gamma + state.weights.sum()}, rng);
}

namespace {

// log P(a=1) - log P(a=0) for element (k, d), given the column residual with
// feature k's contribution at d removed.
double activation_log_odds(const LatentState& state, const Eigen::VectorXd& s,
                           const Eigen::Ref<const Eigen::VectorXd>& r_excl, int k, int d) {
  const int m = state.active.row(k).sum() - state.active(k, d);
  if (m == 0) return kNegInf;
  const double w = state.weights(k, d);
  const double lr = (2.0 * w * s.dot(r_excl) - w * w * s.squaredNorm()) / (2.0 * state.sigma_z2);
  const double dim = static_cast<double>(state.dim());
  return lr + std::log(static_cast<double>(m)) - std::log(dim + state.beta_a - 1.0 - m);
}

double odds_to_probability(double log_odds) {
  if (log_odds == kNegInf) return 0.0;
  if (log_odds >= 0.0) return 1.0 / (1.0 + std::exp(-log_odds));
  const double e = std::exp(log_odds);
  return e / (1.0 + e);
}

}  // namespace

double activation_probability(const LatentState& state, const ObservationSet& data,
                              const SubstateGrid& grid, int k, int d) {
  const Eigen::VectorXd s = state.substates(grid).col(k);
  Eigen::VectorXd r = residuals(state, data, grid).col(d);
  if (state.active(k, d) == 1) r += s * state.weights(k, d);
  return odds_to_probability(activation_log_odds(state, s, r, k, d));
}

void sample_activation(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                       int k, int d, RandomSource& rng) {
  const double p = activation_probability(state, data, grid, k, d);
  state.active(k, d) = rng.uniform() < p ? 1 : 0;
}

void sample_activations(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                        RandomSource& rng) {
  if (state.num_features() == 0) return;
  const Eigen::MatrixXd svals = state.substates(grid);
  Eigen::MatrixXd r = residuals(state, data, grid);
  for (int k = 0; k < state.num_features(); ++k) {
    const Eigen::VectorXd s = svals.col(k);
    for (int d = 0; d < state.dim(); ++d) {
      const int a_old = state.active(k, d);
      const int m_row = state.active.row(k).sum();
      if (a_old == 1 && m_row == 1) continue;  // singleton: handled by births
      const double w = state.weights(k, d);
      if (a_old == 1) r.col(d) += s * w;
      const double p = odds_to_probability(activation_log_odds(state, s, r.col(d), k, d));
      const int a_new = rng.uniform() < p ? 1 : 0;
      state.active(k, d) = a_new;
      if (a_new == 1) r.col(d) -= s * w;
    }
  }
}

double new_feature_rate(double alpha_a, double beta_a, int dim) {
  return alpha_a * beta_a / (beta_a + dim - 1.0);
}

FeatureDraw draw_feature_parameters(const LatentState& state, const SubstateGrid& grid,
                                    const Hyperparameters& hyper, RandomSource& rng) {
  FeatureDraw out;
  out.weights.resize(state.dim());
  const dist::Exponential prior{state.gamma_w};
  for (int d = 0; d < state.dim(); ++d) out.weights[d] = sample(prior, rng);
  out.levels = draw_substate_column(state.num_observations(), grid, hyper, rng);
  out.policy = sample(dist::Dirichlet{Eigen::VectorXd::Constant(state.num_actions(),
                                                                state.alpha_phi)},
                      rng)
                   .transpose();
  return out;
}

void propose_new_features(LatentState& state, const ObservationSet& data,
                          const SubstateGrid& grid, const Hyperparameters& hyper,
                          const ChainConfig& config, RandomSource& rng, AcceptStats& stats) {
  const int dim = state.dim();
  const int n_obs = state.num_observations();
  const double lambda = new_feature_rate(state.alpha_a, state.beta_a, dim);
  const double act_weight = action_weight(hyper, dim);
  const double p_plus = hyper.p_plus;
  auto log_q = [&](int kappa) {
    const double pois = (1.0 - p_plus) * std::exp(log_pmf_poisson(kappa, lambda));
    return std::log(pois + (kappa == 1 ? p_plus : 0.0));
  };

  for (int d = 0; d < dim; ++d) {
    const int n_feat = state.num_features();
    std::vector<int> singletons;
    std::vector<int> keep;
    for (int k = 0; k < n_feat; ++k) {
      if (state.active(k, d) == 1 && state.active.row(k).sum() == 1)
        singletons.push_back(k);
      else
        keep.push_back(k);
    }
    const int kappa = static_cast<int>(singletons.size());
    const int kappa_new =
        rng.uniform() < p_plus ? 1 : sample(dist::Poisson{lambda}, rng);
    if (kappa == 0 && kappa_new == 0) continue;
    ++stats.births.proposed;
    if (config.max_features > 0 && n_feat - kappa + kappa_new > config.max_features) continue;

    // Column-d residual and action mixture with the singletons removed.
    const Eigen::MatrixXd svals = state.substates(grid);
    Eigen::VectorXd base_col = data.Z.col(d);
    Eigen::MatrixXd base_mix = Eigen::MatrixXd::Zero(n_obs, state.num_actions());
    Eigen::VectorXd base_total = Eigen::VectorXd::Zero(n_obs);
    for (int k : keep) {
      if (state.active(k, d) == 1) base_col -= svals.col(k) * state.weights(k, d);
      base_mix += svals.col(k) * state.policies.row(k);
      base_total += svals.col(k) * state.policies.row(k).sum();
    }

    // Newborn column-d weights come from their conditional given the base
    // residual rather than the prior; the prior/proposal ratio enters the
    // acceptance for births and, symmetrically, for the singletons removed.
    double log_r = 0.0;
    std::vector<FeatureDraw> fresh;
    fresh.reserve(static_cast<std::size_t>(kappa_new));
    for (int i = 0; i < kappa_new; ++i) {
      FeatureDraw fd = draw_feature_parameters(state, grid, hyper, rng);
      const Eigen::VectorXd s = fd.levels.cast<double>() / (grid.levels() - 1.0);
      const auto c = singleton_weight_conditional(s, base_col, state.sigma_z2, state.gamma_w);
      if (c) fd.weights[d] = sample_truncated_normal(c->mean, c->variance, rng);
      log_r += weight_proposal_correction(fd.weights[d], c, state.gamma_w);
      fresh.push_back(std::move(fd));
    }
    for (int k : singletons) {
      const auto c =
          singleton_weight_conditional(svals.col(k), base_col, state.sigma_z2, state.gamma_w);
      log_r -= weight_proposal_correction(state.weights(k, d), c, state.gamma_w);
    }
    for (int n = 0; n < n_obs; ++n) {
      const int u = data.actions[static_cast<std::size_t>(n)];
      double c_old = 0.0;
      double mix_old = base_mix(n, u);
      double tot_old = base_total[n];
      for (int k : singletons) {
        const double s = svals(n, k);
        c_old += s * state.weights(k, d);
        mix_old += s * state.policies(k, u);
        tot_old += s * state.policies.row(k).sum();
      }
      double c_new = 0.0;
      double mix_new = base_mix(n, u);
      double tot_new = base_total[n];
      for (const auto& fd : fresh) {
        const double s = grid.value(fd.levels[n]);
        c_new += s * fd.weights[d];
        mix_new += s * fd.policy[u];
        tot_new += s * fd.policy.sum();
      }
      const double r = base_col[n];
      log_r += ((r - c_old) * (r - c_old) - (r - c_new) * (r - c_new)) / (2.0 * state.sigma_z2);
      const double n_u = static_cast<double>(state.num_actions());
      const double p_old = tot_old > 1e-12 ? mix_old / tot_old : 1.0 / n_u;
      const double p_new = tot_new > 1e-12 ? mix_new / tot_new : 1.0 / n_u;
      log_r += act_weight * (safe_log(p_new) - safe_log(p_old));
    }
    log_r += log_pmf_poisson(kappa_new, lambda) - log_pmf_poisson(kappa, lambda) + log_q(kappa) -
             log_q(kappa_new);

    if (!(std::log(rng.uniform()) < log_r)) continue;
    ++stats.births.accepted;
    state.select_features(keep);
    const int base = state.num_features();
    const int total = base + kappa_new;
    state.weights.conservativeResize(total, Eigen::NoChange);
    state.active.conservativeResize(total, Eigen::NoChange);
    state.levels.conservativeResize(Eigen::NoChange, total);
    state.policies.conservativeResize(total, Eigen::NoChange);
    for (int i = 0; i < kappa_new; ++i) {
      const auto& fd = fresh[static_cast<std::size_t>(i)];
      state.weights.row(base + i) = fd.weights;
      state.active.row(base + i).setZero();
      state.active(base + i, d) = 1;
      state.levels.col(base + i) = fd.levels;
      state.policies.row(base + i) = fd.policy;
    }
    // The move acts on the unordered feature set. Newborns go to uniformly
    // random positions so the ordering stays exchangeable; the index-ordered
    // sweeps elsewhere are only invariant for exchangeable orderings.
    if (kappa_new > 0) {
      std::vector<int> order(static_cast<std::size_t>(base));
      std::iota(order.begin(), order.end(), 0);
      for (int i = 0; i < kappa_new; ++i) {
        const auto slot = static_cast<std::ptrdiff_t>(rng.next_u64() % (order.size() + 1));
        order.insert(order.begin() + slot, base + i);
      }
      state.select_features(order);
    }
  }
}

void sample_ibp_hyperparams(LatentState& state, const Hyperparameters& hyper,
                            double concentration, RandomSource& rng, AcceptStats& stats) {
  const int dim = state.dim();
  const double k_plus = count_active_rows(state.active);
  state.alpha_a = sample(
      dist::Gamma{hyper.h1_alpha_a + k_plus, hyper.h2_alpha_a + ibp_harmonic(dim, state.beta_a)},
      rng);
  gamma_walk_step(
      state.beta_a, concentration,
      [&](double b) {
        return log_density(dist::Gamma{hyper.h1_beta_a, hyper.h2_beta_a}, b) +
               log_ibp_prior(state.active, state.alpha_a, b);
      },
      rng, stats.beta_a);
}

Eigen::MatrixXd policy_indicator_counts(const LatentState& state, const ObservationSet& data,
                                        const SubstateGrid& grid, int draws, RandomSource& rng) {
  const int n_feat = state.num_features();
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_feat, state.num_actions());
  if (n_feat == 0) return counts;
  const Eigen::MatrixXd svals = state.substates(grid);
  std::vector<double> w(static_cast<std::size_t>(n_feat));
  for (int n = 0; n < data.size(); ++n) {
    const int u = data.actions[static_cast<std::size_t>(n)];
    double total = 0.0;
    for (int k = 0; k < n_feat; ++k) {
      w[static_cast<std::size_t>(k)] = svals(n, k) * state.policies(k, u);
      total += w[static_cast<std::size_t>(k)];
    }
    if (!(total > 0.0)) continue;
    for (auto& x : w) x /= total;
    const auto hits = sample_multinomial(draws, w, rng);
    for (int k = 0; k < n_feat; ++k) counts(k, u) += hits[static_cast<std::size_t>(k)];
  }
  return counts / static_cast<double>(draws);
}

void sample_policies(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                     const Hyperparameters& hyper, double concentration, RandomSource& rng,
                     AcceptStats& stats) {
  const Eigen::MatrixXd counts = policy_indicator_counts(state, data, grid, hyper.n_t, rng);
  for (int k = 0; k < state.num_features(); ++k) {
    const Eigen::VectorXd conc = counts.row(k).transpose().array() + state.alpha_phi;
    state.policies.row(k) = sample(dist::Dirichlet{conc}, rng).transpose();
  }
  gamma_walk_step(
      state.alpha_phi, concentration,
      [&](double a) {
        return log_density(dist::Gamma{hyper.h1_phi, hyper.h2_phi}, a) +
               log_policy_prior(state.policies, a);
      },
      rng, stats.alpha_phi);
}

double feature_correlation(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                           const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  if (a == b) return 1.0;
  const Eigen::RowVectorXd ca = a.array() - a.mean();
  const Eigen::RowVectorXd cb = b.array() - b.mean();
  const double va = ca.squaredNorm();
  const double vb = cb.squaredNorm();
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return ca.dot(cb) / std::sqrt(va * vb);
}

int prune_dead_features(LatentState& state) {
  std::vector<int> keep;
  for (int k = 0; k < state.num_features(); ++k)
    if (state.active.row(k).sum() > 0 && (state.levels.col(k).array() != 0).any())
      keep.push_back(k);
  const int removed = state.num_features() - static_cast<int>(keep.size());
  if (removed > 0) state.select_features(keep);
  return removed;
}

int merge_similar_features(LatentState& state, const SubstateGrid& grid,
                           const Hyperparameters& hyper) {
  int merges = 0;
  const int top = grid.levels() - 1;
  for (;;) {
    const int n_feat = state.num_features();
    const Eigen::MatrixXd f = state.features();
    double best = hyper.t_corr;
    int bi = -1;
    int bj = -1;
    for (int i = 0; i < n_feat; ++i)
      for (int j = i + 1; j < n_feat; ++j) {
        const double rho = feature_correlation(f.row(i), f.row(j));
        if (rho > best) {
          best = rho;
          bi = i;
          bj = j;
        }
      }
    if (bi < 0) break;
    for (int d = 0; d < state.dim(); ++d) {
      const int ai = state.active(bi, d);
      const int aj = state.active(bj, d);
      if (ai == 1 && aj == 1)
        state.weights(bi, d) = 0.5 * (state.weights(bi, d) + state.weights(bj, d));
      else if (aj == 1)
        state.weights(bi, d) = state.weights(bj, d);
      state.active(bi, d) = ai | aj;
    }
    Eigen::RowVectorXd phi = 0.5 * (state.policies.row(bi) + state.policies.row(bj));
    state.policies.row(bi) = phi / phi.sum();
    for (int n = 0; n < state.num_observations(); ++n)
      state.levels(n, bi) = std::min(top, state.levels(n, bi) + state.levels(n, bj));
    state.remove_feature(bj);
    ++merges;
  }
  prune_dead_features(state);
  return merges;
}

LatentState initial_state(const ObservationSet& data, const SubstateGrid& grid,
                          const Hyperparameters& hyper, RandomSource& rng) {
  LatentState s;
  const int dim = data.dim();
  s.alpha_sigma = sample(dist::Gamma{hyper.h1_alpha_sigma, hyper.h2_alpha_sigma}, rng);
  s.beta_sigma = sample(dist::Gamma{hyper.h1_beta_sigma, hyper.h2_beta_sigma}, rng);
  s.sigma_z2 = sample(dist::InverseGamma{s.alpha_sigma, s.beta_sigma}, rng);
  s.gamma_w = sample(dist::InverseGamma{hyper.alpha_gamma, hyper.beta_gamma}, rng);
  s.alpha_a = sample(dist::Gamma{hyper.h1_alpha_a, hyper.h2_alpha_a}, rng);
  s.beta_a = sample(dist::Gamma{hyper.h1_beta_a, hyper.h2_beta_a}, rng);
  s.alpha_phi = sample(dist::Gamma{hyper.h1_phi, hyper.h2_phi}, rng);

  s.weights.resize(0, dim);
  s.active.resize(0, dim);
  s.levels.resize(data.size(), 0);
  s.policies.resize(0, data.num_actions);
  const FeatureDraw fd = draw_feature_parameters(s, grid, hyper, rng);

  // Activation row of a single dish: a uniformly chosen first column, then
  // the remaining columns in random order through the IBP urn.
  Eigen::RowVectorXi row = Eigen::RowVectorXi::Zero(dim);
  std::vector<int> order(static_cast<std::size_t>(dim));
  for (int d = 0; d < dim; ++d) order[static_cast<std::size_t>(d)] = d;
  std::shuffle(order.begin(), order.end(), rng.engine());
  row[order[0]] = 1;
  int m = 1;
  for (int i = 1; i < dim; ++i) {
    if (rng.uniform() < m / (s.beta_a + i)) {
      row[order[static_cast<std::size_t>(i)]] = 1;
      ++m;
    }
  }

  s.weights = fd.weights;
  s.active = row;
  s.levels = fd.levels;
  s.policies = fd.policy;
  return s;
}

void gibbs_sweep(LatentState& state, const ObservationSet& data, const SubstateGrid& grid,
                 const Hyperparameters& hyper, const ChainConfig& config, int sweep,
                 RandomSource& rng, AcceptStats& stats) {
  sample_substates(state, data, grid, hyper, rng);
  for (int k = 0; k < state.num_features(); ++k) sample_weight_row(state, data, grid, k, rng);
  sample_gamma_w(state, hyper, rng);
  sample_activations(state, data, grid, rng);
  propose_new_features(state, data, grid, hyper, config, rng, stats);
  sample_ibp_hyperparams(state, hyper, config.mh_concentration, rng, stats);
  sample_noise_variance(state, data, grid, rng);
  sample_noise_hyperparams(state, hyper, config.mh_concentration, rng, stats);
  sample_policies(state, data, grid, hyper, config.mh_concentration, rng, stats);
  if (config.merge_every > 0 && (sweep + 1) % config.merge_every == 0)
    merge_similar_features(state, grid, hyper);
}

}  // namespace fpl
