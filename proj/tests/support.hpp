#pragma once

// Shared oracles and fixtures for the unit and acceptance tests.

#include <cmath>
#include <numeric>
#include <vector>

#include "fpl/gibbs.hpp"

namespace fpl::testing {

inline std::vector<double> normalize_log(const std::vector<double>& logw) {
  double m = -INFINITY;
  for (double v : logw) m = std::max(m, v);
  std::vector<double> p(logw.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) z += p[i] = std::exp(logw[i] - m);
  for (double& v : p) v /= z;
  return p;
}

inline double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
  return 0.5 * d;
}

inline std::vector<double> frequencies(const std::vector<int>& counts) {
  const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
  std::vector<double> f;
  for (int c : counts) f.push_back(c / n);
  return f;
}

/// Fixed micro problem: N_z=3, D=2, K=1, L=3, N_u=3, hand-picked values.
struct Micro {
  ObservationSet data;
  LatentState state;
  Hyperparameters hyper;
  SubstateGrid grid{3};
};

inline Micro micro_problem() {
  Micro m;
  m.hyper.L = 3;
  m.data.Z.resize(3, 2);
  m.data.Z << 0.9, 0.1, 0.4, 0.05, 0.0, -0.1;
  m.data.actions = {0, 2, 1};
  m.data.num_actions = 3;
  LatentState& s = m.state;
  s.weights.resize(1, 2);
  s.weights << 0.8, 0.3;
  s.active.resize(1, 2);
  s.active << 1, 1;
  s.levels.resize(3, 1);
  s.levels << 2, 1, 0;
  s.policies.resize(1, 3);
  s.policies << 0.6, 0.1, 0.3;
  s.sigma_z2 = 0.05;
  s.gamma_w = 0.7;
  s.alpha_a = 1.3;
  s.beta_a = 0.8;
  s.alpha_sigma = 3.0;
  s.beta_sigma = 0.2;
  s.alpha_phi = 1.5;
  return m;
}

/// Hyperparameters of the joint-distribution check: all hyperpriors proper
/// with finite means, N_t=1 so the policy update is exact.
inline Hyperparameters geweke_hyper() {
  Hyperparameters h;
  h.h1_alpha_sigma = 100.0;
  h.h2_alpha_sigma = 10.0;
  h.h1_beta_sigma = 2.0;
  h.h2_beta_sigma = 2.0;
  h.h1_alpha_a = 2.0;
  h.h2_alpha_a = 2.0;
  h.h1_beta_a = 2.0;
  h.h2_beta_a = 2.0;
  h.alpha_gamma = 6.0;
  h.beta_gamma = 5.0;
  h.h1_phi = 2.0;
  h.h2_phi = 2.0;
  h.p_plus = 0.2;
  h.L = 3;
  h.n_t = 1;
  return h;
}

/// Redraws observations and actions from the likelihood given the state.
inline void draw_data(const LatentState& s, const SubstateGrid& grid, RandomSource& rng,
                      ObservationSet& data) {
  const Eigen::MatrixXd x = s.reconstruction(grid);
  const Eigen::MatrixXd sv = s.substates(grid);
  const double sd = std::sqrt(s.sigma_z2);
  data.Z.resize(x.rows(), x.cols());
  data.actions.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    for (Eigen::Index d = 0; d < x.cols(); ++d) data.Z(n, d) = x(n, d) + sd * rng.standard_normal();
    Eigen::VectorXd p = action_probabilities(sv.row(n).transpose(), s.policies);
    data.actions[static_cast<std::size_t>(n)] = sample(dist::Categorical{p / p.sum()}, rng);
  }
}

/// Forward draw of (state, data) from the prior and likelihood: IBP by the
/// sequential buffet process with columns as customers, rejecting draws with
/// more than max_k features.
inline LatentState forward_state(const Hyperparameters& h, int n_z, int dim, int n_u, int max_k,
                                 const SubstateGrid& grid, RandomSource& rng) {
  for (;;) {
    LatentState s;
    s.alpha_sigma = sample(dist::Gamma{h.h1_alpha_sigma, h.h2_alpha_sigma}, rng);
    s.beta_sigma = sample(dist::Gamma{h.h1_beta_sigma, h.h2_beta_sigma}, rng);
    s.sigma_z2 = sample(dist::InverseGamma{s.alpha_sigma, s.beta_sigma}, rng);
    s.gamma_w = sample(dist::InverseGamma{h.alpha_gamma, h.beta_gamma}, rng);
    s.alpha_a = sample(dist::Gamma{h.h1_alpha_a, h.h2_alpha_a}, rng);
    s.beta_a = sample(dist::Gamma{h.h1_beta_a, h.h2_beta_a}, rng);
    s.alpha_phi = sample(dist::Gamma{h.h1_phi, h.h2_phi}, rng);

    std::vector<std::vector<int>> rows;
    std::vector<int> m;
    for (int d = 0; d < dim; ++d) {
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const int take = rng.uniform() < m[k] / (s.beta_a + d) ? 1 : 0;
        rows[k][static_cast<std::size_t>(d)] = take;
        m[k] += take;
      }
      const int fresh = sample(dist::Poisson{s.alpha_a * s.beta_a / (s.beta_a + d)}, rng);
      for (int i = 0; i < fresh; ++i) {
        rows.emplace_back(static_cast<std::size_t>(dim), 0);
        rows.back()[static_cast<std::size_t>(d)] = 1;
        m.push_back(1);
      }
    }
    const int k = static_cast<int>(rows.size());
    if (k > max_k) continue;

    s.active.resize(k, dim);
    s.weights.resize(k, dim);
    s.levels.resize(n_z, k);
    s.policies.resize(k, n_u);
    for (int r = 0; r < k; ++r) {
      for (int d = 0; d < dim; ++d) {
        s.active(r, d) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(d)];
        s.weights(r, d) = sample(dist::Exponential{s.gamma_w}, rng);
      }
      double zeros = 0.0;
      for (int n = 0; n < n_z; ++n) {
        const double p0 = (zeros + h.alpha_s_zero) / (n + h.alpha_s_zero + h.alpha_s_nonzero);
        if (rng.uniform() < p0) {
          s.levels(n, r) = 0;
          zeros += 1.0;
        } else {
          s.levels(n, r) = 1 + static_cast<int>(rng.next_u64() % (grid.levels() - 1));
        }
      }
      s.policies.row(r) =
          sample(dist::Dirichlet{Eigen::VectorXd::Constant(n_u, s.alpha_phi)}, rng).transpose();
    }
    return s;
  }
}

struct GewekeStats {
  double sigma_z2;
  double gamma_w;
  double active;
};

inline GewekeStats geweke_stats(const LatentState& s) {
  return {s.sigma_z2, s.gamma_w, static_cast<double>(s.active.sum())};
}

struct MeanSe {
  double mean;
  double se;
};

inline MeanSe iid_mean_se(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

/// Standard error from non-overlapping batch means (for correlated chains).
inline MeanSe batch_mean_se(const std::vector<double>& x, int batches = 50) {
  const std::size_t size = x.size() / static_cast<std::size_t>(batches);
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < size; ++i) acc += x[static_cast<std::size_t>(b) * size + i];
    means.push_back(acc / static_cast<double>(size));
  }
  const MeanSe m = iid_mean_se(means);
  return {std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size()), m.se};
}

struct GewekeResult {
  MeanSe forward[3];
  MeanSe gibbs[3];
  double z(int i) const {
    return (forward[i].mean - gibbs[i].mean) /
           std::sqrt(forward[i].se * forward[i].se + gibbs[i].se * gibbs[i].se);
  }
};

/// Marginal-conditional vs successive-conditional simulation on the micro
/// model (N_z=3, D=2, L=3, N_u=2, K at most 2). The successive chain keeps
/// every thin-th state.
inline GewekeResult run_geweke(int samples, std::uint64_t seed, int thin = 1) {
  constexpr int n_z = 3, dim = 2, n_u = 2, max_k = 2;
  const Hyperparameters h = geweke_hyper();
  const SubstateGrid grid(h.L);
  ChainConfig cfg;
  cfg.merge_every = 0;
  cfg.max_features = max_k;
  RandomSource rng(seed);

  std::vector<double> fwd[3], gib[3];
  for (int i = 0; i < samples; ++i) {
    const GewekeStats g = geweke_stats(forward_state(h, n_z, dim, n_u, max_k, grid, rng));
    fwd[0].push_back(g.sigma_z2);
    fwd[1].push_back(g.gamma_w);
    fwd[2].push_back(g.active);
  }

  LatentState s = forward_state(h, n_z, dim, n_u, max_k, grid, rng);
  ObservationSet data;
  data.num_actions = n_u;
  draw_data(s, grid, rng, data);
  AcceptStats stats;
  for (int i = 0; i < samples; ++i) {
    for (int t = 0; t < thin; ++t) {
      gibbs_sweep(s, data, grid, h, cfg, i, rng, stats);
      draw_data(s, grid, rng, data);
    }
    const GewekeStats g = geweke_stats(s);
    gib[0].push_back(g.sigma_z2);
    gib[1].push_back(g.gamma_w);
    gib[2].push_back(g.active);
  }
  GewekeResult r{};
  for (int j = 0; j < 3; ++j) {
    r.forward[j] = iid_mean_se(fwd[j]);
    r.gibbs[j] = batch_mean_se(gib[j]);
  }
  return r;
}

}  // namespace fpl::testing
