#include <doctest.h>

#include <cmath>
#include <vector>

#include "fpl/gibbs.hpp"
#include "support.hpp"

using namespace fpl;
using namespace fpl::testing;

namespace {

// Exact conditional of one substate site by enumerating the joint posterior.
std::vector<double> enumerate_substate(Micro m, int n, int k) {
  std::vector<double> logp;
  for (int l = 0; l < m.grid.levels(); ++l) {
    m.state.levels(n, k) = l;
    logp.push_back(log_joint_posterior(m.state, m.data, m.grid, m.hyper));
  }
  return normalize_log(logp);
}

double enumerate_activation(Micro m, int k, int d) {
  m.state.active(k, d) = 0;
  const double off = log_joint_posterior(m.state, m.data, m.grid, m.hyper);
  m.state.active(k, d) = 1;
  const double on = log_joint_posterior(m.state, m.data, m.grid, m.hyper);
  return normalize_log({off, on})[1];
}

Micro two_site_problem() {
  Micro m = micro_problem();
  m.data = m.data.slice(0, 2);
  m.state.levels = m.state.levels.topRows(2).eval();
  return m;
}

Micro two_feature_problem() {
  Micro m = micro_problem();
  LatentState& s = m.state;
  s.weights.conservativeResize(2, 2);
  s.weights.row(1) << 0.2, 1.1;
  s.active.conservativeResize(2, 2);
  s.active.row(1) << 1, 1;
  s.levels.conservativeResize(3, 2);
  s.levels.col(1) << 0, 2, 1;
  s.policies.conservativeResize(2, 3);
  s.policies.row(1) << 0.2, 0.5, 0.3;
  return m;
}

// 2-D midpoint quadrature of the posterior means of (x, y) under exp(logf).
std::pair<double, double> quadrature_means(const std::function<double(double, double)>& logf,
                                           double x_hi, double y_hi, int steps = 1500) {
  const double hx = x_hi / steps, hy = y_hi / steps;
  std::vector<double> vals(static_cast<std::size_t>(steps) * steps);
  double top = -INFINITY;
  for (int i = 0; i < steps; ++i)
    for (int j = 0; j < steps; ++j) {
      const double v = logf((i + 0.5) * hx, (j + 0.5) * hy);
      vals[static_cast<std::size_t>(i) * steps + j] = v;
      top = std::max(top, v);
    }
  double z = 0.0, mx = 0.0, my = 0.0;
  for (int i = 0; i < steps; ++i)
    for (int j = 0; j < steps; ++j) {
      const double w = std::exp(vals[static_cast<std::size_t>(i) * steps + j] - top);
      z += w;
      mx += w * (i + 0.5) * hx;
      my += w * (j + 0.5) * hy;
    }
  return {mx / z, my / z};
}

double truncated_mean(double mu, double s2) {
  const double sd = std::sqrt(s2);
  const double a = -mu / sd;
  const double pdf = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
  return mu + sd * pdf / (0.5 * std::erfc(a / std::sqrt(2.0)));
}

double truncated_var(double mu, double s2) {
  const double sd = std::sqrt(s2);
  const double a = -mu / sd;
  const double pdf = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
  const double lam = pdf / (0.5 * std::erfc(a / std::sqrt(2.0)));
  return s2 * (1.0 + a * lam - lam * lam);
}

LatentState single_feature(int n_z, int dim, int n_u) {
  LatentState s;
  s.weights = Eigen::MatrixXd::Ones(1, dim);
  s.active = Eigen::MatrixXi::Ones(1, dim);
  s.levels = Eigen::MatrixXi::Ones(n_z, 1);
  s.policies = Eigen::MatrixXd::Constant(1, n_u, 1.0 / n_u);
  return s;
}

}  // namespace

TEST_SUITE("gibbs") {
  TEST_CASE("substate conditional matches enumeration of the joint") {
    for (Micro m : {micro_problem(), two_feature_problem()}) {
      for (bool reweight : {false, true}) {
        m.hyper.reweight_actions = reweight;
        for (int n = 0; n < m.data.size(); ++n)
          for (int k = 0; k < m.state.num_features(); ++k) {
            const auto exact = enumerate_substate(m, n, k);
            const auto got =
                normalize_log(substate_log_conditional(m.state, m.data, m.grid, m.hyper, n, k));
            CHECK(tv_distance(exact, got) < 1e-9);
          }
      }
    }
  }

  TEST_CASE("substate draw frequencies match enumeration") {
    Micro m = two_site_problem();
    const auto exact = enumerate_substate(m, 0, 0);
    RandomSource rng(21);
    std::vector<int> counts(3, 0);
    for (int i = 0; i < 100000; ++i) {
      LatentState s = m.state;
      sample_substates(s, m.data, m.grid, m.hyper, rng);
      ++counts[static_cast<std::size_t>(s.levels(0, 0))];
    }
    CHECK(tv_distance(frequencies(counts), exact) <= 0.01);
  }

  TEST_CASE("substates: likelihood dominance on a binary grid") {
    const SubstateGrid grid(2);
    LatentState s = single_feature(1, 3, 2);
    s.weights << 1.0, 2.0, 0.5;
    s.levels(0, 0) = 0;
    s.sigma_z2 = 1e-4;
    ObservationSet data{s.weights, {0}, 2};
    Hyperparameters hyper;
    hyper.L = 2;
    RandomSource rng(22);
    int ones = 0;
    for (int i = 0; i < 10000; ++i) {
      LatentState t = s;
      sample_substates(t, data, grid, hyper, rng);
      ones += t.levels(0, 0);
    }
    CHECK(ones / 10000.0 >= 0.999);
  }

  TEST_CASE("substates: flat likelihood recovers the prior ratio") {
    const SubstateGrid grid(3);
    LatentState s = single_feature(4, 2, 3);
    s.levels.col(0) << 1, 0, 2, 1;
    s.sigma_z2 = 1e12;
    ObservationSet data{Eigen::MatrixXd::Zero(4, 2), {0, 1, 2, 0}, 3};
    Hyperparameters hyper;
    hyper.L = 3;
    // Others: one zero, two nonzero -> zero : each nonzero = 2 : 1.5.
    const std::vector<double> expected = {2.0 / 5.0, 1.5 / 5.0, 1.5 / 5.0};
    RandomSource rng(23);
    std::vector<int> counts(3, 0);
    for (int i = 0; i < 100000; ++i) {
      LatentState t = s;
      sample_substates(t, data, grid, hyper, rng);
      ++counts[static_cast<std::size_t>(t.levels(0, 0))];
    }
    CHECK(tv_distance(frequencies(counts), expected) < 0.01);
  }

  TEST_CASE("noise variance: zero residual draw") {
    const SubstateGrid grid(2);
    LatentState s = single_feature(1000, 3, 2);
    s.alpha_sigma = 1000.0;
    s.beta_sigma = 1.0;
    ObservationSet data{s.reconstruction(grid), std::vector<int>(1000, 0), 2};
    RandomSource rng(24);
    double acc = 0.0;
    for (int i = 0; i < 100000; ++i) {
      sample_noise_variance(s, data, grid, rng);
      acc += s.sigma_z2;
    }
    CHECK(acc / 1e5 == doctest::Approx(1.0 / 2499.0).epsilon(0.05));
  }

  TEST_CASE("noise variance: mean grows with the residual sum of squares") {
    const SubstateGrid grid(2);
    LatentState s = single_feature(50, 2, 2);
    s.alpha_sigma = 3.0;
    s.beta_sigma = 1.0;
    ObservationSet data{s.reconstruction(grid), std::vector<int>(50, 0), 2};
    data.Z.array() += 0.5;  // RSS = 25
    auto mean_draw = [&](std::uint64_t seed) {
      RandomSource rng(seed);
      double acc = 0.0;
      for (int i = 0; i < 100000; ++i) {
        sample_noise_variance(s, data, grid, rng);
        acc += s.sigma_z2;
      }
      return acc / 1e5;
    };
    const double small = mean_draw(25);
    CHECK(small == doctest::Approx((1.0 + 12.5) / (3.0 + 50.0 - 1.0)).epsilon(0.01));
    data.Z.array() += 0.5;  // RSS x4
    const double large = mean_draw(26);
    CHECK(large == doctest::Approx((1.0 + 50.0) / (3.0 + 50.0 - 1.0)).epsilon(0.01));
    CHECK(large > small);
  }

  TEST_CASE("gamma random walk: symmetric point and proposal ratio") {
    CHECK(gamma_walk_log_hastings(1.7, 1.7, 50.0) == doctest::Approx(0.0));
    // q(x|y) = Gamma(x; c, c/y); check against direct densities.
    const double x = 1.3, y = 2.1, c = 7.0;
    const double direct = log_density(dist::Gamma{c, c / y}, x) - log_density(dist::Gamma{c, c / x}, y);
    CHECK(gamma_walk_log_hastings(x, y, c) == doctest::Approx(direct));
  }

  TEST_CASE("noise hyperparameters: MH marginal means match quadrature") {
    Hyperparameters hyper;
    hyper.h1_alpha_sigma = 3.0;
    hyper.h2_alpha_sigma = 1.0;
    hyper.h1_beta_sigma = 2.0;
    hyper.h2_beta_sigma = 2.0;
    LatentState s;
    s.sigma_z2 = 0.3;
    s.alpha_sigma = 3.0;
    s.beta_sigma = 1.0;
    const auto [qa, qb] = quadrature_means(
        [&](double a, double b) {
          return log_density(dist::Gamma{3.0, 1.0}, a) + log_density(dist::Gamma{2.0, 2.0}, b) +
                 log_density(dist::InverseGamma{a, b}, 0.3);
        },
        40.0, 20.0);
    RandomSource rng(27);
    AcceptStats stats;
    double sa = 0.0, sb = 0.0;
    const int n = 1'000'000;
    for (int i = 0; i < n; ++i) {
      sample_noise_hyperparams(s, hyper, 50.0, rng, stats);
      sa += s.alpha_sigma;
      sb += s.beta_sigma;
    }
    CHECK(sa / n == doctest::Approx(qa).epsilon(0.02));
    CHECK(sb / n == doctest::Approx(qb).epsilon(0.02));
    CHECK(stats.alpha_sigma.proposed == n);
  }

  TEST_CASE("noise hyperparameters: acceptance rises with concentration") {
    Hyperparameters hyper;
    auto rate = [&](double c) {
      LatentState s;
      s.sigma_z2 = 0.01;
      s.alpha_sigma = 1000.0;
      s.beta_sigma = 10.0;
      RandomSource rng(28);
      AcceptStats stats;
      for (int i = 0; i < 20000; ++i) sample_noise_hyperparams(s, hyper, c, rng, stats);
      return stats.alpha_sigma.rate();
    };
    const double low = rate(5.0), mid = rate(50.0), high = rate(500.0);
    CHECK(low < mid);
    CHECK(mid < high);
  }

  TEST_CASE("weights: vanishing prior shift recovers the observation") {
    const SubstateGrid grid(2);
    LatentState s = single_feature(1, 1, 2);
    s.sigma_z2 = 1.0;
    s.gamma_w = 1e12;
    ObservationSet data{Eigen::MatrixXd::Constant(1, 1, 2.5), {0}, 2};
    const auto c = weight_conditional(s, data, grid, 0, 0);
    REQUIRE(c.has_value());
    CHECK(c->mean == doctest::Approx(2.5).epsilon(1e-9));
    CHECK(c->variance == doctest::Approx(1.0));
  }

  TEST_CASE("weights: unused feature falls back to the prior") {
    const SubstateGrid grid(3);
    LatentState s = single_feature(5, 2, 2);
    s.levels.setZero();
    s.gamma_w = 0.4;
    ObservationSet data{Eigen::MatrixXd::Random(5, 2), std::vector<int>(5, 0), 2};
    CHECK_FALSE(weight_conditional(s, data, grid, 0, 0).has_value());
    RandomSource rng(29);
    double acc = 0.0;
    for (int i = 0; i < 100000; ++i) {
      sample_weight_row(s, data, grid, 0, rng);
      acc += s.weights(0, 1);
    }
    CHECK(acc / 1e5 == doctest::Approx(0.4).epsilon(0.02));
  }

  TEST_CASE("weights: conditional moments match a direct calculation") {
    Micro m = two_feature_problem();
    const int k = 0, d = 1;
    // Independent calculation of the truncated Gaussian conditional.
    double ss = 0.0, sr = 0.0;
    for (int n = 0; n < 3; ++n) {
      const double sk = m.state.levels(n, k) / 2.0;
      double other = 0.0;
      for (int j = 0; j < 2; ++j)
        if (j != k) other += m.state.levels(n, j) / 2.0 * m.state.active(j, d) * m.state.weights(j, d);
      ss += sk * sk;
      sr += sk * (m.data.Z(n, d) - other);
    }
    const double prec = ss / m.state.sigma_z2;
    const double mu = (sr / m.state.sigma_z2 - 1.0 / m.state.gamma_w) / prec;
    const auto c = weight_conditional(m.state, m.data, m.grid, k, d);
    REQUIRE(c.has_value());
    CHECK(c->mean == doctest::Approx(mu).epsilon(1e-12));
    CHECK(c->variance == doctest::Approx(1.0 / prec).epsilon(1e-12));

    RandomSource rng(30);
    double s1 = 0.0, s2 = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      sample_weight_row(m.state, m.data, m.grid, k, rng);
      const double w = m.state.weights(k, d);
      s1 += w;
      s2 += w * w;
    }
    const double mean = s1 / n;
    CHECK(mean == doctest::Approx(truncated_mean(mu, 1.0 / prec)).epsilon(0.02));
    CHECK(s2 / n - mean * mean == doctest::Approx(truncated_var(mu, 1.0 / prec)).epsilon(0.02));
  }

  TEST_CASE("weights: masked coordinates follow the prior") {
    Micro m = micro_problem();
    m.state.active(0, 1) = 0;
    RandomSource rng(31);
    double acc = 0.0;
    for (int i = 0; i < 100000; ++i) {
      sample_weight_row(m.state, m.data, m.grid, 0, rng);
      acc += m.state.weights(0, 1);
    }
    CHECK(acc / 1e5 == doctest::Approx(m.state.gamma_w).epsilon(0.02));
  }

  TEST_CASE("gamma_w: empty model draws from the prior") {
    Hyperparameters hyper;
    hyper.alpha_gamma = 6.0;
    hyper.beta_gamma = 5.0;
    LatentState s;
    s.weights.resize(0, 3);
    s.active.resize(0, 3);
    RandomSource rng(32);
    double acc = 0.0;
    for (int i = 0; i < 100000; ++i) {
      sample_gamma_w(s, hyper, rng);
      acc += s.gamma_w;
    }
    CHECK(acc / 1e5 == doctest::Approx(1.0).epsilon(0.02));
  }

  TEST_CASE("gamma_w: scale grows linearly with the weight sum") {
    Hyperparameters hyper;
    hyper.alpha_gamma = 6.0;
    hyper.beta_gamma = 5.0;
    LatentState s = single_feature(1, 2, 2);
    s.weights << 1.5, 2.5;  // sum 4, KD = 2
    auto mean_draw = [&](std::uint64_t seed) {
      RandomSource rng(seed);
      double acc = 0.0;
      for (int i = 0; i < 100000; ++i) {
        sample_gamma_w(s, hyper, rng);
        acc += s.gamma_w;
      }
      return acc / 1e5;
    };
    const double base = mean_draw(33);
    CHECK(base == doctest::Approx((5.0 + 4.0) / (6.0 + 2.0 - 1.0)).epsilon(0.02));
    s.weights *= 2.0;
    const double doubled = mean_draw(34);
    CHECK(doubled == doctest::Approx((5.0 + 8.0) / (6.0 + 2.0 - 1.0)).epsilon(0.02));
  }

  TEST_CASE("activation: empty row stays inactive") {
    Micro m = micro_problem();
    m.state.active << 0, 0;
    CHECK(activation_probability(m.state, m.data, m.grid, 0, 0) == 0.0);
    RandomSource rng(35);
    for (int i = 0; i < 100; ++i) {
      sample_activation(m.state, m.data, m.grid, 0, 1, rng);
      REQUIRE(m.state.active(0, 1) == 0);
    }
  }

  TEST_CASE("activation: flat likelihood gives the prior 2/5") {
    const SubstateGrid grid(3);
    LatentState s = single_feature(4, 5, 2);
    s.levels.setZero();
    s.beta_a = 1.0;
    s.active << 1, 1, 0, 0, 0;
    ObservationSet data{Eigen::MatrixXd::Random(4, 5), std::vector<int>(4, 1), 2};
    CHECK(activation_probability(s, data, grid, 0, 3) == doctest::Approx(0.4));
  }

  TEST_CASE("activation: frequencies match enumeration") {
    Micro m = two_feature_problem();
    for (auto [k, d] : {std::pair{0, 0}, std::pair{1, 1}}) {
      const double exact = enumerate_activation(m, k, d);
      CHECK(activation_probability(m.state, m.data, m.grid, k, d) ==
            doctest::Approx(exact).epsilon(1e-9));
      RandomSource rng(36 + static_cast<std::uint64_t>(k));
      int on = 0;
      for (int i = 0; i < 100000; ++i) {
        LatentState s = m.state;
        sample_activation(s, m.data, m.grid, k, d, rng);
        on += s.active(k, d);
      }
      const double f = on / 1e5;
      CHECK(tv_distance({1.0 - f, f}, {1.0 - exact, exact}) <= 0.01);
    }
  }

  TEST_CASE("activation scan leaves singletons alone") {
    Micro m = two_feature_problem();
    m.state.active << 1, 0, 0, 1;
    RandomSource rng(38);
    for (int i = 0; i < 1000; ++i) {
      sample_activations(m.state, m.data, m.grid, rng);
      REQUIRE(m.state.active.row(0).sum() >= 1);
      REQUIRE(m.state.active.row(1).sum() >= 1);
    }
  }

  TEST_CASE("new feature rate") {
    CHECK(new_feature_rate(1.0, 1.0, 1) == doctest::Approx(1.0));
    CHECK(new_feature_rate(2.0, 0.5, 4) == doctest::Approx(2.0 * 0.5 / 3.5));
  }

  TEST_CASE("births with all-zero substate columns leave the data likelihood unchanged") {
    Micro m = micro_problem();
    m.hyper.alpha_s_zero = 1e12;  // fresh substate columns are all zero
    m.hyper.p_plus = 0.5;
    const ChainConfig config;
    RandomSource rng(39);
    AcceptStats stats;
    const double before = log_obs_likelihood(m.state, m.data, m.grid) +
                          log_action_likelihood(m.state, m.data, m.grid, false);
    int grown = 0;
    for (int i = 0; i < 2000; ++i) {
      propose_new_features(m.state, m.data, m.grid, m.hyper, config, rng, stats);
      grown = std::max(grown, m.state.num_features());
      const double after = log_obs_likelihood(m.state, m.data, m.grid) +
                           log_action_likelihood(m.state, m.data, m.grid, false);
      REQUIRE(after == doctest::Approx(before).epsilon(1e-12));
    }
    CHECK(grown > 1);
    CHECK(stats.births.accepted > 0);
  }

  TEST_CASE("births respect the feature cap") {
    Micro m = micro_problem();
    m.state.alpha_a = 20.0;
    ChainConfig config;
    config.max_features = 3;
    RandomSource rng(40);
    AcceptStats stats;
    for (int i = 0; i < 500; ++i) {
      propose_new_features(m.state, m.data, m.grid, m.hyper, config, rng, stats);
      REQUIRE(m.state.num_features() <= 3);
    }
  }

  TEST_CASE("IBP hyperparameters: conjugate alpha draw") {
    Hyperparameters hyper;
    hyper.h1_alpha_a = 2.0;
    hyper.h2_alpha_a = 3.0;
    hyper.h1_beta_a = 1e9;  // pin beta_a near h1/h2 = 1
    hyper.h2_beta_a = 1e9;
    auto mean_alpha = [&](int k_plus) {
      LatentState s;
      s.active = Eigen::MatrixXi::Zero(3, 4);
      s.weights = Eigen::MatrixXd::Ones(3, 4);
      for (int k = 0; k < k_plus; ++k) s.active(k, k) = 1;
      s.beta_a = 1.0;
      RandomSource rng(41);
      AcceptStats stats;
      double acc = 0.0;
      for (int i = 0; i < 100000; ++i) {
        sample_ibp_hyperparams(s, hyper, 50.0, rng, stats);
        acc += s.alpha_a;
      }
      return acc / 1e5;
    };
    const double h = ibp_harmonic(4, 1.0);
    const double m0 = mean_alpha(0), m1 = mean_alpha(1), m3 = mean_alpha(3);
    CHECK(m0 == doctest::Approx(2.0 / (3.0 + h)).epsilon(0.02));
    CHECK(m3 == doctest::Approx(5.0 / (3.0 + h)).epsilon(0.02));
    CHECK(m0 < m1);
    CHECK(m1 < m3);
  }

  TEST_CASE("IBP hyperparameters: MH marginal means match quadrature") {
    Hyperparameters hyper;
    hyper.h1_alpha_a = 2.0;
    hyper.h2_alpha_a = 1.0;
    hyper.h1_beta_a = 2.0;
    hyper.h2_beta_a = 1.0;
    LatentState s;
    s.active.resize(2, 3);
    s.active << 1, 1, 0, 0, 0, 1;
    s.weights = Eigen::MatrixXd::Ones(2, 3);
    s.alpha_a = 1.0;
    s.beta_a = 1.0;
    const Eigen::MatrixXi act = s.active;
    const auto [qa, qb] = quadrature_means(
        [&](double a, double b) {
          return log_density(dist::Gamma{2.0, 1.0}, a) + log_density(dist::Gamma{2.0, 1.0}, b) +
                 log_ibp_prior(act, a, b);
        },
        30.0, 30.0);
    RandomSource rng(42);
    AcceptStats stats;
    double sa = 0.0, sb = 0.0;
    const int n = 1'000'000;
    for (int i = 0; i < n; ++i) {
      sample_ibp_hyperparams(s, hyper, 50.0, rng, stats);
      sa += s.alpha_a;
      sb += s.beta_a;
    }
    CHECK(sa / n == doctest::Approx(qa).epsilon(0.03));
    CHECK(sb / n == doctest::Approx(qb).epsilon(0.03));
  }

  TEST_CASE("policies: single feature counts the action histogram") {
    const SubstateGrid grid(3);
    LatentState s = single_feature(4, 1, 3);
    s.levels.col(0) << 1, 2, 2, 1;
    ObservationSet data{Eigen::MatrixXd::Zero(4, 1), {0, 0, 0, 2}, 3};
    RandomSource rng(43);
    const Eigen::MatrixXd counts = policy_indicator_counts(s, data, grid, 50, rng);
    CHECK(counts(0, 0) == doctest::Approx(3.0));
    CHECK(counts(0, 1) == doctest::Approx(0.0));
    CHECK(counts(0, 2) == doctest::Approx(1.0));

    Hyperparameters hyper;
    hyper.n_t = 10;
    AcceptStats stats;
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (int i = 0; i < 100000; ++i) {
      s.alpha_phi = 1.0;
      sample_policies(s, data, grid, hyper, 50.0, rng, stats);
      acc += s.policies.row(0).transpose();
    }
    acc /= 1e5;
    CHECK(std::abs(acc[0] - 4.0 / 7.0) < 0.01);
    CHECK(std::abs(acc[1] - 1.0 / 7.0) < 0.01);
    CHECK(std::abs(acc[2] - 2.0 / 7.0) < 0.01);
  }

  TEST_CASE("policies: zero-likelihood component never receives an indicator") {
    const SubstateGrid grid(3);
    LatentState s;
    s.weights = Eigen::MatrixXd::Ones(2, 1);
    s.active = Eigen::MatrixXi::Ones(2, 1);
    s.levels = Eigen::MatrixXi::Ones(1, 2);
    s.policies.resize(2, 2);
    s.policies << 1.0, 0.0, 0.0, 1.0;
    ObservationSet data{Eigen::MatrixXd::Zero(1, 1), {0}, 2};
    RandomSource rng(44);
    const Eigen::MatrixXd counts = policy_indicator_counts(s, data, grid, 1000, rng);
    CHECK(counts(0, 0) == doctest::Approx(1.0));
    CHECK(counts.row(1).sum() == 0.0);
  }

  TEST_CASE("policies: all-zero substate rows are skipped") {
    const SubstateGrid grid(3);
    LatentState s = single_feature(2, 1, 2);
    s.levels.col(0) << 0, 1;
    ObservationSet data{Eigen::MatrixXd::Zero(2, 1), {0, 1}, 2};
    RandomSource rng(45);
    const Eigen::MatrixXd counts = policy_indicator_counts(s, data, grid, 10, rng);
    CHECK(counts(0, 0) == 0.0);
    CHECK(counts(0, 1) == doctest::Approx(1.0));
  }

  TEST_CASE("merge: duplicate features collapse") {
    const SubstateGrid grid(100);
    Hyperparameters hyper;
    LatentState s;
    s.weights.resize(2, 3);
    s.weights << 1.0, 2.0, 3.0, 1.0, 2.0, 3.0;
    s.active = Eigen::MatrixXi::Ones(2, 3);
    s.levels.resize(2, 2);
    s.levels << 59, 69, 10, 0;  // 0.596 + 0.697 clips to 1
    s.policies.resize(2, 2);
    s.policies << 0.2, 0.8, 0.6, 0.4;
    CHECK(feature_correlation(s.weights.row(0), s.weights.row(1)) == 1.0);
    CHECK(merge_similar_features(s, grid, hyper) == 1);
    REQUIRE(s.num_features() == 1);
    CHECK(s.levels(0, 0) == 99);
    CHECK(grid.value(s.levels(0, 0)) == 1.0);
    CHECK(s.levels(1, 0) == 10);
    CHECK(s.policies(0, 0) == doctest::Approx(0.4));
    CHECK(s.weights.row(0) == Eigen::RowVector3d(1.0, 2.0, 3.0));
  }

  TEST_CASE("merge: uncorrelated features are untouched") {
    const SubstateGrid grid(3);
    Hyperparameters hyper;
    LatentState s;
    s.weights = Eigen::MatrixXd::Ones(2, 4);
    s.active.resize(2, 4);
    s.active << 1, 1, 0, 0, 1, 0, 1, 0;
    s.levels = Eigen::MatrixXi::Ones(3, 2);
    s.policies = Eigen::MatrixXd::Constant(2, 2, 0.5);
    CHECK(feature_correlation(s.features().row(0), s.features().row(1)) ==
          doctest::Approx(0.0));
    const LatentState before = s;
    CHECK(merge_similar_features(s, grid, hyper) == 0);
    CHECK(s == before);
  }

  TEST_CASE("merge: weight and activation rules") {
    const SubstateGrid grid(5);
    Hyperparameters hyper;
    hyper.t_corr = 0.5;
    LatentState s;
    s.weights.resize(2, 4);
    s.weights << 2.0, 4.0, 1.0, 7.0, 4.0, 6.0, 9.0, 1.0;
    s.active.resize(2, 4);
    s.active << 1, 1, 0, 0, 1, 1, 0, 1;
    s.levels.resize(1, 2);
    s.levels << 1, 1;
    s.policies.resize(2, 2);
    s.policies << 0.5, 0.5, 0.5, 0.5;
    REQUIRE(feature_correlation(s.features().row(0), s.features().row(1)) > 0.5);
    CHECK(merge_similar_features(s, grid, hyper) == 1);
    REQUIRE(s.num_features() == 1);
    CHECK(s.active.row(0) == Eigen::RowVector4i(1, 1, 0, 1));
    CHECK(s.weights(0, 0) == doctest::Approx(3.0));
    CHECK(s.weights(0, 1) == doctest::Approx(5.0));
    CHECK(s.weights(0, 3) == doctest::Approx(1.0));
    CHECK(s.levels(0, 0) == 2);
  }

  TEST_CASE("merge never increases K and leaves no dead rows") {
    RandomSource rng(46);
    const SubstateGrid grid(4);
    Hyperparameters hyper;
    hyper.t_corr = 0.3;
    for (int rep = 0; rep < 200; ++rep) {
      const int K = 1 + static_cast<int>(rng.next_u64() % 6);
      LatentState s;
      s.weights.resize(K, 5);
      s.active.resize(K, 5);
      s.levels.resize(6, K);
      s.policies.resize(K, 3);
      for (int k = 0; k < K; ++k) {
        for (int d = 0; d < 5; ++d) {
          s.weights(k, d) = 0.1 + rng.uniform();
          s.active(k, d) = rng.uniform() < 0.4;
        }
        for (int n = 0; n < 6; ++n) s.levels(n, k) = static_cast<int>(rng.next_u64() % 4);
        s.policies.row(k) = sample(dist::Dirichlet{Eigen::Vector3d::Ones()}, rng).transpose();
      }
      merge_similar_features(s, grid, hyper);
      CHECK(s.num_features() <= K);
      for (int k = 0; k < s.num_features(); ++k) {
        REQUIRE(s.active.row(k).sum() > 0);
        REQUIRE((s.levels.col(k).array() != 0).any());
      }
      CHECK_NOTHROW(s.check_invariants(grid));
    }
  }

  TEST_CASE("prune removes dead features") {
    Micro m = two_feature_problem();
    m.state.levels.col(1).setZero();
    CHECK(prune_dead_features(m.state) == 1);
    CHECK(m.state.num_features() == 1);
  }

  TEST_CASE("state invariants hold after every sweep") {
    RandomSource data_rng(47);
    const SubstateGrid grid(5);
    Hyperparameters hyper;
    hyper.L = 5;
    hyper.n_t = 20;
    ObservationSet data{Eigen::MatrixXd::Random(12, 6).cwiseAbs(), std::vector<int>(12), 3};
    for (int n = 0; n < 12; ++n)
      data.actions[static_cast<std::size_t>(n)] = static_cast<int>(data_rng.next_u64() % 3);
    ChainConfig config;
    config.merge_every = 5;
    RandomSource rng(48);
    LatentState s = initial_state(data, grid, hyper, rng);
    AcceptStats stats;
    for (int sweep = 0; sweep < 200; ++sweep) {
      gibbs_sweep(s, data, grid, hyper, config, sweep, rng, stats);
      REQUIRE_NOTHROW(s.check_invariants(grid));
      for (int k = 0; k < s.num_features(); ++k)
        REQUIRE((s.active.row(k).sum() > 0 || (s.levels.col(k).array() != 0).any()));
      REQUIRE(std::isfinite(log_joint_posterior(s, data, grid, hyper)));
    }
  }

  TEST_CASE("initial state has one prior-drawn feature") {
    Micro m = micro_problem();
    RandomSource rng(49);
    const LatentState s = initial_state(m.data, m.grid, m.hyper, rng);
    CHECK(s.num_features() == 1);
    CHECK(s.dim() == 2);
    CHECK(s.num_observations() == 3);
    CHECK(s.num_actions() == 3);
    CHECK_NOTHROW(s.check_invariants(m.grid));
  }
}
