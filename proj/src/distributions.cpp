#include "fpl/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace fpl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require(bool ok, const char* what) {
  if (!ok) throw InvalidParameter(what);
}

bool positive_finite(double x) { return std::isfinite(x) && x > 0.0; }

// (a - 1) * log(x) with the convention 0 * log(0) = 0.
double shape_term(double a, double x) {
  if (a == 1.0) return 0.0;
  return (a - 1.0) * std::log(x);
}

void validate_probabilities(const Eigen::VectorXd& p) {
  require(p.size() > 0, "categorical: empty probability vector");
  double total = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, "categorical: probabilities must be finite and >= 0");
    total += v;
  }
  require(std::abs(total - 1.0) <= 1e-9, "categorical: probabilities must sum to 1");
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
  std::uint64_t z = parent + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RandomSource::RandomSource(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double RandomSource::uniform() {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomSource::standard_normal() { return normal_(engine_); }

double sample(const dist::Gaussian& d, RandomSource& rng) {
  require(std::isfinite(d.mean), "gaussian: mean must be finite");
  require(positive_finite(d.variance), "gaussian: variance must be > 0");
  return d.mean + std::sqrt(d.variance) * rng.standard_normal();
}

double sample_log_gamma(double shape, RandomSource& rng) {
  require(positive_finite(shape), "gamma: shape must be > 0");
  if (shape >= 1.0) {
    std::gamma_distribution<double> g(shape, 1.0);
    return std::log(g(rng.engine()));
  }
  // Gamma(a) = Gamma(a + 1) * U^(1/a)
  std::gamma_distribution<double> g(shape + 1.0, 1.0);
  return std::log(g(rng.engine())) + std::log(rng.uniform()) / shape;
}

double sample(const dist::Gamma& d, RandomSource& rng) {
  require(positive_finite(d.rate), "gamma: rate must be > 0");
  double x = std::exp(sample_log_gamma(d.shape, rng)) / d.rate;
  return std::max(x, std::numeric_limits<double>::denorm_min());
}

double sample(const dist::InverseGamma& d, RandomSource& rng) {
  require(positive_finite(d.scale), "inverse-gamma: scale must be > 0");
  return d.scale / std::exp(sample_log_gamma(d.shape, rng));
}

double sample(const dist::Beta& d, RandomSource& rng) {
  double lx = sample_log_gamma(d.a, rng);
  double ly = sample_log_gamma(d.b, rng);
  double m = std::max(lx, ly);
  double ex = std::exp(lx - m), ey = std::exp(ly - m);
  return ex / (ex + ey);
}

double sample(const dist::Exponential& d, RandomSource& rng) {
  require(positive_finite(d.scale), "exponential: scale must be > 0");
  return -d.scale * std::log(rng.uniform());
}

int sample(const dist::Poisson& d, RandomSource& rng) {
  require(std::isfinite(d.mean) && d.mean >= 0.0, "poisson: mean must be >= 0");
  if (d.mean == 0.0) return 0;
  std::poisson_distribution<int> p(d.mean);
  return p(rng.engine());
}

bool sample(const dist::Bernoulli& d, RandomSource& rng) {
  require(d.p >= 0.0 && d.p <= 1.0, "bernoulli: p must lie in [0, 1]");
  return rng.uniform() < d.p;
}

Eigen::VectorXd sample(const dist::Dirichlet& d, RandomSource& rng) {
  const auto n = d.concentration.size();
  require(n > 0, "dirichlet: empty concentration");
  Eigen::VectorXd logs(n);
  for (Eigen::Index i = 0; i < n; ++i) logs[i] = sample_log_gamma(d.concentration[i], rng);
  const double lse = log_sum_exp(std::span<const double>(logs.data(), logs.size()));
  Eigen::VectorXd x = (logs.array() - lse).exp().matrix();
  return x / x.sum();
}

int sample(const dist::Categorical& d, RandomSource& rng) {
  validate_probabilities(d.probabilities);
  const double u = rng.uniform() * d.probabilities.sum();
  double acc = 0.0;
  const auto n = static_cast<int>(d.probabilities.size());
  int last_positive = 0;
  for (int i = 0; i < n; ++i) {
    if (d.probabilities[i] > 0.0) last_positive = i;
    acc += d.probabilities[i];
    if (u < acc) return i;
  }
  return last_positive;
}

double sample_truncated_normal(double mean, double variance, RandomSource& rng) {
  require(std::isfinite(mean), "truncated normal: mean must be finite");
  require(positive_finite(variance), "truncated normal: variance must be > 0");
  const double sd = std::sqrt(variance);
  const double lower = -mean / sd;  // standardized truncation point
  for (;;) {
    double z;
    if (lower < 0.0) {
      // Truncation below the mean: plain rejection accepts with prob > 1/2.
      z = rng.standard_normal();
      if (z <= lower) continue;
    } else {
      // Tail: translated exponential proposal with the optimal rate.
      const double rate = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
      z = lower - std::log(rng.uniform()) / rate;
      const double diff = z - rate;
      if (std::log(rng.uniform()) > -0.5 * diff * diff) continue;
    }
    const double x = mean + sd * z;
    if (x > 0.0) return x;
  }
}

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

int sample_log_categorical(std::span<const double> log_weights, RandomSource& rng) {
  double m = kNegInf;
  for (double x : log_weights) m = std::max(m, x);
  require(std::isfinite(m), "log categorical: no finite mass");
  thread_local std::vector<double> cum;
  cum.resize(log_weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    total += std::exp(log_weights[i] - m);
    cum[i] = total;
  }
  const double u = rng.uniform() * total;
  const auto it = std::upper_bound(cum.begin(), cum.end(), u);
  auto idx = static_cast<int>(it - cum.begin());
  if (idx >= static_cast<int>(cum.size())) idx = static_cast<int>(cum.size()) - 1;
  while (log_weights[idx] == kNegInf && idx > 0) --idx;
  return idx;
}

std::vector<int> sample_multinomial(int trials, std::span<const double> probabilities,
                                    RandomSource& rng) {
  require(trials >= 0, "multinomial: trials must be >= 0");
  std::vector<int> counts(probabilities.size(), 0);
  double remaining_mass = 0.0;
  for (double p : probabilities) {
    require(std::isfinite(p) && p >= 0.0, "multinomial: probabilities must be >= 0");
    remaining_mass += p;
  }
  std::size_t last = 0;
  for (std::size_t i = 0; i < probabilities.size(); ++i)
    if (probabilities[i] > 0.0) last = i;
  int remaining = trials;
  for (std::size_t i = 0; i < last && remaining > 0; ++i) {
    if (probabilities[i] <= 0.0) {
      remaining_mass -= probabilities[i];
      continue;
    }
    const double p = std::clamp(probabilities[i] / remaining_mass, 0.0, 1.0);
    std::binomial_distribution<int> b(remaining, p);
    counts[i] = b(rng.engine());
    remaining -= counts[i];
    remaining_mass -= probabilities[i];
  }
  if (!probabilities.empty()) counts[last] += remaining;
  return counts;
}

double log_beta_function(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

double log_density(const dist::Gaussian& d, double x) {
  require(positive_finite(d.variance), "gaussian: variance must be > 0");
  const double r = x - d.mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * d.variance) - r * r / (2.0 * d.variance);
}

double log_density(const dist::Gamma& d, double x) {
  require(positive_finite(d.shape) && positive_finite(d.rate), "gamma: invalid parameters");
  if (!(x > 0.0) || !std::isfinite(x)) return kNegInf;
  return d.shape * std::log(d.rate) - std::lgamma(d.shape) + shape_term(d.shape, x) - d.rate * x;
}

double log_density(const dist::InverseGamma& d, double x) {
  require(positive_finite(d.shape) && positive_finite(d.scale), "inverse-gamma: invalid parameters");
  if (!(x > 0.0) || !std::isfinite(x)) return kNegInf;
  return d.shape * std::log(d.scale) - std::lgamma(d.shape) - (d.shape + 1.0) * std::log(x) -
         d.scale / x;
}

double log_density(const dist::Beta& d, double x) {
  require(positive_finite(d.a) && positive_finite(d.b), "beta: invalid parameters");
  if (!(x >= 0.0 && x <= 1.0)) return kNegInf;
  if ((x == 0.0 && d.a < 1.0) || (x == 1.0 && d.b < 1.0)) return kNegInf;
  return shape_term(d.a, x) + shape_term(d.b, 1.0 - x) - log_beta_function(d.a, d.b);
}

double log_density(const dist::Exponential& d, double x) {
  require(positive_finite(d.scale), "exponential: scale must be > 0");
  if (!(x >= 0.0) || !std::isfinite(x)) return kNegInf;
  return -std::log(d.scale) - x / d.scale;
}

double log_density(const dist::Poisson& d, int k) {
  require(std::isfinite(d.mean) && d.mean >= 0.0, "poisson: mean must be >= 0");
  if (k < 0) return kNegInf;
  if (d.mean == 0.0) return k == 0 ? 0.0 : kNegInf;
  return k * std::log(d.mean) - d.mean - std::lgamma(k + 1.0);
}

double log_density(const dist::Bernoulli& d, bool x) {
  require(d.p >= 0.0 && d.p <= 1.0, "bernoulli: p must lie in [0, 1]");
  return std::log(x ? d.p : 1.0 - d.p);
}

double log_density(const dist::Dirichlet& d, const Eigen::VectorXd& x) {
  const auto n = d.concentration.size();
  require(n > 0, "dirichlet: empty concentration");
  for (double a : d.concentration) require(positive_finite(a), "dirichlet: concentration must be > 0");
  if (x.size() != n) return kNegInf;
  double total = 0.0;
  for (double v : x) {
    if (!(v >= 0.0)) return kNegInf;
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) return kNegInf;
  double out = std::lgamma(d.concentration.sum());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (x[i] == 0.0 && d.concentration[i] < 1.0) return kNegInf;
    out += shape_term(d.concentration[i], x[i]) - std::lgamma(d.concentration[i]);
  }
  return out;
}

double log_density(const dist::Categorical& d, int k) {
  validate_probabilities(d.probabilities);
  if (k < 0 || k >= d.probabilities.size()) return kNegInf;
  return std::log(d.probabilities[k]);
}

}  // namespace fpl
