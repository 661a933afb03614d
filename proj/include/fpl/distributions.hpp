#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fpl {

/// Thrown when a distribution (or any model quantity) receives a parameter
/// outside its domain.
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// SplitMix64 mix of a parent seed and a stream id. Used for every child
/// source (per chain, per sweep cell, per prediction query).
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream);

/// Seedable random source. Not shareable between threads; give each worker
/// its own source via split().
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  RandomSource split(std::uint64_t stream) const {
    return RandomSource(derive_seed(seed_, stream));
  }

  /// Uniform on the open interval (0, 1).
  double uniform();
  double standard_normal();
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

namespace dist {

struct Gaussian {
  double mean;
  double variance;
};
struct Gamma {
  double shape;
  double rate;
};
struct InverseGamma {
  double shape;
  double scale;
};
struct Beta {
  double a;
  double b;
};
struct Exponential {
  double scale;
};
struct Poisson {
  double mean;
};
struct Bernoulli {
  double p;
};
struct Dirichlet {
  Eigen::VectorXd concentration;
};
struct Categorical {
  Eigen::VectorXd probabilities;
};

}  // namespace dist

// Exact draws. Invalid parameters throw InvalidParameter.
double sample(const dist::Gaussian& d, RandomSource& rng);
double sample(const dist::Gamma& d, RandomSource& rng);
double sample(const dist::InverseGamma& d, RandomSource& rng);
double sample(const dist::Beta& d, RandomSource& rng);
double sample(const dist::Exponential& d, RandomSource& rng);
int sample(const dist::Poisson& d, RandomSource& rng);
bool sample(const dist::Bernoulli& d, RandomSource& rng);
Eigen::VectorXd sample(const dist::Dirichlet& d, RandomSource& rng);
int sample(const dist::Categorical& d, RandomSource& rng);

/// log Gamma(shape, 1) variate. Stays finite for very small shapes where the
/// variate itself underflows to zero.
double sample_log_gamma(double shape, RandomSource& rng);

/// Normal(mean, variance) truncated to (0, inf).
double sample_truncated_normal(double mean, double variance, RandomSource& rng);

/// Index drawn with probability proportional to exp(log_weights[i]).
/// Entries equal to -inf have zero mass; at least one entry must be finite.
int sample_log_categorical(std::span<const double> log_weights, RandomSource& rng);

/// Counts of `trials` independent categorical draws (conditional binomials).
std::vector<int> sample_multinomial(int trials, std::span<const double> probabilities,
                                    RandomSource& rng);

// Log densities (log mass for discrete families). Values outside the support
// give -inf.
double log_density(const dist::Gaussian& d, double x);
double log_density(const dist::Gamma& d, double x);
double log_density(const dist::InverseGamma& d, double x);
double log_density(const dist::Beta& d, double x);
double log_density(const dist::Exponential& d, double x);
double log_density(const dist::Poisson& d, int k);
double log_density(const dist::Bernoulli& d, bool x);
double log_density(const dist::Dirichlet& d, const Eigen::VectorXd& x);
double log_density(const dist::Categorical& d, int k);

double log_beta_function(double a, double b);

/// log(sum(exp(v))) without overflow; -inf for empty input or all -inf.
double log_sum_exp(std::span<const double> v);

}  // namespace fpl
