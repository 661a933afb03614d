#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fpl/gibbs.hpp"
#include "fpl/ingest.hpp"
#include "fpl/synth.hpp"

namespace fpl {

enum class Estimator { kMap, kMmse };

Estimator parse_estimator(const std::string& name);
std::string estimator_name(Estimator e);

/// Everything a command needs. Defaults follow the simulation protocol;
/// the sweep grids cover SNR 10..30 dB in steps of 5 and K in {5,7,9,12,15,18}.
struct RunConfig {
  std::uint64_t seed = 0;
  Hyperparameters hyper;
  ChainConfig chain;

  Estimator estimator = Estimator::kMap;
  int draws_per_sample = 10;
  int predict_sweeps = 10;
  int map_restarts = 4;

  SynthConfig synth;
  int runs = 20;
  std::vector<double> snr_grid{10.0, 15.0, 20.0, 25.0, 30.0};
  std::vector<int> k_grid{5, 7, 9, 12, 15, 18};

  GridSpec grid_spec;

  std::string data_in;
  std::string model_out;
  std::string metrics_out;

  /// Applies one key=value pair. Throws std::invalid_argument on an unknown
  /// key or a malformed value.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  /// Chain settings with n_iter and the seed taken from this config.
  ChainConfig chain_config(std::uint64_t chain_seed) const;
};

/// All recognized keys, in the order they are written.
const std::vector<std::string>& config_keys();

/// Flat key=value lines; '#' starts a comment. Unknown keys are rejected.
void read_config(std::istream& in, RunConfig& config, const std::string& source = "config");
void load_config(const std::string& path, RunConfig& config);

/// Writes every key with its resolved value; reading it back reproduces the
/// configuration exactly.
void write_config(std::ostream& out, const RunConfig& config);

}  // namespace fpl
