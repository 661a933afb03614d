#include "fpl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "fpl/text.hpp"
#include "matrix_text.hpp"

namespace fpl {

Estimator parse_estimator(const std::string& name) {
  if (name == "map") return Estimator::kMap;
  if (name == "mmse") return Estimator::kMmse;
  throw std::invalid_argument("estimator must be 'map' or 'mmse', got '" + name + "'");
}

std::string estimator_name(Estimator e) { return e == Estimator::kMap ? "map" : "mmse"; }

namespace {

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

int to_int(std::string_view v) { return static_cast<int>(parse_int(v)); }

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(v) + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

template <class T>
std::string join_list(const std::vector<T>& xs) {
  std::string out;
  for (const auto& x : xs) {
    if (!out.empty()) out += ',';
    if constexpr (std::is_integral_v<T>)
      out += std::to_string(x);
    else
      out += format_double(x);
  }
  return out;
}

#define FPL_REAL(key, field)                                                     \
  Key {                                                                          \
    key, [](const RunConfig& c) { return format_double(c.field); },             \
        [](RunConfig& c, std::string_view v) { c.field = parse_double(v); }     \
  }
#define FPL_INT(key, field)                                                      \
  Key {                                                                          \
    key, [](const RunConfig& c) { return std::to_string(c.field); },            \
        [](RunConfig& c, std::string_view v) { c.field = to_int(v); }           \
  }
#define FPL_TEXT(key, field)                                                     \
  Key {                                                                          \
    key, [](const RunConfig& c) { return c.field; },                            \
        [](RunConfig& c, std::string_view v) { c.field = std::string(v); }      \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      Key{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
          [](RunConfig& c, std::string_view v) {
            std::uint64_t s = 0;
            const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
            if (ec != std::errc() || ptr != v.data() + v.size())
              throw std::invalid_argument("seed must be an unsigned 64-bit integer");
            c.seed = s;
          }},
      FPL_REAL("h1_alpha_sigma", hyper.h1_alpha_sigma),
      FPL_REAL("h2_alpha_sigma", hyper.h2_alpha_sigma),
      FPL_REAL("h1_beta_sigma", hyper.h1_beta_sigma),
      FPL_REAL("h2_beta_sigma", hyper.h2_beta_sigma),
      FPL_REAL("h1_alpha_a", hyper.h1_alpha_a),
      FPL_REAL("h2_alpha_a", hyper.h2_alpha_a),
      FPL_REAL("h1_beta_a", hyper.h1_beta_a),
      FPL_REAL("h2_beta_a", hyper.h2_beta_a),
      FPL_REAL("alpha_gamma", hyper.alpha_gamma),
      FPL_REAL("beta_gamma", hyper.beta_gamma),
      FPL_REAL("h1_phi", hyper.h1_phi),
      FPL_REAL("h2_phi", hyper.h2_phi),
      FPL_REAL("alpha_s_zero", hyper.alpha_s_zero),
      FPL_REAL("alpha_s_nonzero", hyper.alpha_s_nonzero),
      FPL_REAL("p_plus", hyper.p_plus),
      FPL_REAL("t_corr", hyper.t_corr),
      Key{"n_iter", [](const RunConfig& c) { return std::to_string(c.chain.n_iter); },
          [](RunConfig& c, std::string_view v) { c.hyper.n_iter = c.chain.n_iter = to_int(v); }},
      FPL_INT("L", hyper.L),
      FPL_INT("n_t", hyper.n_t),
      Key{"reweight_actions", [](const RunConfig& c) { return from_bool(c.hyper.reweight_actions); },
          [](RunConfig& c, std::string_view v) { c.hyper.reweight_actions = to_bool(v); }},
      FPL_INT("burn_in", chain.burn_in),
      FPL_INT("thin", chain.thin),
      FPL_INT("merge_every", chain.merge_every),
      FPL_REAL("mh_concentration", chain.mh_concentration),
      FPL_INT("max_features", chain.max_features),
      Key{"estimator", [](const RunConfig& c) { return estimator_name(c.estimator); },
          [](RunConfig& c, std::string_view v) { c.estimator = parse_estimator(std::string(v)); }},
      FPL_INT("draws_per_sample", draws_per_sample),
      FPL_INT("predict_sweeps", predict_sweeps),
      FPL_INT("map_restarts", map_restarts),
      FPL_INT("n_z", synth.n_z),
      FPL_INT("dim", synth.dim),
      FPL_INT("n_u", synth.n_u),
      FPL_REAL("train_fraction", synth.train_fraction),
      FPL_INT("runs", runs),
      Key{"snr_db", [](const RunConfig& c) { return join_list(c.snr_grid); },
          [](RunConfig& c, std::string_view v) {
            c.snr_grid.clear();
            for (auto t : detail::split_commas(v)) c.snr_grid.push_back(parse_double(t));
          }},
      Key{"k_true", [](const RunConfig& c) { return join_list(c.k_grid); },
          [](RunConfig& c, std::string_view v) {
            c.k_grid.clear();
            for (auto t : detail::split_commas(v)) c.k_grid.push_back(to_int(t));
          }},
      FPL_REAL("x_min", grid_spec.x_min),
      FPL_REAL("x_max", grid_spec.x_max),
      FPL_REAL("y_min", grid_spec.y_min),
      FPL_REAL("y_max", grid_spec.y_max),
      FPL_INT("cells_x", grid_spec.cells_x),
      FPL_INT("cells_y", grid_spec.cells_y),
      FPL_REAL("height_threshold", grid_spec.height_threshold),
      FPL_TEXT("data_in", data_in),
      FPL_TEXT("model_out", model_out),
      FPL_TEXT("metrics_out", metrics_out),
  };
  return table;
}

#undef FPL_REAL
#undef FPL_INT
#undef FPL_TEXT

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& k : key_table()) out.emplace_back(k.name);
    return out;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& k : key_table())
    if (key == k.name) {
      k.set(*this, value);
      return;
    }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  hyper.validate();
  chain.validate();
  if (draws_per_sample < 1 || predict_sweeps < 1 || map_restarts < 0)
    throw InvalidParameter("config: draws_per_sample and predict_sweeps must be >= 1");
  if (runs < 1) throw InvalidParameter("config: runs must be >= 1");
  if (snr_grid.empty() || k_grid.empty())
    throw InvalidParameter("config: snr_db and k_true need at least one value");
  for (int k : k_grid)
    if (k < 1) throw InvalidParameter("config: k_true values must be >= 1");
  SynthConfig probe = synth;
  probe.k_true = k_grid.front();
  probe.snr_db = snr_grid.front();
  probe.validate();
  grid_spec.validate();
}

ChainConfig RunConfig::chain_config(std::uint64_t chain_seed) const {
  ChainConfig c = chain;
  c.seed = chain_seed;
  return c;
}

void read_config(std::istream& in, RunConfig& config, const std::string& source) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = trim(line);
    if (const auto hash = t.find('#'); hash != std::string_view::npos) t = trim(t.substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, line_no, "expected key=value");
    try {
      config.set(std::string(trim(t.substr(0, eq))), std::string(trim(t.substr(eq + 1))));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
}

void load_config(const std::string& path, RunConfig& config) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  read_config(f, config, path);
}

void write_config(std::ostream& out, const RunConfig& config) {
  for (const auto& k : key_table()) out << k.name << '=' << k.get(config) << '\n';
}

}  // namespace fpl
