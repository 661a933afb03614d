#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "fpl/gibbs.hpp"
#include "fpl/text.hpp"
#include "matrix_text.hpp"

namespace fpl {

Trace run_chain(const ObservationSet& data, const Hyperparameters& hyper,
                const ChainConfig& config) {
  data.validate();
  hyper.validate();
  config.validate();
  RandomSource rng(config.seed);
  const SubstateGrid grid(hyper.L);
  LatentState init = initial_state(data, grid, hyper, rng);
  return run_chain(data, hyper, config, std::move(init));
}

Trace run_chain(const ObservationSet& data, const Hyperparameters& hyper,
                const ChainConfig& config, LatentState initial) {
  data.validate();
  hyper.validate();
  config.validate();
  const SubstateGrid grid(hyper.L);
  initial.check_invariants(grid);
  // Sweeps draw from a stream separate from the one used for initialization.
  RandomSource rng(derive_seed(config.seed, 1));
  Trace trace;
  trace.grid_levels = hyper.L;
  LatentState state = std::move(initial);
  for (int sweep = 0; sweep < config.n_iter; ++sweep) {
    gibbs_sweep(state, data, grid, hyper, config, sweep, rng, trace.stats);
    const PosteriorTerms terms = posterior_terms(state, data, grid, hyper);
    const std::string bad = terms.first_non_finite();
    if (!bad.empty())
      throw std::runtime_error("non-finite log posterior after sweep " + std::to_string(sweep) +
                               ": " + bad + " term");
    if (sweep >= config.burn_in && (sweep - config.burn_in) % config.thin == 0)
      trace.samples.push_back(TraceSample{sweep, state, terms.total()});
  }
  return trace;
}

namespace {

const char* const kRecordKeys[] = {"sweep",     "K",          "log_post",  "sigma_z2",
                                   "gamma_w",   "alpha_a",    "beta_a",    "alpha_sigma",
                                   "beta_sigma", "alpha_phi", "W",         "A",
                                   "S",         "Phi"};

}  // namespace

void write_trace(std::ostream& out, const Trace& trace) {
  int n_obs = 0;
  int dim = 0;
  int n_u = 0;
  if (!trace.samples.empty()) {
    const auto& s = trace.samples.front().state;
    n_obs = s.num_observations();
    dim = s.dim();
    n_u = s.num_actions();
  }
  out << "trace L=" << trace.grid_levels << " N_z=" << n_obs << " D=" << dim << " N_u=" << n_u
      << '\n';
  for (const auto& rec : trace.samples) {
    const auto& s = rec.state;
    out << "sweep=" << rec.sweep << " K=" << s.num_features()
        << " log_post=" << format_double(rec.log_posterior)
        << " sigma_z2=" << format_double(s.sigma_z2) << " gamma_w=" << format_double(s.gamma_w)
        << " alpha_a=" << format_double(s.alpha_a) << " beta_a=" << format_double(s.beta_a)
        << " alpha_sigma=" << format_double(s.alpha_sigma)
        << " beta_sigma=" << format_double(s.beta_sigma)
        << " alpha_phi=" << format_double(s.alpha_phi) << " W=" << detail::join_matrix(s.weights)
        << " A=" << detail::join_matrix(s.active) << " S=" << detail::join_matrix(s.levels) << " Phi=" << detail::join_matrix(s.policies)
        << '\n';
  }
}

Trace read_trace(std::istream& in, const std::string& source) {
  std::string line;
  int line_no = 0;
  bool have_header = false;
  int n_obs = 0;
  int dim = 0;
  int n_u = 0;
  Trace trace;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_whitespace(line);
    if (tokens.empty()) continue;
    try {
      const detail::Fields kv(tokens, have_header ? 0 : 1);
      auto field = [&](std::string_view key) { return kv.get(key); };
      if (!have_header) {
        if (tokens[0] != "trace") throw std::invalid_argument("expected 'trace' header");
        trace.grid_levels = static_cast<int>(parse_int(field("L")));
        n_obs = static_cast<int>(parse_int(field("N_z")));
        dim = static_cast<int>(parse_int(field("D")));
        n_u = static_cast<int>(parse_int(field("N_u")));
        have_header = true;
        continue;
      }
      if (kv.size() != std::size(kRecordKeys))
        throw std::invalid_argument("expected " + std::to_string(std::size(kRecordKeys)) +
                                    " fields, found " + std::to_string(kv.size()));
      TraceSample rec;
      rec.sweep = static_cast<int>(parse_int(field("sweep")));
      const int k = static_cast<int>(parse_int(field("K")));
      if (k < 0) throw std::invalid_argument("negative K");
      rec.log_posterior = parse_double(field("log_post"));
      LatentState& s = rec.state;
      s.sigma_z2 = parse_double(field("sigma_z2"));
      s.gamma_w = parse_double(field("gamma_w"));
      s.alpha_a = parse_double(field("alpha_a"));
      s.beta_a = parse_double(field("beta_a"));
      s.alpha_sigma = parse_double(field("alpha_sigma"));
      s.beta_sigma = parse_double(field("beta_sigma"));
      s.alpha_phi = parse_double(field("alpha_phi"));
      s.weights = detail::parse_matrix<double>(field("W"), k, dim);
      s.active = detail::parse_matrix<int>(field("A"), k, dim);
      s.levels = detail::parse_matrix<int>(field("S"), n_obs, k);
      s.policies = detail::parse_matrix<double>(field("Phi"), k, n_u);
      trace.samples.push_back(std::move(rec));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  if (!have_header) throw ParseError(source, line_no, "missing trace header");
  return trace;
}

void save_trace(const std::string& path, const Trace& trace) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  write_trace(f, trace);
  if (!f) throw std::runtime_error("write failed: " + path);
}

Trace load_trace(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  return read_trace(f, path);
}

}  // namespace fpl
