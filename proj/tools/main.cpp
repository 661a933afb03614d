// Command-line front end: simulate, fit, predict, evaluate, ingest.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fpl/config.hpp"
#include "fpl/ingest.hpp"
#include "fpl/predict.hpp"
#include "fpl/synth.hpp"
#include "fpl/text.hpp"

namespace fs = std::filesystem;
using namespace fpl;

namespace {

struct Options {
  std::string config_path;
  std::string seed;
  int jobs = 1;
  std::string estimator;
  bool reweight = false;
  std::string out;
  std::string data;
  std::string model;
  std::vector<std::string> frames;
  std::string labels;
};

std::uint64_t text_digest(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunConfig resolve_config(const Options& o) {
  RunConfig c;
  if (!o.config_path.empty()) load_config(o.config_path, c);
  if (!o.seed.empty()) c.set("seed", o.seed);
  if (!o.estimator.empty()) c.set("estimator", o.estimator);
  if (o.reweight) c.hyper.reweight_actions = true;
  if (!o.data.empty()) c.data_in = o.data;
  if (!o.model.empty()) c.model_out = o.model;
  c.validate();
  return c;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw std::runtime_error("cannot create output directory " + dir.string());
}

template <class Fn>
void write_file(const fs::path& path, Fn&& fn) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  fn(f);
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void echo_config(const fs::path& dir, const RunConfig& c) {
  ensure_dir(dir);
  write_file(dir / "config.txt", [&](std::ostream& f) { write_config(f, c); });
}

// Runs fn(0..n-1) on up to `jobs` threads; rethrows the first failure.
template <class Fn>
void run_parallel(std::size_t n, int jobs, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, jobs));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(threads, n); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Simulation cells below `root`, or `root` itself when it is a cell.
std::vector<fs::path> find_cells(const fs::path& root) {
  if (fs::exists(root / "train.txt")) return {root};
  std::vector<fs::path> cells;
  if (fs::is_directory(root))
    for (const auto& entry : fs::directory_iterator(root))
      if (entry.is_directory() && fs::exists(entry.path() / "train.txt"))
        cells.push_back(entry.path());
  std::sort(cells.begin(), cells.end());
  return cells;
}

fs::path require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw std::runtime_error("missing input file " + p.string());
  return p;
}

std::string snr_label(double snr) {
  std::string s = format_double(snr);
  for (auto& ch : s)
    if (ch == '.') ch = 'p';
  return s;
}

struct CellInfo {
  int run = 0;
  double snr_db = 0.0;
  int k_true = 0;
};

CellInfo read_cell_info(const fs::path& cell) {
  std::ifstream f(require_file(cell / "cell.txt"));
  std::string line;
  std::getline(f, line);
  CellInfo info;
  for (auto tok : split_whitespace(line)) {
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) continue;
    const auto key = tok.substr(0, eq);
    const auto val = tok.substr(eq + 1);
    if (key == "run") info.run = static_cast<int>(parse_int(val));
    if (key == "snr_db") info.snr_db = parse_double(val);
    if (key == "K_true") info.k_true = static_cast<int>(parse_int(val));
  }
  return info;
}

int cmd_simulate(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path out = o.out.empty() ? fs::path("simulation") : fs::path(o.out);
  echo_config(out, c);
  std::vector<CellInfo> cells;
  for (int r = 0; r < c.runs; ++r)
    for (double snr : c.snr_grid)
      for (int k : c.k_grid) cells.push_back({r, snr, k});
  const SubstateGrid grid(c.hyper.L);
  run_parallel(cells.size(), o.jobs, [&](std::size_t i) {
    const CellInfo& cell = cells[i];
    SynthConfig sc = c.synth;
    sc.k_true = cell.k_true;
    sc.snr_db = cell.snr_db;
    sc.seed = derive_seed(derive_seed(derive_seed(c.seed, static_cast<std::uint64_t>(cell.run)),
                                      static_cast<std::uint64_t>(std::llround(cell.snr_db * 1000))),
                          static_cast<std::uint64_t>(cell.k_true));
    RandomSource rng(sc.seed);
    const SyntheticData syn = generate_ground_truth(sc, grid, rng);
    char name[64];
    std::snprintf(name, sizeof name, "run%03d_snr%s_K%02d", cell.run, snr_label(cell.snr_db).c_str(),
                  cell.k_true);
    const fs::path dir = out / name;
    ensure_dir(dir);
    save_observations((dir / "train.txt").string(), syn.train());
    save_observations((dir / "test.txt").string(), syn.test());
    save_ground_truth((dir / "truth.txt").string(), syn.truth);
    write_file(dir / "cell.txt", [&](std::ostream& f) {
      f << "run=" << cell.run << " snr_db=" << format_double(cell.snr_db)
        << " K_true=" << cell.k_true << " seed=" << sc.seed << '\n';
    });
  });
  std::cout << "simulated " << cells.size() << " cells in " << out.string() << '\n';
  return 0;
}

void write_summary(const fs::path& path, const Trace& trace) {
  const TraceSample& map = map_estimate(trace);
  write_file(path, [&](std::ostream& f) {
    f << "K_MAP=" << map.state.num_features() << '\n'
      << "log_post=" << format_double(map.log_posterior) << '\n'
      << "map_sweep=" << map.sweep << '\n'
      << "samples=" << trace.samples.size() << '\n';
    const std::pair<const char*, const MoveStats*> moves[] = {
        {"alpha_sigma", &trace.stats.alpha_sigma}, {"beta_sigma", &trace.stats.beta_sigma},
        {"beta_a", &trace.stats.beta_a},           {"alpha_phi", &trace.stats.alpha_phi},
        {"births", &trace.stats.births}};
    for (const auto& [name, m] : moves)
      f << "accept_" << name << '=' << format_double(m->rate()) << " (" << m->accepted << '/'
        << m->proposed << ")\n";
  });
}

int cmd_fit(const Options& o) {
  const RunConfig c = resolve_config(o);
  if (c.data_in.empty()) throw std::runtime_error("fit needs --data");
  const fs::path data(c.data_in);
  if (fs::is_regular_file(data)) {
    const fs::path out = o.out.empty() ? fs::path("fit") : fs::path(o.out);
    echo_config(out, c);
    const ObservationSet obs = load_observations(data.string());
    const Trace trace = run_chain(obs, c.hyper, c.chain_config(c.seed));
    const fs::path trace_path = c.model_out.empty() ? out / "trace.txt" : fs::path(c.model_out);
    save_trace(trace_path.string(), trace);
    write_summary(out / "summary.txt", trace);
    std::cout << "K_MAP=" << map_estimate(trace).state.num_features() << " trace "
              << trace_path.string() << '\n';
    return 0;
  }
  const auto cells = find_cells(data);
  if (cells.empty()) throw std::runtime_error("no observation file or simulation cells at " + data.string());
  echo_config(o.out.empty() ? data : fs::path(o.out), c);
  run_parallel(cells.size(), o.jobs, [&](std::size_t i) {
    const fs::path& cell = cells[i];
    const ObservationSet obs = load_observations(require_file(cell / "train.txt").string());
    const std::uint64_t seed = derive_seed(c.seed, text_digest(cell.filename().string()));
    const Trace trace = run_chain(obs, c.hyper, c.chain_config(seed));
    save_trace((cell / "trace.txt").string(), trace);
    write_summary(cell / "summary.txt", trace);
  });
  std::cout << "fitted " << cells.size() << " cells\n";
  return 0;
}

std::vector<PredictionResult> predict_all(const RunConfig& c, const Trace& trace,
                                          const ObservationSet& queries, std::uint64_t seed) {
  const SubstateGrid grid(trace.grid_levels);
  std::vector<PredictionResult> results;
  const LatentState& map_state = map_estimate(trace).state;
  MmseOptions mo;
  mo.draws_per_sample = c.draws_per_sample;
  mo.n_sweeps = c.predict_sweeps;
  for (int n = 0; n < queries.size(); ++n) {
    const std::uint64_t qseed = derive_seed(seed, static_cast<std::uint64_t>(n));
    if (c.estimator == Estimator::kMap) {
      RandomSource rng(qseed);
      const SubstatePrior prior = frozen_substate_prior(map_state, grid, c.hyper);
      const Eigen::VectorXi s =
          maximize_substate(queries.Z.row(n), map_state, grid, prior, rng, c.map_restarts);
      PredictionResult r;
      Eigen::VectorXd values(s.size());
      for (int k = 0; k < s.size(); ++k) values[k] = grid.value(s[k]);
      r.distribution = action_probabilities(values, map_state.policies);
      r.best_action = best_action(r.distribution);
      results.push_back(std::move(r));
    } else {
      results.push_back(predict_action_mmse(queries.Z.row(n), trace, grid, c.hyper, qseed, mo));
    }
  }
  return results;
}

int cmd_predict(const Options& o) {
  const RunConfig c = resolve_config(o);
  if (c.data_in.empty()) throw std::runtime_error("predict needs --data");
  const fs::path data(c.data_in);
  if (fs::is_regular_file(data)) {
    if (c.model_out.empty()) throw std::runtime_error("predict needs --model");
    const fs::path out = o.out.empty() ? fs::path("predict") : fs::path(o.out);
    echo_config(out, c);
    const Trace trace = load_trace(require_file(c.model_out).string());
    const ObservationSet queries = load_observations(data.string());
    const auto results = predict_all(c, trace, queries, c.seed);
    write_file(out / "predictions.txt", [&](std::ostream& f) { write_predictions(f, results); });
    std::cout << "wrote " << results.size() << " predictions to "
              << (out / "predictions.txt").string() << '\n';
    return 0;
  }
  const auto cells = find_cells(data);
  if (cells.empty()) throw std::runtime_error("no query file or simulation cells at " + data.string());
  run_parallel(cells.size(), o.jobs, [&](std::size_t i) {
    const fs::path& cell = cells[i];
    const Trace trace = load_trace(require_file(cell / "trace.txt").string());
    const ObservationSet queries = load_observations(require_file(cell / "test.txt").string());
    const std::uint64_t seed = derive_seed(c.seed, text_digest(cell.filename().string()));
    const auto results = predict_all(c, trace, queries, seed);
    write_file(cell / ("predictions_" + estimator_name(c.estimator) + ".txt"),
               [&](std::ostream& f) { write_predictions(f, results); });
  });
  std::cout << "predicted " << cells.size() << " cells (" << estimator_name(c.estimator) << ")\n";
  return 0;
}

std::vector<int> read_best_actions(const fs::path& path) {
  std::ifstream f(require_file(path));
  std::vector<int> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto tokens = split_whitespace(line);
    if (tokens.empty()) continue;
    if (tokens.size() < 3) throw ParseError(path.string(), line_no, "malformed prediction line");
    try {
      out.push_back(static_cast<int>(parse_int(tokens.back())));
    } catch (const std::invalid_argument& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  return out;
}

int cmd_evaluate(const Options& o) {
  const RunConfig c = resolve_config(o);
  if (c.data_in.empty()) throw std::runtime_error("evaluate needs --data (a simulation directory)");
  const auto cells = find_cells(c.data_in);
  if (cells.empty()) throw std::runtime_error("no simulation cells at " + c.data_in);
  const fs::path out = o.out.empty() ? fs::path(c.data_in) : fs::path(o.out);
  echo_config(out, c);
  std::vector<MetricsRow> rows(cells.size());
  run_parallel(cells.size(), o.jobs, [&](std::size_t i) {
    const fs::path& cell = cells[i];
    const CellInfo info = read_cell_info(cell);
    const GroundTruth truth = load_ground_truth(require_file(cell / "truth.txt").string());
    const ObservationSet test = load_observations(require_file(cell / "test.txt").string());
    const Trace trace = load_trace(require_file(cell / "trace.txt").string());
    const auto map_pred = read_best_actions(cell / "predictions_map.txt");
    const auto mmse_pred = read_best_actions(cell / "predictions_mmse.txt");
    const SubstateGrid grid(trace.grid_levels);
    MetricsRow& row = rows[i];
    row.seed = std::to_string(info.run);
    row.snr_db = info.snr_db;
    row.k_true = info.k_true;
    row.metrics =
        evaluate(map_estimate(trace).state, grid, truth, test.actions, map_pred, mmse_pred);
    row.k_err = row.metrics.k_err;
  });
  const fs::path metrics = c.metrics_out.empty() ? out / "metrics.csv" : fs::path(c.metrics_out);
  write_file(metrics, [&](std::ostream& f) {
    f << kMetricsHeader << '\n';
    for (const auto& r : rows) write_metrics_row(f, r);
  });
  const fs::path summary = metrics.parent_path() / "summary.csv";
  write_file(summary, [&](std::ostream& f) {
    f << kMetricsHeader << '\n';
    for (const auto& r : aggregate_metrics(rows)) write_metrics_row(f, r);
  });
  std::cout << "wrote " << metrics.string() << " and " << summary.string() << '\n';
  return 0;
}

int cmd_ingest(const Options& o) {
  const RunConfig c = resolve_config(o);
  if (o.frames.empty()) throw std::runtime_error("ingest needs --frames");
  if (o.labels.empty()) throw std::runtime_error("ingest needs --labels");
  const fs::path out = o.out.empty() ? fs::path("ingest") : fs::path(o.out);
  echo_config(out, c);
  const ObservationSet obs = load_labeled_sequence(o.frames, o.labels, c.grid_spec);
  save_observations((out / "observations.txt").string(), obs);
  std::cout << "wrote " << obs.size() << " observations of dimension " << obs.dim() << " to "
            << (out / "observations.txt").string() << '\n';
  return 0;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "key=value config file");
  cmd->add_option("--seed", o.seed, "top-level seed (U64)");
  cmd->add_option("--jobs", o.jobs, "concurrent cells")->check(CLI::PositiveNumber);
  cmd->add_option("--estimator", o.estimator, "map or mmse");
  cmd->add_flag("--reweight-actions", o.reweight, "multiply the action log-likelihood by D");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--data", o.data, "observation file or simulation directory");
  cmd->add_option("--model", o.model, "trace file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian nonparametric feature and policy learning"};
  app.require_subcommand(1);
  Options o;
  auto* simulate = app.add_subcommand("simulate", "write synthetic train/test/truth cells");
  auto* fit = app.add_subcommand("fit", "run the sampler and write a trace");
  auto* predict = app.add_subcommand("predict", "predict actions for query observations");
  auto* evaluate = app.add_subcommand("evaluate", "write the metrics CSV of a simulation");
  auto* ingest = app.add_subcommand("ingest", "convert point-cloud frames into observations");
  for (auto* cmd : {simulate, fit, predict, evaluate, ingest}) add_common(cmd, o);
  ingest->add_option("--frames", o.frames, "point files in time order")->expected(1, -1);
  ingest->add_option("--labels", o.labels, "one action letter per frame pair");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (!o.estimator.empty() && o.estimator != "map" && o.estimator != "mmse") {
    std::cerr << "fpl: usage error: --estimator must be map or mmse\n";
    return 2;
  }
  try {
    if (simulate->parsed()) return cmd_simulate(o);
    if (fit->parsed()) return cmd_fit(o);
    if (predict->parsed()) return cmd_predict(o);
    if (evaluate->parsed()) return cmd_evaluate(o);
    if (ingest->parsed()) return cmd_ingest(o);
  } catch (const std::exception& e) {
    std::cerr << "fpl: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
