// hevrl command-line front end.
//
// Exit codes: 0 success, 1 I/O or configuration error, 2 when a constraint
// is not met (solver did not converge, no feasible path, failed check).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hevrl/agent.hpp"
#include "hevrl/cycle.hpp"
#include "hevrl/dpbench.hpp"
#include "hevrl/error.hpp"
#include "hevrl/harness.hpp"
#include "hevrl/markov.hpp"
#include "hevrl/powertrain.hpp"
#include "hevrl/transform.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hevrl;

namespace {

constexpr int kOk = 0;
constexpr int kIoError = 1;
constexpr int kConstraintFailure = 2;

struct Common {
  std::string config;
  std::string params;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--params", c.params, "Powertrain parameter overrides (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Random seed");
  auto* out = cmd->add_option("--out", c.out, "Output path");
  if (out_required) out->required();
}

ExperimentConfig setup(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config_json(c.config);
  if (!c.params.empty()) {
    cfg.params = load_params_json(c.params);
    cfg.qgrid.soc_min = cfg.params.soc_min;
    cfg.qgrid.soc_max = cfg.params.soc_max;
  }
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.learning.seed = *c.seed;
  }
  return cfg;
}

void write_json(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << std::setw(2) << j << '\n';
}

void emit(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << std::setw(2) << j << '\n';
  } else {
    write_json(j, out);
  }
}

void write_sweep_log(const std::vector<SweepLog>& log, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "sweep,accumulated_reward,mean_discrepancy,epsilon\n" << std::setprecision(17);
  for (const auto& s : log) {
    out << s.sweep << ',' << s.accumulated_reward << ',' << s.mean_discrepancy << ',' << s.epsilon << '\n';
  }
}

json residuals_json(const TransformResult& r) {
  return {{"g1", r.g1}, {"g2", r.g2}, {"g3", r.g3}, {"max_inequality_violation", r.max_inequality_violation}};
}

// ---------------------------------------------------------------- verbs

int run_gen_cycle(const Common& c, const std::string& recipe, std::size_t duration, std::size_t change_point) {
  const auto cfg = setup(c);
  CycleSpec spec;
  spec.recipe = recipe_from_string(recipe);
  spec.duration = duration;
  spec.seed = c.seed.value_or(1);
  spec.change_point = change_point;
  const auto cycle = generate_cycle(spec, cfg.params);
  save_cycle_csv(cycle, c.out);
  std::cout << "wrote " << cycle.size() << " samples to " << c.out << '\n';
  return kOk;
}

int run_mtf(const Common& c, const std::string& cycle_path) {
  const auto cfg = setup(c);
  const auto cycle = load_cycle_csv(cycle_path);
  const auto modes = classify_modes(cycle, cfg.params.body);
  const auto m = mtf_components(cycle, modes);
  std::size_t counts[4] = {0, 0, 0, 0};
  for (Mode mode : modes) ++counts[static_cast<int>(mode)];
  emit({{"cycle", cycle.name()},
        {"alpha", m.alpha},
        {"beta", m.beta},
        {"gamma", m.gamma},
        {"distance", m.distance},
        {"modes",
         {{"traction", counts[0]}, {"coasting", counts[1]}, {"braking", counts[2]}, {"idle", counts[3]}}}},
       c.out);
  return kOk;
}

int run_transform(const Common& c, const std::string& cycle_path, double alpha, double beta, double gamma,
                  const std::string& report_path) {
  const auto cfg = setup(c);
  const auto primitive = load_cycle_csv(cycle_path);
  const auto res = transform_cycle(primitive, cfg.params.body, {alpha, beta, gamma});
  save_cycle_csv(res.transformed, c.out);
  const json report = {{"converged", res.converged},
                       {"message", res.message},
                       {"cost", res.cost},
                       {"primitive_cost", jerk_cost(primitive)},
                       {"iterations", res.iterations},
                       {"inner_iterations", res.inner_iterations},
                       {"targets", {{"alpha", alpha}, {"beta", beta}, {"gamma", gamma}}},
                       {"residuals", residuals_json(res)}};
  if (!report_path.empty()) write_json(report, report_path);
  std::cout << res.message << " (cost " << res.cost << ", " << res.iterations << " outer iterations)\n";
  return res.converged ? kOk : kConstraintFailure;
}

int run_tpm(const Common& c, const std::string& cycle_path) {
  const auto cfg = setup(c);
  const auto cycle = load_cycle_csv(cycle_path);
  const auto model = estimate_tpm(cycle, cfg.params.body, cfg.qgrid.demand);
  save_tpm_json(model, c.out);
  std::cout << "estimated " << model.total_count() << " transitions into " << c.out << '\n';
  return kOk;
}

int run_imn(const Common& c, const std::string& a, const std::string& b) {
  const auto ta = load_tpm_json(a);
  const auto tb = load_tpm_json(b);
  const auto d = imn(ta, tb);
  emit({{"aggregate", d.aggregate}, {"per_bin", d.per_bin}, {"weights", d.weights}}, c.out);
  return kOk;
}

int run_train(const Common& c, const std::string& cycle_path, std::optional<std::uint64_t> sweeps,
              const std::string& log_path) {
  auto cfg = setup(c);
  if (sweeps) cfg.learning.sweeps = *sweeps;
  const auto cycle = load_cycle_csv(cycle_path);
  const auto result = train(cycle, cfg.params, cfg.learning, cfg.qgrid);
  save_qtable_json(result.q, c.out);
  if (!log_path.empty()) write_sweep_log(result.log, log_path);
  const auto trace = simulate_greedy(cycle, cfg.params, result.q, cfg.params.soc_init);
  std::cout << "trained " << cfg.learning.sweeps << " sweeps; greedy fuel " << total_fuel(trace)
            << " g, final SOC " << trace.final_soc() << '\n';
  return kOk;
}

int run_transfer(const Common& c, const std::string& library_dir, const std::string& tpm_path,
                 std::optional<double> tf) {
  const auto cfg = setup(c);
  const auto library = load_library(library_dir);
  const auto target = load_tpm_json(tpm_path);
  const auto weights = transfer_weights(library, target, tf.value_or(cfg.transfer_factor));
  save_qtable_json(transfer_q(library, weights), c.out);
  json w = json::array();
  for (std::size_t i = 0; i < library.size(); ++i) {
    w.push_back({{"id", library.entries[i].id},
                 {"distance", weights.distances[i]},
                 {"delta", weights.deltas[i]}});
  }
  std::cout << std::setw(2) << w << '\n';
  return kOk;
}

int run_prelearn(const Common& c, const std::vector<std::string>& cycle_paths) {
  auto cfg = setup(c);
  for (const auto& p : cycle_paths) cfg.sources.push_back({fs::path(p), std::nullopt, fs::path(p).stem().string()});
  if (cfg.sources.empty()) throw Error(ErrorKind::InvalidArgument, "no source cycles given (--cycle or config)");
  std::vector<DrivingCycle> cycles;
  for (const auto& s : cfg.sources) cycles.push_back(s.load(cfg.params));
  const auto library = prelearn(cycles, cfg);
  save_library(library, c.out);
  std::cout << "library of " << library.size() << " sources written to " << c.out << '\n';
  return kOk;
}

int run_dp(const Common& c, const std::string& cycle_path, std::optional<std::size_t> nodes,
           const std::string& trace_path) {
  const auto cfg = setup(c);
  const auto cycle = load_cycle_csv(cycle_path);
  DpGrid grid{DpGrid::uniform_nodes(nodes.value_or(cfg.dp_soc_nodes), cfg.params.soc_min, cfg.params.soc_max),
              cfg.qgrid.actions};
  const auto sol = solve(cycle, cfg.params, grid, cfg.params.soc_init);
  const std::size_t n = grid.soc_nodes.size();
  std::vector<double> v0(sol.value.begin(), sol.value.begin() + static_cast<std::ptrdiff_t>(n));
  emit({{"cycle", cycle.name()},
        {"steps", sol.steps},
        {"soc_nodes", grid.soc_nodes},
        {"actions", grid.actions},
        {"optimal_cost", sol.optimal_cost},
        {"total_fuel", sol.total_fuel},
        {"final_soc", sol.trace.final_soc()},
        {"infeasible_steps", sol.trace.infeasible_steps()},
        {"initial_value_row", v0}},
       c.out);
  if (!trace_path.empty()) save_trace_csv(sol.trace, trace_path);
  return kOk;
}

int run_adapt(const Common& c, const std::string& stream_path, const std::string& library_dir,
              std::optional<double> threshold, std::optional<std::size_t> window, std::optional<double> tf) {
  const auto cfg = setup(c);
  const auto stream = load_cycle_csv(stream_path);
  const auto library = load_library(library_dir);
  AdaptOptions opts;
  opts.threshold = threshold.value_or(cfg.imn_threshold);
  opts.window = window.value_or(cfg.window);
  opts.transfer_factor = tf.value_or(cfg.transfer_factor);
  const auto res = adapt_online(stream, library, opts, cfg.params, cfg.learning);
  fs::create_directories(c.out);
  save_trace_csv(res.trace, fs::path(c.out) / "trace.csv");
  json checks = json::array();
  for (const auto& w : res.checks) checks.push_back({{"step", w.step}, {"imn", w.imn}, {"updated", w.updated}});
  json updates = json::array();
  for (const auto& u : res.updates) updates.push_back({{"step", u.step}, {"imn", u.imn}, {"deltas", u.weights.deltas}});
  write_json({{"initial_source", library.entries[res.initial_source].id},
              {"threshold", opts.threshold},
              {"window", opts.window},
              {"checks", checks},
              {"updates", updates},
              {"total_fuel", total_fuel(res.trace)},
              {"final_soc", res.trace.final_soc()}},
             fs::path(c.out) / "adapt.json");
  std::cout << res.updates.size() << " policy update(s); fuel " << total_fuel(res.trace) << " g\n";
  return kOk;
}

int run_compare(const Common& c, const std::string& cycle_path, const std::string& library_dir,
                std::optional<double> threshold) {
  auto cfg = setup(c);
  if (threshold) cfg.imn_threshold = *threshold;
  cfg.output_dir = c.out.empty() ? cfg.output_dir : fs::path(c.out);
  const auto cycle = load_cycle_csv(cycle_path);
  SourceLibrary library;
  if (!library_dir.empty()) {
    library = load_library(library_dir);
  } else {
    if (cfg.sources.empty()) throw Error(ErrorKind::InvalidArgument, "compare needs --library or config sources");
    std::vector<DrivingCycle> cycles;
    for (const auto& s : cfg.sources) cycles.push_back(s.load(cfg.params));
    library = prelearn(cycles, cfg);
  }
  const auto run = compare(cycle, library, cfg);
  emit_plot_data(run, cfg.output_dir);
  for (const auto& m : run.report.methods) {
    std::cout << std::left << std::setw(16) << m.name << " fuel " << m.total_fuel << " g (+" << m.fuel_increase_pct
              << "%), cost " << m.grid_cost << '\n';
  }
  const auto& dp = run.report.method("dp");
  const auto& tr = run.report.method("transfer_rl");
  const auto& cv = run.report.method("conventional_rl");
  const bool ordered = dp.grid_cost <= tr.grid_cost && tr.grid_cost <= cv.grid_cost;
  if (!ordered) std::cerr << "warning: cost ordering dp <= transfer_rl <= conventional_rl violated\n";
  return ordered ? kOk : kConstraintFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer-learning energy management for hybrid vehicles"};
  app.require_subcommand(1);

  Common common;
  std::string cycle, report, recipe = "urban", a, b, library, tpm, log, stream;
  std::vector<std::string> cycles;
  double alpha = 0, beta = 0, gamma = 0;
  std::size_t duration = 3000, change_point = 3000;
  std::optional<std::uint64_t> sweeps;
  std::optional<std::size_t> nodes, window;
  std::optional<double> tf, threshold;

  auto* gen = app.add_subcommand("gen-cycle", "Generate a synthetic driving cycle");
  add_common(gen, common, true);
  gen->add_option("--recipe", recipe, "urban | suburban | highway | change_point");
  gen->add_option("--duration", duration, "Samples (s)");
  gen->add_option("--change-point", change_point, "Change-point instant (s)");

  auto* mtf = app.add_subcommand("mtf", "Mode partition and MTF components of a cycle");
  add_common(mtf, common, false);
  mtf->add_option("--cycle", cycle)->required()->check(CLI::ExistingFile);

  auto* tr = app.add_subcommand("transform", "Minimum-jerk cycle with prescribed MTF components");
  add_common(tr, common, true);
  tr->add_option("--cycle", cycle)->required()->check(CLI::ExistingFile);
  tr->add_option("--alpha", alpha)->required();
  tr->add_option("--beta", beta)->required();
  tr->add_option("--gamma", gamma)->required();
  tr->add_option("--report", report, "Residual report (JSON)");

  auto* tp = app.add_subcommand("tpm", "Estimate the power-request transition model");
  add_common(tp, common, true);
  tp->add_option("--cycle", cycle)->required()->check(CLI::ExistingFile);

  auto* im = app.add_subcommand("imn", "Induced matrix norm between two transition models");
  add_common(im, common, false);
  im->add_option("a", a)->required()->check(CLI::ExistingFile);
  im->add_option("b", b)->required()->check(CLI::ExistingFile);

  auto* trn = app.add_subcommand("train", "Q-learning on one cycle");
  add_common(trn, common, true);
  trn->add_option("--cycle", cycle)->required()->check(CLI::ExistingFile);
  trn->add_option("--sweeps", sweeps);
  trn->add_option("--log", log, "Per-sweep convergence log (CSV)");

  auto* xfer = app.add_subcommand("transfer", "Build a transferred Q-table for a target TPM");
  add_common(xfer, common, true);
  xfer->add_option("--library", library)->required()->check(CLI::ExistingDirectory);
  xfer->add_option("--tpm", tpm)->required()->check(CLI::ExistingFile);
  xfer->add_option("--tf", tf, "Transfer factor T_f");

  auto* pre = app.add_subcommand("prelearn", "Train a source library");
  add_common(pre, common, true);
  pre->add_option("--cycle", cycles, "Source cycle CSVs (in addition to config sources)");

  auto* dp = app.add_subcommand("dp", "Dynamic-programming benchmark");
  add_common(dp, common, false);
  dp->add_option("--cycle", cycle)->required()->check(CLI::ExistingFile);
  dp->add_option("--nodes", nodes, "SOC grid nodes");
  dp->add_option("--trace", report, "Trace output (CSV)");

  auto* ad = app.add_subcommand("adapt", "Online adaptation over a stream");
  add_common(ad, common, true);
  ad->add_option("--stream", stream)->required()->check(CLI::ExistingFile);
  ad->add_option("--library", library)->required()->check(CLI::ExistingDirectory);
  ad->add_option("--threshold", threshold);
  ad->add_option("--window", window);
  ad->add_option("--tf", tf);

  auto* cmp = app.add_subcommand("compare", "DP vs transfer RL vs conventional RL");
  add_common(cmp, common, false);
  cmp->add_option("--cycle", cycle)->required()->check(CLI::ExistingFile);
  cmp->add_option("--library", library)->check(CLI::ExistingDirectory);
  cmp->add_option("--threshold", threshold);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kIoError;
  }

  try {
    if (*gen) return run_gen_cycle(common, recipe, duration, change_point);
    if (*mtf) return run_mtf(common, cycle);
    if (*tr) return run_transform(common, cycle, alpha, beta, gamma, report);
    if (*tp) return run_tpm(common, cycle);
    if (*im) return run_imn(common, a, b);
    if (*trn) return run_train(common, cycle, sweeps, log);
    if (*xfer) return run_transfer(common, library, tpm, tf);
    if (*pre) return run_prelearn(common, cycles);
    if (*dp) return run_dp(common, cycle, nodes, report);
    if (*ad) return run_adapt(common, stream, library, threshold, window, tf);
    if (*cmp) return run_compare(common, cycle, library, threshold);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::NoFeasiblePath:
        return kConstraintFailure;
      default:
        return kIoError;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIoError;
  }
  return kOk;
}
