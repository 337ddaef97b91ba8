// Acceptance gate. One PASS/FAIL line per criterion; exit status 1 if any fails.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "hevrl/agent.hpp"
#include "hevrl/cycle.hpp"
#include "hevrl/dpbench.hpp"
#include "hevrl/harness.hpp"
#include "hevrl/markov.hpp"
#include "hevrl/powertrain.hpp"
#include "hevrl/transform.hpp"

using namespace hevrl;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [" << what << "]";
    }
  }
};

std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

// ---------------------------------------------------------------- shared fixtures

ExperimentConfig base_config() {
  ExperimentConfig c;
  c.sources = {
      {std::nullopt, CycleSpec{Recipe::Urban, 3000, 100, 3000}, "urban"},
      {std::nullopt, CycleSpec{Recipe::Suburban, 3000, 101, 3000}, "suburban"},
      {std::nullopt, CycleSpec{Recipe::Highway, 3000, 102, 3000}, "highway"},
  };
  return c;
}

struct Fixture {
  ExperimentConfig config = base_config();
  std::vector<DrivingCycle> sources;
  SourceLibrary library;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture out;
    for (const auto& s : out.config.sources) out.sources.push_back(s.load(out.config.params));
    const auto t0 = Clock::now();
    out.library = prelearn(out.sources, out.config);
    std::printf("  (library pre-learned in %.1f s)\n", seconds_since(t0));
    return out;
  }();
  return f;
}

DrivingCycle change_point_stream(std::uint64_t seed) {
  return generate_cycle({Recipe::ChangePoint, 6000, seed, 3000}, fixture().config.params);
}

std::vector<DrivingCycle> pure_test_cycles() {
  const auto& p = fixture().config.params;
  return {generate_cycle({Recipe::Urban, 3000, 200, 3000}, p),
          generate_cycle({Recipe::Suburban, 3000, 201, 3000}, p),
          generate_cycle({Recipe::Highway, 3000, 202, 3000}, p)};
}

// ---------------------------------------------------------------- 1. IMN oracle

Verdict imn_oracle() {
  Verdict v;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int pair = 0; pair < 100; ++pair) {
    const std::size_t m = 2 + static_cast<std::size_t>(pair % 7);
    std::vector<double> a(m * m), b(m * m);
    for (auto* p : {&a, &b}) {
      for (std::size_t i = 0; i < m; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) sum += (*p)[i * m + j] = u(rng);
        for (std::size_t j = 0; j < m; ++j) (*p)[i * m + j] /= sum;
      }
    }
    Eigen::MatrixXd d(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) d(i, j) = a[i * m + j] - b[i * m + j];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(d.transpose() * d);
    const double oracle = std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
    worst = std::max(worst, std::abs(spectral_norm_of_difference(a, b, m) - oracle));
  }
  const std::vector<double> id{1, 0, 0, 1}, swap{0, 1, 1, 0};
  const double two = spectral_norm_of_difference(id, swap, 2);
  const double secs = seconds_since(t0);
  v.require(worst <= 1e-8, "max deviation " + fmt(worst));
  v.require(std::abs(two - 2.0) <= 1e-12, "2x2 case " + fmt(two, 17));
  v.require(secs < 5.0, "runtime " + fmt(secs) + " s");
  v.detail << " max |imn - oracle| = " << fmt(worst) << ", 2x2 = " << fmt(two, 17) << ", " << fmt(secs) << " s";
  return v;
}

// ---------------------------------------------------------------- 2. TPM counting

Verdict tpm_counting() {
  Verdict v;
  const auto g = QuantizerGrid::defaults();
  const PowertrainParams params;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> sequences;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> pw(-200e3, 320e3), sp(0.0, 30.0);
  for (int s = 0; s < 3; ++s) {
    std::vector<double> p(10000), w(10000);
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] = pw(rng);
      w[k] = sp(rng);
    }
    sequences.emplace_back(std::move(p), std::move(w));
  }
  for (Recipe r : {Recipe::Urban, Recipe::Suburban, Recipe::Highway}) {
    const auto c = generate_cycle({r, 10000, 500, 3000}, params);
    sequences.emplace_back(power_request_series(c, params.body),
                           std::vector<double>(c.speeds().begin(), c.speeds().end()));
  }
  std::size_t mismatches = 0;
  double worst_row = 0.0;
  for (const auto& [p, w] : sequences) {
    const auto m = estimate_tpm(p, w, g);
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::uint64_t> counts;
    std::map<std::pair<std::size_t, std::size_t>, std::uint64_t> rows;
    for (std::size_t k = 0; k + 1 < p.size(); ++k) {
      ++counts[{g.speed_bin(w[k]), g.power_bin(p[k]), g.power_bin(p[k + 1])}];
      ++rows[{g.speed_bin(w[k]), g.power_bin(p[k])}];
    }
    for (std::size_t b = 0; b < g.speed_count(); ++b) {
      for (std::size_t i = 0; i < g.power_count(); ++i) {
        const auto r = rows.find({b, i});
        double sum = 0.0;
        for (std::size_t j = 0; j < g.power_count(); ++j) {
          const auto c = counts.find({b, i, j});
          const std::uint64_t n = c == counts.end() ? 0 : c->second;
          const double prob = r == rows.end() ? (i == j ? 1.0 : 0.0)
                                              : static_cast<double>(n) / static_cast<double>(r->second);
          if (m.count(b, i, j) != n || m.probability(b, i, j) != prob) ++mismatches;
          sum += m.probability(b, i, j);
        }
        if (r != rows.end()) worst_row = std::max(worst_row, std::abs(sum - 1.0));
      }
    }
  }
  v.require(mismatches == 0, std::to_string(mismatches) + " entries differ from the counting oracle");
  v.require(worst_row <= 1e-12, "row sum error " + fmt(worst_row));
  v.detail << " " << sequences.size() << " sequences of 10000 steps, 0 mismatches required, max row-sum error "
           << fmt(worst_row);
  return v;
}

// ---------------------------------------------------------------- 3. transformation audit

Verdict transform_audit() {
  Verdict v;
  const PowertrainParams params;
  const auto& body = params.body;
  int cases = 0;
  double worst_mtf = 0.0, worst_time = 0.0;
  for (auto [recipe, seed] : {std::pair{Recipe::Urban, 40}, std::pair{Recipe::Suburban, 41}, std::pair{Recipe::Highway, 42}}) {
    const auto primitive = generate_cycle({recipe, 1000, static_cast<std::uint64_t>(seed), 3000}, params);
    const auto modes = classify_modes(primitive, body);
    const auto base = TransformTargets::from(mtf_components(primitive, modes));
    const double primitive_jerk = jerk_cost(primitive);

    std::vector<std::pair<std::string, TransformTargets>> targets{{"identity", base}};
    for (double f : {0.9, 1.1}) {
      targets.push_back({"alpha*" + fmt(f), {base.alpha * f, base.beta, base.gamma}});
      targets.push_back({"beta*" + fmt(f), {base.alpha, base.beta * f, base.gamma}});
      targets.push_back({"gamma*" + fmt(f), {base.alpha, base.beta, base.gamma * f}});
    }
    for (const auto& [label, t] : targets) {
      ++cases;
      const std::string where = std::string(to_string(recipe)) + " " + label;
      if (t.beta > 1.0) {
        v.require(false, where + ": target beta above 1");
        continue;
      }
      const auto t0 = Clock::now();
      const auto r = transform_cycle(primitive, body, t);
      const double secs = seconds_since(t0);
      worst_time = std::max(worst_time, secs);
      const auto res = constraint_residuals(r.transformed, modes, t, body);
      // Recomputed twice: under the primitive's partition and under a fresh classification.
      double err = 0.0;
      for (const auto& part : {modes, classify_modes(r.transformed, body)}) {
        const auto m = mtf_components(r.transformed, part);
        err = std::max({err, std::abs(m.alpha - t.alpha) / std::abs(t.alpha),
                        std::abs(m.beta - t.beta) / std::abs(t.beta),
                        std::abs(m.gamma - t.gamma) / std::max(std::abs(t.gamma), 1e-12)});
      }
      worst_mtf = std::max(worst_mtf, err);
      v.require(r.converged, where + ": not converged (" + r.message + ")");
      v.require(equalities_satisfied(res, t), where + ": equality residual above 1e-3");
      v.require(res.max_violation <= 1e-6, where + ": band violation " + fmt(res.max_violation));
      v.require(err <= 0.01, where + ": MTF error " + fmt(err));
      v.require(secs < 120.0, where + ": runtime " + fmt(secs) + " s");
      if (label == "identity") v.require(r.cost <= primitive_jerk + 1e-9, where + ": cost above primitive jerk");
    }
  }
  v.detail << " " << cases << " cases, max MTF relative error " << fmt(worst_mtf) << ", slowest " << fmt(worst_time)
           << " s";
  return v;
}

// ---------------------------------------------------------------- 4. DP exactness and ordering

struct Enumerator {
  const std::vector<StepDemand>& demands;
  const PowertrainParams& params;
  const DpGrid& grid;

  double node(std::size_t t, std::size_t i) const {
    const double soc = grid.soc_nodes[i];
    if (t == demands.size()) return charge_penalty(soc, params);
    double best = std::numeric_limits<double>::infinity();
    for (double torque : grid.actions) {
      const auto o = step(VehicleState{soc, t}, torque, demands[t], params);
      best = std::min(best, o.reward + at(t + 1, o.soc_next));
    }
    return best;
  }
  double at(std::size_t t, double soc) const {
    const auto& n = grid.soc_nodes;
    if (soc <= n.front()) return node(t, 0);
    if (soc >= n.back()) return node(t, n.size() - 1);
    std::size_t hi = 1;
    while (n[hi] <= soc) ++hi;
    const double w = (soc - n[hi - 1]) / (n[hi] - n[hi - 1]);
    return (1.0 - w) * node(t, hi - 1) + w * node(t, hi);
  }
};

std::map<std::uint64_t, ComparisonRun> g_stream_runs;

const ComparisonRun& stream_run(std::uint64_t seed) {
  auto it = g_stream_runs.find(seed);
  if (it == g_stream_runs.end()) {
    it = g_stream_runs.emplace(seed, compare(change_point_stream(seed), fixture().library, fixture().config)).first;
  }
  return it->second;
}

Verdict dp_exactness() {
  Verdict v;
  const PowertrainParams params;
  const DpGrid grid{DpGrid::uniform_nodes(5, 0.3, 0.9), {0.0, 350.0, 800.0}};
  std::size_t instances = 0;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> start(2.5, 8.0), acc(-0.6, 0.4), soc0(0.32, 0.88);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> speeds{start(rng)};
    for (int k = 1; k < 6; ++k) speeds.push_back(std::max(0.0, speeds.back() + acc(rng)));
    const DrivingCycle cycle(speeds, 1.0);
    const auto demands = cycle_demands(cycle, params);
    const Enumerator brute{demands, params, grid};
    const double s0 = soc0(rng);
    const auto sol = solve(cycle, params, grid, s0);
    ++instances;
    bool exact = sol.optimal_cost == brute.at(0, s0);
    for (std::size_t t = 0; t <= 6; ++t)
      for (std::size_t i = 0; i < 5; ++i) exact = exact && sol.value_at(t, i) == brute.node(t, i);
    v.require(exact, "horizon-6 instance " + std::to_string(trial) + " differs from enumeration");
  }

  std::size_t strict = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto& rep = stream_run(seed).report;
    const double dp = rep.method("dp").grid_cost;
    const double tr = rep.method("transfer_rl").grid_cost;
    const double cv = rep.method("conventional_rl").grid_cost;
    v.require(dp <= tr && tr <= cv, "ordering on change-point seed " + std::to_string(seed));
    if (tr < cv) ++strict;
    v.detail << " cp" << seed << "=(" << fmt(dp, 6) << ", " << fmt(tr, 6) << ", " << fmt(cv, 6) << ")";
  }
  v.require(strict >= 4, "strict middle inequality on " + std::to_string(strict) + " of 5 seeds");
  for (const auto& c : pure_test_cycles()) {
    const auto rep = compare(c, fixture().library, fixture().config).report;
    const double dp = rep.method("dp").grid_cost;
    const double tr = rep.method("transfer_rl").grid_cost;
    const double cv = rep.method("conventional_rl").grid_cost;
    v.require(dp <= tr && tr <= cv, "ordering on " + c.name());
    v.detail << " " << c.name() << "=(" << fmt(dp, 6) << ", " << fmt(tr, 6) << ", " << fmt(cv, 6) << ")";
  }
  v.detail << "; " << instances << " enumeration instances bit-exact, strict middle on " << strict << "/5";
  return v;
}

// ---------------------------------------------------------------- 5. jumpstart

Verdict jumpstart() {
  Verdict v;
  const auto& fx = fixture();
  const auto held_out = generate_cycle({Recipe::Suburban, 3000, 300, 3000}, fx.config.params);
  const auto tpm = estimate_tpm(held_out, fx.config.params.body, fx.config.qgrid.demand);
  const auto weights = transfer_weights(fx.library, tpm, 0.0);
  const QTable warm_start = transfer_q(fx.library, weights);
  v.detail << " weights=(";
  for (std::size_t i = 0; i < weights.deltas.size(); ++i) v.detail << (i ? ", " : "") << fmt(weights.deltas[i], 3);
  v.detail << ")";

  std::size_t first_wins = 0, threshold_wins = 0, discrepancy_ok = 0;
  std::size_t worst_violations = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    LearningConfig lc = fx.config.learning;
    lc.sweeps = 1000;
    lc.seed = seed;
    const auto cold = train(held_out, fx.config.params, lc, fx.config.qgrid);
    const auto warm = train(held_out, fx.config.params, lc, fx.config.qgrid, warm_start);

    if (warm.log.front().accumulated_reward < cold.log.front().accumulated_reward) ++first_wins;
    const double threshold = 0.5 * (cold.log.front().accumulated_reward + cold.log.back().accumulated_reward);
    auto reach = [&](const std::vector<SweepLog>& log) {
      for (const auto& s : log)
        if (s.accumulated_reward <= threshold) return s.sweep;
      return std::uint64_t{log.size()};
    };
    const auto cold_reach = reach(cold.log), warm_reach = reach(warm.log);
    if (warm_reach < cold_reach) ++threshold_wins;

    std::size_t violations = 0;
    double warm_sum = 0.0, cold_sum = 0.0;
    for (std::size_t k = 11; k < cold.log.size(); ++k) {
      if (warm.log[k].mean_discrepancy > 1.05 * cold.log[k].mean_discrepancy) ++violations;
      warm_sum += warm.log[k].mean_discrepancy;
      cold_sum += cold.log[k].mean_discrepancy;
    }
    if (violations == 0) ++discrepancy_ok;
    worst_violations = std::max(worst_violations, violations);
    v.detail << " s" << seed << ":first " << fmt(warm.log.front().accumulated_reward, 6) << "<"
             << fmt(cold.log.front().accumulated_reward, 6) << " reach " << warm_reach << "/" << cold_reach
             << " disc-violations " << violations << " (mean ratio " << fmt(warm_sum / cold_sum, 3) << ")";
  }
  v.require(first_wins >= 4, "first-sweep cost better on " + std::to_string(first_wins) + "/5");
  v.require(threshold_wins >= 4, "sweeps-to-threshold better on " + std::to_string(threshold_wins) + "/5");
  v.require(discrepancy_ok == 5, "discrepancy above 1.05x cold after sweep 10 on " + std::to_string(5 - discrepancy_ok) +
                                     "/5 seeds (worst " + std::to_string(worst_violations) + " sweeps)");
  return v;
}

// ---------------------------------------------------------------- 6. threshold monotonicity

Verdict threshold_monotonicity() {
  Verdict v;
  const auto& fx = fixture();
  std::vector<std::pair<std::string, DrivingCycle>> streams;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) streams.emplace_back("cp" + std::to_string(seed), change_point_stream(seed));
  for (auto& c : pure_test_cycles()) streams.emplace_back(c.name(), c);

  for (const auto& [name, stream] : streams) {
    std::vector<std::size_t> counts;
    std::vector<std::size_t> steps_at_02;
    for (double th : {0.1, 0.2, 0.3}) {
      AdaptOptions opts;
      opts.threshold = th;
      opts.window = fx.config.window;
      opts.transfer_factor = fx.config.transfer_factor;
      const auto r = adapt_online(stream, fx.library, opts, fx.config.params, fx.config.learning);
      counts.push_back(r.updates.size());
      if (th == 0.2)
        for (const auto& u : r.updates) steps_at_02.push_back(u.step);
    }
    v.require(counts[0] >= counts[1] && counts[1] >= counts[2], name + " counts not monotone");
    if (name.rfind("cp", 0) == 0) {
      v.require(steps_at_02 == std::vector<std::size_t>{4000}, name + " update steps at 0.2 differ from {4000}");
    }
    v.detail << " " << name << "=" << counts[0] << "/" << counts[1] << "/" << counts[2];
  }
  return v;
}

// ---------------------------------------------------------------- 7. transfer-weight algebra

Verdict transfer_algebra() {
  Verdict v;
  const auto a = transfer_weights({0.1, 0.3}, 0.0);
  v.require(std::abs(a.deltas[0] - 1.0) <= 1e-9 && std::abs(a.deltas[1]) <= 1e-9, "T_f=0 case");
  const auto b = transfer_weights({0.25, 0.25, 0.25}, 0.0);
  for (double d : b.deltas) v.require(std::abs(d - 1.0 / 3.0) <= 1e-9, "equal-distance case");
  const auto c = transfer_weights({0.1, 0.3}, 100.0);
  // Numerators (100.3 - 0.1, 100.3 - 0.3) over their sum.
  v.require(std::abs(c.deltas[0] - 100.2 / 200.2) <= 1e-9 && std::abs(c.deltas[1] - 100.0 / 200.2) <= 1e-9,
            "T_f=100 case");
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> d(0.0, 3.0), tf(0.0, 10.0);
  double worst_sum = 0.0;
  bool nonneg = true;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> dist(2 + trial % 7);
    for (double& x : dist) x = d(rng);
    const auto w = transfer_weights(dist, trial % 4 == 0 ? 0.0 : tf(rng));
    double sum = 0.0;
    for (double x : w.deltas) {
      sum += x;
      nonneg = nonneg && x >= 0.0;
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  v.require(worst_sum <= 1e-12, "sum error " + fmt(worst_sum));
  v.require(nonneg, "negative weight");
  v.detail << " T_f=100 -> (" << fmt(c.deltas[0], 10) << ", " << fmt(c.deltas[1], 10)
           << "), 1000 random instances, max |sum-1| = " << fmt(worst_sum);
  return v;
}

// ---------------------------------------------------------------- 8. charge sustenance

Verdict charge_sustenance() {
  Verdict v;
  const auto& fx = fixture();
  const auto& p = fx.config.params;
  v.require(p.sigma == 10000.0 && p.soc_init == 0.70 && p.soc_ref == 0.6, "unexpected SOC settings");
  for (std::size_t i = 0; i < fx.library.size(); ++i) {
    const auto trace = simulate_greedy(fx.sources[i], p, fx.library.entries[i].q, p.soc_init);
    const double end = trace.final_soc();
    v.require(std::abs(end - p.soc_ref) <= 0.05, fx.library.entries[i].id + " ends at " + fmt(end));
    v.detail << " " << fx.library.entries[i].id << "=" << fmt(end);
  }
  return v;
}

// ---------------------------------------------------------------- 9. determinism and runtime

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism_runtime() {
  Verdict v;
  const auto& fx = fixture();
  const auto cycle = generate_cycle({Recipe::ChangePoint, 10000, 7, 5000}, fx.config.params);
  const auto dir = std::filesystem::temp_directory_path() / "hevrl_acceptance_compare";
  std::filesystem::remove_all(dir);
  double worst = 0.0;
  ArmTimings timings;
  for (const char* run : {"a", "b"}) {
    const auto t0 = Clock::now();
    const auto r = compare(cycle, fx.library, fx.config);
    emit_plot_data(r, dir / run);
    worst = std::max(worst, seconds_since(t0));
    timings = r.timings;
  }
  const bool same = read_all(dir / "a" / "report.json") == read_all(dir / "b" / "report.json");
  v.require(same, "report.json differs between runs");
  v.require(worst < 600.0, "runtime " + fmt(worst) + " s");
  v.require(timings.transfer_rl < timings.dp, "transfer RL not faster than DP");
  v.detail << " compare on 10000 s in " << fmt(worst) << " s, dp " << fmt(timings.dp) << " s, transfer "
           << fmt(timings.transfer_rl) << " s, reports identical: " << (same ? "yes" : "no");
  std::filesystem::remove_all(dir);
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"1 IMN oracle equivalence", imn_oracle},
      {"2 TPM correctness", tpm_counting},
      {"3 transformation audit", transform_audit},
      {"4 DP exactness and cost ordering", dp_exactness},
      {"5 jumpstart", jumpstart},
      {"6 threshold monotonicity", threshold_monotonicity},
      {"7 transfer-weight algebra", transfer_algebra},
      {"8 charge sustenance", charge_sustenance},
      {"9 determinism and runtime", determinism_runtime},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << " exception: " << e.what();
    }
    std::printf("%s criterion %s (%.1f s):%s\n", v.pass ? "PASS" : "FAIL", name, seconds_since(t0),
                v.detail.str().c_str());
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
