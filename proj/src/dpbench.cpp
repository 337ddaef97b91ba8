#include "hevrl/dpbench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hevrl/agent.hpp"
#include "hevrl/error.hpp"

namespace hevrl {

std::vector<double> DpGrid::uniform_nodes(std::size_t n, double lo, double hi) {
  if (n < 2 || !(hi > lo)) throw Error(ErrorKind::InvalidArgument, "need at least two nodes over a nonempty range");
  std::vector<double> nodes(n);
  for (std::size_t i = 0; i < n; ++i) {
    nodes[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  nodes.back() = hi;
  return nodes;
}

DpGrid DpGrid::defaults() { return {uniform_nodes(121, 0.3, 0.9), QTableGrid::default_actions()}; }

void DpGrid::validate() const {
  if (soc_nodes.size() < 2 || actions.empty()) throw Error(ErrorKind::InvalidArgument, "DP grid is empty");
  for (std::size_t i = 1; i < soc_nodes.size(); ++i) {
    if (!(soc_nodes[i] > soc_nodes[i - 1])) throw Error(ErrorKind::InvalidArgument, "SOC nodes must increase");
  }
}

double interpolate(const std::vector<double>& nodes, const double* values, double soc) {
  if (soc <= nodes.front()) return values[0];
  if (soc >= nodes.back()) return values[nodes.size() - 1];
  const auto it = std::upper_bound(nodes.begin(), nodes.end(), soc);
  const auto hi = static_cast<std::size_t>(it - nodes.begin());
  const std::size_t lo = hi - 1;
  const double w = (soc - nodes[lo]) / (nodes[hi] - nodes[lo]);
  return (1.0 - w) * values[lo] + w * values[hi];
}

namespace {

void check_inputs(const PowertrainParams& params, const DpGrid& grid, double soc_init) {
  params.validate();
  grid.validate();
  if (!(soc_init >= params.soc_min && soc_init <= params.soc_max)) {
    throw Error(ErrorKind::InvalidArgument, "initial SOC outside the permitted range");
  }
}

std::vector<double> terminal_row(const PowertrainParams& params, const DpGrid& grid, const DpOptions& opts) {
  std::vector<double> row(grid.soc_nodes.size());
  for (std::size_t i = 0; i < row.size(); ++i) {
    row[i] = opts.terminal_weight * charge_penalty(grid.soc_nodes[i], params);
  }
  return row;
}

}  // namespace

DpSolution solve(std::span<const StepDemand> demands, const PowertrainParams& params, const DpGrid& grid,
                 double soc_init, const DpOptions& opts) {
  check_inputs(params, grid, soc_init);
  const std::size_t n = demands.size();
  const std::size_t nodes = grid.soc_nodes.size();
  DpSolution sol;
  sol.steps = n;
  sol.grid = grid;
  sol.value.resize((n + 1) * nodes);
  sol.policy.assign(n * nodes, 0);
  const auto terminal = terminal_row(params, grid, opts);
  std::copy(terminal.begin(), terminal.end(), sol.value.begin() + static_cast<std::ptrdiff_t>(n * nodes));

  for (std::size_t t = n; t-- > 0;) {
    const double* next = sol.value.data() + (t + 1) * nodes;
    for (std::size_t i = 0; i < nodes; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_a = 0;
      for (std::size_t a = 0; a < grid.actions.size(); ++a) {
        const StepOutcome o = step(VehicleState{grid.soc_nodes[i], t}, grid.actions[a], demands[t], params);
        const double q = o.reward + interpolate(grid.soc_nodes, next, o.soc_next);
        if (q < best) {
          best = q;
          best_a = a;
        }
      }
      sol.value[t * nodes + i] = best;
      sol.policy[t * nodes + i] = best_a;
    }
  }
  sol.optimal_cost = interpolate(grid.soc_nodes, sol.value.data(), soc_init);

  // Forward pass at the continuous SOC.
  sol.trace.policy = "dp";
  sol.trace.soc_initial = soc_init;
  sol.trace.records.reserve(n);
  double soc = soc_init;
  for (std::size_t t = 0; t < n; ++t) {
    const double* next = sol.value.data() + (t + 1) * nodes;
    double best = std::numeric_limits<double>::infinity();
    StepOutcome chosen;
    for (std::size_t a = 0; a < grid.actions.size(); ++a) {
      const StepOutcome o = step(VehicleState{soc, t}, grid.actions[a], demands[t], params);
      const double q = o.reward + interpolate(grid.soc_nodes, next, o.soc_next);
      if (q < best) {
        best = q;
        chosen = o;
      }
    }
    if (t == 0 && !chosen.feasible) {
      throw Error(ErrorKind::NoFeasiblePath, "every action from the initial SOC violates a component limit");
    }
    TraceRecord r;
    r.t = static_cast<double>(t) * demands[t].dt;
    r.speed = demands[t].speed;
    r.engine_torque = chosen.engine_torque;
    r.engine_speed = chosen.p_engine > 0.0 ? demands[t].omega_engine : 0.0;
    r.p_engine = chosen.p_engine;
    r.p_battery = chosen.p_battery;
    r.p_brake = chosen.p_brake;
    r.soc = chosen.soc_next;
    r.fuel_g = chosen.fuel_g;
    r.reward = chosen.reward;
    r.feasible = chosen.feasible;
    sol.trace.records.push_back(r);
    soc = chosen.soc_next;
  }
  sol.trace.terminal_cost = opts.terminal_weight * charge_penalty(soc, params);
  sol.total_fuel = total_fuel(sol.trace);
  return sol;
}

DpSolution solve(const DrivingCycle& cycle, const PowertrainParams& params, const DpGrid& grid, double soc_init,
                 const DpOptions& opts) {
  const auto demands = cycle_demands(cycle, params);
  DpSolution sol = solve(std::span<const StepDemand>(demands), params, grid, soc_init, opts);
  const auto modes = classify_modes(cycle, params.body);
  for (std::size_t t = 0; t < sol.trace.records.size(); ++t) sol.trace.records[t].mode = modes[t];
  return sol;
}

double evaluate_on_grid(const DrivingCycle& cycle, const PowertrainParams& params, const DpGrid& grid,
                        const GridPolicy& policy, double soc_init, const DpOptions& opts) {
  check_inputs(params, grid, soc_init);
  const auto demands = cycle_demands(cycle, params);
  const std::size_t nodes = grid.soc_nodes.size();
  std::vector<double> next = terminal_row(params, grid, opts);
  std::vector<double> current(nodes);
  for (std::size_t t = demands.size(); t-- > 0;) {
    for (std::size_t i = 0; i < nodes; ++i) {
      const std::size_t a = policy(t, grid.soc_nodes[i]);
      if (a >= grid.actions.size()) throw Error(ErrorKind::IndexOutOfRange, "policy returned an unknown action");
      const StepOutcome o = step(VehicleState{grid.soc_nodes[i], t}, grid.actions[a], demands[t], params);
      current[i] = o.reward + interpolate(grid.soc_nodes, next.data(), o.soc_next);
    }
    next.swap(current);
  }
  return interpolate(grid.soc_nodes, next.data(), soc_init);
}

}  // namespace hevrl
