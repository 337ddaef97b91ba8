#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hevrl/powertrain.hpp"

namespace hevrl {

struct DpGrid {
  std::vector<double> soc_nodes;  // strictly increasing
  std::vector<double> actions;    // engine torque levels, N m

  /// n nodes uniform over [lo, hi].
  static std::vector<double> uniform_nodes(std::size_t n, double lo, double hi);
  /// 121 SOC nodes over [0.3, 0.9] and the agent's 10 torque levels.
  static DpGrid defaults();
  void validate() const;
};

/// Linear interpolation of node values at `soc`, clamped to the end nodes.
double interpolate(const std::vector<double>& nodes, const double* values, double soc);

struct DpSolution {
  std::size_t steps = 0;
  DpGrid grid;
  /// (steps + 1) x nodes, row-major; the last row is the terminal cost.
  std::vector<double> value;
  /// steps x nodes action indices.
  std::vector<std::size_t> policy;
  double optimal_cost = 0.0;  // interpolated cost-to-go at the initial SOC
  PolicyTrace trace;
  double total_fuel = 0.0;

  double value_at(std::size_t t, std::size_t node) const { return value[t * grid.soc_nodes.size() + node]; }
  std::size_t action_at(std::size_t t, std::size_t node) const { return policy[t * grid.soc_nodes.size() + node]; }
};

struct DpOptions {
  /// Weight on the terminal charge penalty (1 = same as the stage penalty).
  double terminal_weight = 1.0;
};

/// Backward induction over the SOC grid with the stage cost of `step`,
/// followed by a forward pass that re-minimises at the continuous SOC.
/// Throws NoFeasiblePath when every action from the initial SOC is infeasible.
DpSolution solve(const DrivingCycle& cycle, const PowertrainParams& params, const DpGrid& grid,
                 double soc_init, const DpOptions& opts = {});
/// Same, over precomputed step demands; an empty span gives a zero-cost solution.
DpSolution solve(std::span<const StepDemand> demands, const PowertrainParams& params, const DpGrid& grid,
                 double soc_init, const DpOptions& opts = {});

/// Per-step action index as a function of (step, SOC).
using GridPolicy = std::function<std::size_t(std::size_t step, double soc)>;

/// Cost of `policy` under the DP's own model: node values propagated with the
/// same interpolation, read off at `soc_init`. Directly comparable to
/// DpSolution::optimal_cost.
double evaluate_on_grid(const DrivingCycle& cycle, const PowertrainParams& params, const DpGrid& grid,
                        const GridPolicy& policy, double soc_init, const DpOptions& opts = {});

}  // namespace hevrl
