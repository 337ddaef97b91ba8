#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hevrl/agent.hpp"
#include "hevrl/dpbench.hpp"
#include "hevrl/powertrain.hpp"

namespace hevrl {

// ---------------------------------------------------------------- synthetic corpus

enum class Recipe { Urban, Suburban, Highway, ChangePoint };

const char* to_string(Recipe r) noexcept;
Recipe recipe_from_string(const std::string& name);

struct CycleSpec {
  Recipe recipe = Recipe::Urban;
  std::size_t duration = 3000;  // s
  std::uint64_t seed = 1;
  /// ChangePoint only: urban before this instant, highway after.
  std::size_t change_point = 3000;
};

/// Largest acceleration the powertrain can sustain at `speed` (m/s^2),
/// engine and motor at full output.
double traction_capability(double speed, const PowertrainParams& params);

/// Deterministic synthetic cycle at 1 s sampling; every sample ends idle-safe
/// and every acceleration stays within the vehicle's traction capability.
DrivingCycle generate_cycle(const CycleSpec& spec, const PowertrainParams& params = {});

// ---------------------------------------------------------------- configuration

struct CycleSource {
  std::optional<std::filesystem::path> path;
  std::optional<CycleSpec> spec;
  std::string id;

  DrivingCycle load(const PowertrainParams& params) const;
};

struct ExperimentConfig {
  std::vector<CycleSource> sources;
  double imn_threshold = 0.2;
  std::size_t window = 1000;
  double transfer_factor = 0.0;
  std::uint64_t seed = 1;
  LearningConfig learning;
  QTableGrid qgrid;
  std::size_t dp_soc_nodes = 121;
  std::filesystem::path output_dir = "out";
  PowertrainParams params;

  void validate() const;
};

/// JSON config. Every field is optional; unspecified fields keep their defaults.
ExperimentConfig load_config_json(const std::filesystem::path& path);
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& config);

/// Powertrain parameters as JSON overrides on top of the defaults.
PowertrainParams load_params_json(const std::filesystem::path& path);
void save_params_json(const PowertrainParams& params, const std::filesystem::path& path);

// ---------------------------------------------------------------- experiments

/// Estimates a TPM and trains a Q-table per source; entries keep the source order.
SourceLibrary prelearn(const std::vector<DrivingCycle>& cycles, const ExperimentConfig& config);

struct MethodResult {
  std::string name;
  double total_fuel = 0.0;       // g, forward simulation
  double total_cost = 0.0;       // stage costs + terminal penalty, forward simulation
  double grid_cost = 0.0;        // cost under the DP grid model
  double final_soc = 0.0;
  std::size_t infeasible_steps = 0;
  double fuel_increase_pct = 0.0;  // vs the lowest total_fuel
  double cost_increase_pct = 0.0;  // vs the lowest grid_cost
  std::uint64_t transfer_calls = 0;

  bool operator==(const MethodResult&) const = default;
};

struct ImnPoint {
  std::size_t step = 0;
  double imn = 0.0;
  bool updated = false;

  bool operator==(const ImnPoint&) const = default;
};

struct ComparisonReport {
  std::string cycle;
  std::size_t steps = 0;
  double threshold = 0.0;
  std::size_t window = 0;
  std::vector<MethodResult> methods;  // dp, transfer_rl, conventional_rl
  std::size_t initial_source = 0;
  std::vector<std::size_t> update_steps;
  std::vector<ImnPoint> imn_series;

  const MethodResult& method(const std::string& name) const;
  bool operator==(const ComparisonReport&) const = default;
};

/// Wall-clock seconds per arm. Kept apart from the report so reports stay
/// byte-reproducible.
struct ArmTimings {
  double dp = 0.0;
  double transfer_rl = 0.0;
  double conventional_rl = 0.0;
};

struct ComparisonRun {
  ComparisonReport report;
  ArmTimings timings;
  PolicyTrace dp_trace;
  PolicyTrace transfer_trace;
  PolicyTrace conventional_trace;
  std::vector<PolicyUpdate> updates;
};

/// Runs DP, transfer RL and conventional RL concurrently on `cycle`.
ComparisonRun compare(const DrivingCycle& cycle, const SourceLibrary& library, const ExperimentConfig& config);

/// Fills the percentage columns from the totals.
void fill_relative_increases(std::vector<MethodResult>& methods);

/// Writes report.json, timing.json, imn.csv, q_convergence.csv and, per arm,
/// <arm>/trace.csv and <arm>/engine_points.csv under `outdir`.
void emit_plot_data(const ComparisonRun& run, const std::filesystem::path& outdir);

std::string report_to_json_text(const ComparisonReport& report);
ComparisonReport report_from_json_text(const std::string& text);
ComparisonReport load_report_json(const std::filesystem::path& path);

void save_trace_csv(const PolicyTrace& trace, const std::filesystem::path& path);
PolicyTrace load_trace_csv(const std::filesystem::path& path);

}  // namespace hevrl
