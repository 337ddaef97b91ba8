#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "hevrl/cycle.hpp"

namespace hevrl {

struct EngineParams {
  double max_torque = 900.0;            // N m
  double rated_power = 155e3;           // W
  double idle_speed_rpm = 350.0;
  double max_speed_rpm = 2200.0;
  // Willans-line fuel surrogate.
  double indicated_efficiency = 0.40;
  double lower_heating_value = 42.5e3;  // J/g
  double friction_coeff = 800.0;        // W s/rad
};

struct MotorParams {
  double max_torque = 600.0;     // N m
  double max_power = 90e3;       // W
  double max_speed_rpm = 2400.0;
  double efficiency = 0.95;
};

struct BatteryParams {
  double capacity_ah = 60.0;
  double open_circuit_voltage = 312.5;  // V
  double internal_resistance = 0.1;     // ohm
  double current_min = -200.0;          // A, charging
  double current_max = 200.0;           // A
  double power_min = -60e3;             // W, charging
  double power_max = 90e3;              // W

  double capacity_coulombs() const noexcept { return capacity_ah * 3600.0; }
};

/// Total (gearbox x final drive) ratios. Gear g is engaged from upshift_speeds[g-1];
/// a downshift needs the speed to drop `hysteresis` below that threshold.
struct GearSchedule {
  std::vector<double> ratios{10.0, 6.0, 4.0, 2.8};
  std::vector<double> upshift_speeds{4.0, 9.0, 15.0};
  double hysteresis = 0.5;
  double launch_speed = 2.0;  // engine declutched below this (m/s)

  /// Gear for `speed` ignoring history.
  std::size_t gear_for(double speed) const;
  /// Gear for `speed` given the previously engaged gear.
  std::size_t next_gear(double speed, std::size_t previous) const;
};

struct PowertrainParams {
  VehicleBodyParams body;
  double transmission_efficiency = 0.9;
  EngineParams engine;
  MotorParams motor;
  BatteryParams battery;
  GearSchedule gears;
  double sigma = 10000.0;
  double soc_ref = 0.6;
  double soc_min = 0.3;
  double soc_max = 0.9;
  double soc_init = 0.70;
  /// Cost added to a step whose demand cannot be met within component limits.
  double infeasible_penalty = 1e6;

  void validate() const;
};

/// Gear sequence for a whole cycle, honouring shift hysteresis.
std::vector<std::size_t> gear_sequence(const DrivingCycle& cycle, const GearSchedule& gears);

/// Engine crankshaft speed (rad/s); 0 below the launch speed. `gear` < 0 uses
/// the history-free schedule.
double engine_speed(double speed, const PowertrainParams& params, int gear = -1);
double motor_speed(double speed, const PowertrainParams& params, int gear = -1);

/// Engine fuel mass flow (g/s). Zero when the engine is off (no speed or no
/// torque). Throws OutOfEnvelope beyond the torque, speed or rated-power limits.
double fuel_rate(double torque, double omega, const PowertrainParams& params);

/// Terminal current for a battery output power (A); throws InfeasiblePower
/// when the internal-resistance model has no real solution.
double battery_current(double power, const BatteryParams& battery);

/// SOC after delivering `power` for `dt` seconds. Throws InfeasiblePower,
/// PowerLimit, CurrentLimit or SocLimit.
double battery_step(double power, double soc, double dt, const PowertrainParams& params);

struct VehicleState {
  double soc = 0.70;
  std::size_t step = 0;
};

/// Everything about a step that does not depend on the control decision.
struct StepDemand {
  double speed = 0.0;
  double accel = 0.0;
  double power_request = 0.0;  // W at the wheels
  double omega_engine = 0.0;
  double omega_motor = 0.0;
  double dt = 1.0;
};

StepDemand make_demand(double speed, double speed_next, double dt, const PowertrainParams& params,
                       int gear = -1);
/// Per-step demands for a cycle, using the hysteresis gear sequence.
std::vector<StepDemand> cycle_demands(const DrivingCycle& cycle, const PowertrainParams& params);

struct StepOutcome {
  double fuel_g = 0.0;
  double soc_next = 0.0;
  double p_request = 0.0;
  double p_engine = 0.0;
  double p_motor = 0.0;    // mechanical, motor shaft
  double p_battery = 0.0;  // electrical, battery terminals
  double p_brake = 0.0;    // friction brake power at the wheels (<= 0), or unmet demand (> 0)
  double engine_torque = 0.0;  // after envelope saturation
  double reward = 0.0;
  bool feasible = true;
  std::string violation;
};

/// One quasi-static step: power split, fuel, SOC update and stage cost.
StepOutcome step(const VehicleState& state, double engine_torque, const StepDemand& demand,
                 const PowertrainParams& params);
StepOutcome step(const VehicleState& state, double engine_torque, double speed, double speed_next,
                 const PowertrainParams& params, double dt = 1.0, int gear = -1);

/// Wheel-side contribution of shaft power through the transmission.
double wheel_power(double shaft_power, const PowertrainParams& params);

/// sigma * (soc - soc_ref)^2 below the reference, 0 above.
double charge_penalty(double soc, const PowertrainParams& params);

struct TraceRecord {
  double t = 0.0;
  double speed = 0.0;
  Mode mode = Mode::Idle;
  double engine_torque = 0.0;
  double engine_speed = 0.0;
  double p_engine = 0.0;
  double p_battery = 0.0;
  double p_brake = 0.0;
  double soc = 0.0;  // after the step
  double fuel_g = 0.0;
  double reward = 0.0;
  bool feasible = true;
};

/// Per-step log of a policy driven over a cycle.
struct PolicyTrace {
  std::string policy;
  double soc_initial = 0.0;
  std::vector<TraceRecord> records;
  /// Charge-sustenance penalty on the final SOC, included in total_cost().
  double terminal_cost = 0.0;

  double final_soc() const noexcept { return records.empty() ? soc_initial : records.back().soc; }
  double total_reward() const noexcept;
  double total_cost() const noexcept { return total_reward() + terminal_cost; }
  std::size_t infeasible_steps() const noexcept;
};

double total_fuel(const PolicyTrace& trace) noexcept;

/// Chooses an engine torque for a step given the current SOC.
using TorquePolicy = std::function<double(std::size_t step, double soc)>;

/// Runs `policy` over every step of the cycle from `soc_init`.
PolicyTrace simulate_policy(const DrivingCycle& cycle, const PowertrainParams& params,
                            const TorquePolicy& policy, double soc_init, std::string name = {});

}  // namespace hevrl
