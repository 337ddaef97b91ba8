#include "hevrl/powertrain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hevrl/error.hpp"

namespace hevrl {

namespace {

constexpr double kRpmToRad = std::numbers::pi / 30.0;

// Battery terminal power at a given current, P = V I - r I^2.
double power_at_current(double current, const BatteryParams& b) {
  return b.open_circuit_voltage * current - b.internal_resistance * current * current;
}

}  // namespace

std::size_t GearSchedule::gear_for(double speed) const {
  std::size_t gear = 0;
  while (gear < upshift_speeds.size() && speed >= upshift_speeds[gear]) ++gear;
  return gear;
}

std::size_t GearSchedule::next_gear(double speed, std::size_t previous) const {
  std::size_t gear = std::min(previous, ratios.size() - 1);
  while (gear < upshift_speeds.size() && speed >= upshift_speeds[gear]) ++gear;
  while (gear > 0 && speed < upshift_speeds[gear - 1] - hysteresis) --gear;
  return gear;
}

void PowertrainParams::validate() const {
  body.validate();
  auto in_unit = [](double x) { return x > 0.0 && x <= 1.0; };
  if (!in_unit(transmission_efficiency) || !in_unit(motor.efficiency) ||
      !in_unit(engine.indicated_efficiency)) {
    throw Error(ErrorKind::InvalidArgument, "efficiencies must lie in (0, 1]");
  }
  if (gears.ratios.empty() || gears.upshift_speeds.size() + 1 != gears.ratios.size()) {
    throw Error(ErrorKind::InvalidArgument, "gear schedule needs one upshift speed per extra ratio");
  }
  for (std::size_t i = 1; i < gears.upshift_speeds.size(); ++i) {
    if (!(gears.upshift_speeds[i] > gears.upshift_speeds[i - 1])) {
      throw Error(ErrorKind::InvalidArgument, "upshift speeds must increase");
    }
  }
  if (!(soc_min < soc_max) || soc_ref < soc_min || soc_ref > soc_max || soc_init < soc_min ||
      soc_init > soc_max) {
    throw Error(ErrorKind::InvalidArgument, "SOC bounds must satisfy min <= ref, init <= max");
  }
  if (!(battery.current_min < 0.0 && battery.current_max > 0.0) ||
      !(battery.power_min < 0.0 && battery.power_max > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "battery bounds must straddle zero");
  }
  if (!(battery.capacity_ah > 0.0 && battery.open_circuit_voltage > 0.0 &&
        battery.internal_resistance > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "battery parameters must be positive");
  }
  if (!(engine.max_torque > 0.0 && engine.rated_power > 0.0 && motor.max_torque > 0.0 &&
        motor.max_power > 0.0 && sigma >= 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "component ratings must be positive");
  }
}

std::vector<std::size_t> gear_sequence(const DrivingCycle& cycle, const GearSchedule& gears) {
  std::vector<std::size_t> out(cycle.size());
  std::size_t gear = gears.gear_for(cycle[0]);
  for (std::size_t k = 0; k < cycle.size(); ++k) {
    gear = gears.next_gear(cycle[k], gear);
    out[k] = gear;
  }
  return out;
}

namespace {

double ratio_for(double speed, const PowertrainParams& p, int gear) {
  const std::size_t g = gear < 0 ? p.gears.gear_for(speed) : static_cast<std::size_t>(gear);
  if (g >= p.gears.ratios.size()) throw Error(ErrorKind::IndexOutOfRange, "gear index out of range");
  return p.gears.ratios[g];
}

}  // namespace

double engine_speed(double speed, const PowertrainParams& params, int gear) {
  if (speed < params.gears.launch_speed) return 0.0;
  return speed * ratio_for(speed, params, gear) / params.body.tire_radius;
}

double motor_speed(double speed, const PowertrainParams& params, int gear) {
  if (speed <= 0.0) return 0.0;
  return speed * ratio_for(speed, params, gear) / params.body.tire_radius;
}

double fuel_rate(double torque, double omega, const PowertrainParams& params) {
  const auto& e = params.engine;
  if (torque < 0.0 || torque > e.max_torque) {
    throw Error(ErrorKind::OutOfEnvelope, "engine torque outside [0, max]");
  }
  if (omega < 0.0 || omega > e.max_speed_rpm * kRpmToRad) {
    throw Error(ErrorKind::OutOfEnvelope, "engine speed outside the permitted range");
  }
  if (torque * omega > e.rated_power * (1.0 + 1e-12)) {
    throw Error(ErrorKind::OutOfEnvelope, "engine power above rating");
  }
  if (torque == 0.0 || omega == 0.0) return 0.0;
  return (e.friction_coeff * omega + torque * omega / e.indicated_efficiency) / e.lower_heating_value;
}

double battery_current(double power, const BatteryParams& b) {
  const double disc = b.open_circuit_voltage * b.open_circuit_voltage - 4.0 * b.internal_resistance * power;
  if (disc < 0.0) throw Error(ErrorKind::InfeasiblePower, "battery cannot deliver the requested power");
  return (b.open_circuit_voltage - std::sqrt(disc)) / (2.0 * b.internal_resistance);
}

double battery_step(double power, double soc, double dt, const PowertrainParams& params) {
  const auto& b = params.battery;
  const double current = battery_current(power, b);
  if (power < b.power_min || power > b.power_max) {
    throw Error(ErrorKind::PowerLimit, "battery power outside [P_min, P_max]");
  }
  if (current < b.current_min || current > b.current_max) {
    throw Error(ErrorKind::CurrentLimit, "battery current outside [I_min, I_max]");
  }
  const double next = soc - current * dt / b.capacity_coulombs();
  if (next < params.soc_min || next > params.soc_max) {
    throw Error(ErrorKind::SocLimit, "SOC would leave its permitted range");
  }
  return next;
}

double wheel_power(double shaft_power, const PowertrainParams& params) {
  const double eta = params.transmission_efficiency;
  return shaft_power >= 0.0 ? shaft_power * eta : shaft_power / eta;
}

double charge_penalty(double soc, const PowertrainParams& params) {
  if (soc >= params.soc_ref) return 0.0;
  const double d = soc - params.soc_ref;
  return params.sigma * d * d;
}

StepDemand make_demand(double speed, double speed_next, double dt, const PowertrainParams& params,
                       int gear) {
  StepDemand d;
  d.speed = speed;
  d.dt = dt;
  d.accel = (speed_next - speed) / dt;
  d.power_request = longitudinal_force(speed, d.accel, params.body) * speed;
  d.omega_engine = engine_speed(speed, params, gear);
  d.omega_motor = motor_speed(speed, params, gear);
  return d;
}

std::vector<StepDemand> cycle_demands(const DrivingCycle& cycle, const PowertrainParams& params) {
  const auto gears = gear_sequence(cycle, params.gears);
  std::vector<StepDemand> out(cycle.size());
  for (std::size_t k = 0; k < cycle.size(); ++k) {
    const double a = acceleration(cycle, k);
    out[k] = make_demand(cycle[k], cycle[k] + a * cycle.dt(), cycle.dt(), params,
                         static_cast<int>(gears[k]));
  }
  return out;
}

StepOutcome step(const VehicleState& state, double engine_torque, const StepDemand& demand,
                 const PowertrainParams& params) {
  const auto& eng = params.engine;
  const auto& mot = params.motor;
  const auto& bat = params.battery;
  if (!(engine_torque >= 0.0 && engine_torque <= eng.max_torque)) {
    throw Error(ErrorKind::InvalidArgument, "engine torque action outside [0, max]");
  }
  const double dt = demand.dt;

  StepOutcome out;
  out.p_request = demand.power_request;

  // Engine: off when declutched or outside its speed window; torque saturates
  // at the rated-power hyperbola.
  double omega_e = demand.omega_engine;
  if (omega_e < eng.idle_speed_rpm * kRpmToRad || omega_e > eng.max_speed_rpm * kRpmToRad) omega_e = 0.0;
  double torque = omega_e > 0.0 ? engine_torque : 0.0;
  if (torque * omega_e > eng.rated_power) {
    torque = eng.rated_power / omega_e;
    out.violation = "engine torque capped at rated power";
  }
  out.engine_torque = torque;
  out.p_engine = torque * omega_e;
  out.fuel_g = fuel_rate(torque, omega_e, params) * dt;

  const double eta_t = params.transmission_efficiency;
  const double shaft = demand.power_request >= 0.0 ? demand.power_request / eta_t
                                                   : demand.power_request * eta_t;
  const double wanted_motor = shaft - out.p_engine;

  // Motor shaft-power capability at this speed.
  const double omega_m = demand.omega_motor;
  const double motor_cap = omega_m > mot.max_speed_rpm * kRpmToRad
                               ? 0.0
                               : std::min(mot.max_power, mot.max_torque * omega_m);

  // Battery capability from power, current and SOC-window limits.
  const double q = bat.capacity_coulombs();
  const double i_soc_max = std::max(0.0, (state.soc - params.soc_min) * q / dt);
  const double i_soc_min = std::min(0.0, (state.soc - params.soc_max) * q / dt);
  // P(I) = V I - r I^2 rises up to I = V / 2r, so the binding current is the smallest limit.
  const double i_peak = bat.open_circuit_voltage / (2.0 * bat.internal_resistance);
  const double i_max = std::min({bat.current_max, i_soc_max, i_peak});
  const double i_min = std::max(bat.current_min, i_soc_min);
  const double bat_discharge_max = std::min(bat.power_max, power_at_current(i_max, bat));
  const double bat_charge_max = std::max(bat.power_min, power_at_current(i_min, bat));
  const double motor_max = std::min(motor_cap, bat_discharge_max * mot.efficiency);
  const double motor_min = std::max(-motor_cap, bat_charge_max / mot.efficiency);

  double p_motor = wanted_motor;
  if (p_motor > motor_max) {
    p_motor = motor_max;
    out.feasible = false;
    out.violation = "traction demand exceeds engine and motor capability";
  } else if (p_motor < motor_min) {
    // Surplus the motor cannot absorb goes to the friction brakes.
    p_motor = motor_min;
  }
  out.p_motor = p_motor;
  out.p_battery = p_motor >= 0.0 ? p_motor / mot.efficiency : p_motor * mot.efficiency;
  out.p_brake = demand.power_request - wheel_power(out.p_engine + p_motor, params);

  const double current = out.p_battery == 0.0 ? 0.0 : battery_current(out.p_battery, bat);
  out.soc_next = std::clamp(state.soc - current * dt / q, params.soc_min, params.soc_max);

  out.reward = out.fuel_g + charge_penalty(out.soc_next, params) * dt;
  if (!out.feasible) out.reward += params.infeasible_penalty;
  return out;
}

StepOutcome step(const VehicleState& state, double engine_torque, double speed, double speed_next,
                 const PowertrainParams& params, double dt, int gear) {
  return step(state, engine_torque, make_demand(speed, speed_next, dt, params, gear), params);
}

double PolicyTrace::total_reward() const noexcept {
  double sum = 0.0;
  for (const auto& r : records) sum += r.reward;
  return sum;
}

std::size_t PolicyTrace::infeasible_steps() const noexcept {
  std::size_t n = 0;
  for (const auto& r : records) n += r.feasible ? 0 : 1;
  return n;
}

double total_fuel(const PolicyTrace& trace) noexcept {
  double sum = 0.0;
  for (const auto& r : trace.records) sum += r.fuel_g;
  return sum;
}

PolicyTrace simulate_policy(const DrivingCycle& cycle, const PowertrainParams& params,
                            const TorquePolicy& policy, double soc_init, std::string name) {
  const auto demands = cycle_demands(cycle, params);
  const auto modes = classify_modes(cycle, params.body);
  PolicyTrace trace;
  trace.policy = std::move(name);
  trace.soc_initial = soc_init;
  trace.records.reserve(cycle.size());
  VehicleState state{soc_init, 0};
  for (std::size_t k = 0; k < cycle.size(); ++k) {
    state.step = k;
    const double torque = policy(k, state.soc);
    const StepOutcome o = step(state, torque, demands[k], params);
    TraceRecord r;
    r.t = static_cast<double>(k) * cycle.dt();
    r.speed = cycle[k];
    r.mode = modes[k];
    r.engine_torque = o.engine_torque;
    r.engine_speed = o.p_engine > 0.0 ? demands[k].omega_engine : 0.0;
    r.p_engine = o.p_engine;
    r.p_battery = o.p_battery;
    r.p_brake = o.p_brake;
    r.soc = o.soc_next;
    r.fuel_g = o.fuel_g;
    r.reward = o.reward;
    r.feasible = o.feasible;
    trace.records.push_back(r);
    state.soc = o.soc_next;
  }
  trace.terminal_cost = charge_penalty(state.soc, params);
  return trace;
}

}  // namespace hevrl
