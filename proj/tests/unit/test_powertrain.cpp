#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "hevrl/error.hpp"
#include "hevrl/powertrain.hpp"

using namespace hevrl;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

DrivingCycle ramp_cycle() {
  std::vector<double> v;
  for (int k = 0; k < 5; ++k) v.push_back(0.0);
  for (int k = 1; k <= 20; ++k) v.push_back(0.8 * k);
  for (int k = 0; k < 30; ++k) v.push_back(16.0);
  for (int k = 1; k <= 16; ++k) v.push_back(16.0 - k);
  for (int k = 0; k < 5; ++k) v.push_back(0.0);
  return DrivingCycle(v, 1.0, "ramp");
}

}  // namespace

TEST_CASE("default parameters validate") {
  PowertrainParams p;
  CHECK_NOTHROW(p.validate());
  p.soc_init = 0.95;
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.gears.upshift_speeds = {4.0, 3.0, 15.0};
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.transmission_efficiency = 1.2;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("gear schedule and hysteresis") {
  const GearSchedule g;
  CHECK(g.gear_for(0.0) == 0);
  CHECK(g.gear_for(4.0) == 1);
  CHECK(g.gear_for(8.8) == 1);
  CHECK(g.gear_for(30.0) == 3);
  CHECK(g.next_gear(8.8, 2) == 2);  // inside the hysteresis band
  CHECK(g.next_gear(8.4, 2) == 1);
  CHECK(g.next_gear(9.0, 1) == 2);
  const auto seq = gear_sequence(DrivingCycle({3.0, 5.0, 9.5, 8.7, 8.2, 16.0}, 1.0), g);
  CHECK(seq == std::vector<std::size_t>{0, 1, 2, 2, 1, 3});
}

TEST_CASE("shaft speeds") {
  const PowertrainParams p;
  CHECK(engine_speed(1.0, p) == 0.0);  // declutched
  CHECK(motor_speed(1.0, p) == doctest::Approx(10.0 / 0.508));
  CHECK(engine_speed(10.0, p) == doctest::Approx(10.0 * 4.0 / 0.508));
  CHECK(engine_speed(10.0, p, 1) == doctest::Approx(10.0 * 6.0 / 0.508));
  CHECK(kind_of([&] { engine_speed(10.0, p, 7); }) == ErrorKind::IndexOutOfRange);
}

TEST_CASE("fuel rate follows the Willans line") {
  const PowertrainParams p;
  const auto& e = p.engine;
  for (double torque : {50.0, 200.0, 600.0}) {
    for (double omega : {80.0, 150.0, 200.0}) {
      if (torque * omega > e.rated_power) continue;
      const double oracle = (e.friction_coeff * omega + torque * omega / e.indicated_efficiency) /
                            e.lower_heating_value;
      CHECK(fuel_rate(torque, omega, p) == doctest::Approx(oracle).epsilon(1e-14));
    }
  }
  CHECK(fuel_rate(0.0, 150.0, p) == 0.0);
  CHECK(fuel_rate(300.0, 0.0, p) == 0.0);
  CHECK(kind_of([&] { fuel_rate(901.0, 100.0, p); }) == ErrorKind::OutOfEnvelope);
  CHECK(kind_of([&] { fuel_rate(-1.0, 100.0, p); }) == ErrorKind::OutOfEnvelope);
  CHECK(kind_of([&] { fuel_rate(100.0, 2300.0 * std::numbers::pi / 30.0, p); }) == ErrorKind::OutOfEnvelope);
  CHECK(kind_of([&] { fuel_rate(900.0, 200.0, p); }) == ErrorKind::OutOfEnvelope);
}

TEST_CASE("battery current solves the internal-resistance model") {
  const BatteryParams b;
  for (double power : {-60e3, -10e3, 0.0, 5e3, 50e3, 90e3, 200e3}) {
    const double i = battery_current(power, b);
    CHECK(b.open_circuit_voltage * i - b.internal_resistance * i * i == doctest::Approx(power).epsilon(1e-10));
    CHECK(i <= b.open_circuit_voltage / (2.0 * b.internal_resistance));
  }
  const double peak = b.open_circuit_voltage * b.open_circuit_voltage / (4.0 * b.internal_resistance);
  CHECK_NOTHROW(battery_current(peak, b));
  CHECK(kind_of([&] { battery_current(300e3, b); }) == ErrorKind::InfeasiblePower);
}

TEST_CASE("battery step limits") {
  const PowertrainParams p;
  const double q = p.battery.capacity_coulombs();
  const double i = battery_current(20e3, p.battery);
  CHECK(battery_step(20e3, 0.6, 1.0, p) == doctest::Approx(0.6 - i / q).epsilon(1e-14));
  CHECK(battery_step(-20e3, 0.6, 1.0, p) > 0.6);
  CHECK(kind_of([&] { battery_step(300e3, 0.6, 1.0, p); }) == ErrorKind::InfeasiblePower);
  CHECK(kind_of([&] { battery_step(100e3, 0.6, 1.0, p); }) == ErrorKind::PowerLimit);
  CHECK(kind_of([&] { battery_step(-70e3, 0.6, 1.0, p); }) == ErrorKind::PowerLimit);
  CHECK(kind_of([&] { battery_step(80e3, 0.6, 1.0, p); }) == ErrorKind::CurrentLimit);
  CHECK(kind_of([&] { battery_step(30e3, 0.3001, 1.0, p); }) == ErrorKind::SocLimit);
  CHECK(kind_of([&] { battery_step(-30e3, 0.8999, 1.0, p); }) == ErrorKind::SocLimit);
}

TEST_CASE("charge penalty is one-sided") {
  const PowertrainParams p;
  CHECK(charge_penalty(0.7, p) == 0.0);
  CHECK(charge_penalty(0.6, p) == 0.0);
  CHECK(charge_penalty(0.5, p) == doctest::Approx(10000.0 * 0.01));
}

TEST_CASE("step power balance") {
  const PowertrainParams p;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> speed(0.0, 25.0), accel(-1.5, 1.2), torque(0.0, 900.0),
      soc(0.3, 0.9);
  for (int trial = 0; trial < 2000; ++trial) {
    const double v = speed(rng);
    const double vn = std::max(0.0, v + accel(rng));
    const VehicleState s{soc(rng), 0};
    const auto o = step(s, torque(rng), v, vn, p);
    CHECK(o.soc_next >= p.soc_min);
    CHECK(o.soc_next <= p.soc_max);
    CHECK(o.fuel_g >= 0.0);
    CHECK(o.p_engine <= p.engine.rated_power * (1.0 + 1e-12));
    CHECK(o.p_request == doctest::Approx(wheel_power(o.p_engine + o.p_motor, p) + o.p_brake).epsilon(1e-9));
    if (o.feasible) {
      CHECK(o.p_brake <= 1e-6);
      CHECK(o.reward == doctest::Approx(o.fuel_g + charge_penalty(o.soc_next, p)).epsilon(1e-12));
    } else {
      CHECK(o.p_brake > 0.0);
      CHECK(o.reward >= p.infeasible_penalty);
    }
  }
}

TEST_CASE("engine is off while declutched") {
  const PowertrainParams p;
  const auto o = step({0.6, 0}, 500.0, 1.0, 1.5, p);
  CHECK(o.p_engine == 0.0);
  CHECK(o.fuel_g == 0.0);
  CHECK(o.engine_torque == 0.0);
}

TEST_CASE("regeneration charges the battery") {
  const PowertrainParams p;
  const auto o = step({0.6, 0}, 0.0, 15.0, 14.0, p);
  CHECK(o.p_request < 0.0);
  CHECK(o.p_battery < 0.0);
  CHECK(o.soc_next > 0.6);
  CHECK(o.feasible);
}

TEST_CASE("unmeetable demand is penalised") {
  const PowertrainParams p;
  const auto o = step({0.6, 0}, 0.0, 20.0, 23.0, p);
  CHECK_FALSE(o.feasible);
  CHECK(o.reward >= p.infeasible_penalty);
  CHECK(kind_of([&] { step({0.6, 0}, 950.0, 20.0, 20.0, p); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("simulate_policy totals match the record folds") {
  const PowertrainParams p;
  const auto cycle = ramp_cycle();
  const auto trace = simulate_policy(
      cycle, p, [](std::size_t k, double soc) { return soc < 0.6 ? 400.0 : 100.0 * static_cast<double>(k % 4); },
      0.62, "test");
  REQUIRE(trace.records.size() == cycle.size());
  double fuel = 0.0, reward = 0.0;
  std::size_t bad = 0;
  double soc = 0.62;
  for (std::size_t k = 0; k < trace.records.size(); ++k) {
    const auto& r = trace.records[k];
    fuel += r.fuel_g;
    reward += r.reward;
    bad += r.feasible ? 0 : 1;
    CHECK(r.t == static_cast<double>(k));
    CHECK(r.speed == cycle[k]);
    // Each step starts from the previous SOC.
    const auto o = step({soc, k}, r.engine_torque > 0.0 ? r.engine_torque : 0.0, cycle_demands(cycle, p)[k], p);
    CHECK(o.soc_next == doctest::Approx(r.soc).epsilon(1e-12));
    soc = r.soc;
  }
  CHECK(total_fuel(trace) == fuel);
  CHECK(trace.total_reward() == reward);
  CHECK(trace.infeasible_steps() == bad);
  CHECK(trace.final_soc() == trace.records.back().soc);
  CHECK(trace.terminal_cost == charge_penalty(trace.final_soc(), p));
  CHECK(trace.total_cost() == reward + trace.terminal_cost);
}

TEST_CASE("fuel rate is nondecreasing in torque") {
  const PowertrainParams p;
  constexpr double rpm = std::numbers::pi / 30.0;
  for (double speed_rpm : {800.0, 1200.0, 1600.0}) {
    const double omega = speed_rpm * rpm;
    const double t_cap = std::min(p.engine.max_torque, p.engine.rated_power / omega);
    double prev = 0.0;
    for (int k = 0; k <= 100; ++k) {
      const double f = fuel_rate(t_cap * k / 100.0, omega, p);
      CHECK(f >= prev);
      prev = f;
    }
  }
}

TEST_CASE("stage cost splits into fuel and charge penalty") {
  const PowertrainParams p;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> speed(2.0, 20.0), accel(-0.5, 0.5), torque(0.0, 900.0),
      soc(0.35, 0.85);
  int below = 0, above = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double v = speed(rng);
    const auto o = step(VehicleState{soc(rng), 0}, torque(rng), v, std::max(0.0, v + accel(rng)), p);
    if (!o.feasible) continue;
    const double extra = o.reward - o.fuel_g;
    CHECK(extra >= 0.0);
    if (o.soc_next >= p.soc_ref) {
      CHECK(extra == 0.0);
      ++above;
    } else {
      const double d = o.soc_next - p.soc_ref;
      CHECK(extra == doctest::Approx(p.sigma * d * d).epsilon(1e-12));
      ++below;
    }
  }
  CHECK(below > 0);
  CHECK(above > 0);
}

TEST_CASE("empty trace totals") {
  PolicyTrace trace;
  trace.soc_initial = 0.6;
  CHECK(total_fuel(trace) == 0.0);
  CHECK(trace.total_reward() == 0.0);
  CHECK(trace.final_soc() == 0.6);
}
