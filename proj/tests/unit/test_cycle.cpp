#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "hevrl/cycle.hpp"
#include "hevrl/error.hpp"

using namespace hevrl;

namespace {

const VehicleBodyParams kBody{};

// dv/dt = -k1^2 v^2 - k2^2 integrated with classical RK4.
double coast_rk4(double v, double dt, const VehicleBodyParams& p, int substeps = 2000) {
  const double k1sq = p.air_density * p.drag_coeff * p.frontal_area / (2.0 * p.mass);
  const double k2sq = p.rolling_coeff * p.gravity;
  auto f = [&](double x) { return -k1sq * x * x - k2sq; };
  const double h = dt / substeps;
  for (int i = 0; i < substeps; ++i) {
    const double a = f(v);
    const double b = f(v + 0.5 * h * a);
    const double c = f(v + 0.5 * h * b);
    const double d = f(v + h * c);
    v += h / 6.0 * (a + 2 * b + 2 * c + d);
  }
  return v;
}

struct Sums {
  double alpha, beta, gamma;
};

// Eqs. for the three components written out sample by sample.
Sums brute_mtf(const std::vector<double>& v, double dt, const ModePartition& modes) {
  double x = 0, cubic = 0, lin = 0, kin = 0;
  for (std::size_t i = 0; i < v.size(); ++i) x += v[i] * dt;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (modes[i] != Mode::Traction) continue;
    cubic += v[i] * v[i] * v[i] * dt;
    lin += v[i] * dt;
    const bool starts = i == 0 || modes[i - 1] != Mode::Traction;
    const bool ends = i + 1 == v.size() || modes[i + 1] != Mode::Traction;
    if (starts) kin -= 0.5 * v[i] * v[i];
    if (ends) kin += 0.5 * v[i] * v[i];
  }
  return {cubic / x, lin / x, kin / x};
}

std::vector<double> sawtooth() {
  std::vector<double> v;
  for (int rep = 0; rep < 3; ++rep) {
    for (int k = 0; k <= 20; ++k) v.push_back(k);
    for (int k = 19; k >= 0; --k) v.push_back(k);
  }
  return v;
}

}  // namespace

TEST_CASE("cycle construction validates its invariants") {
  CHECK_THROWS_AS(DrivingCycle({1.0}, 1.0), Error);
  CHECK_THROWS_AS(DrivingCycle({1.0, 2.0}, 0.0), Error);
  CHECK_THROWS_AS(DrivingCycle({1.0, -0.1}, 1.0), Error);
  CHECK_THROWS_AS(DrivingCycle({1.0, NAN}, 1.0), Error);
  const DrivingCycle c({0, 1, 2, 3}, 0.5, "c");
  CHECK(c.duration() == doctest::Approx(2.0));
  const auto s = c.slice(1, 2);
  CHECK(s.size() == 2);
  CHECK(s[0] == 1.0);
  CHECK_THROWS_AS(c.slice(3, 2), Error);
}

TEST_CASE("longitudinal force with the default body") {
  CHECK(longitudinal_force(10.0, 0.0, kBody) == doctest::Approx(3360.2).epsilon(1e-4));
  CHECK(longitudinal_force(0.0, 0.0, kBody) == 0.0);
  CHECK(longitudinal_force(10.0, -1.0, kBody) == doctest::Approx(-12639.8).epsilon(1e-4));
  const DrivingCycle c({10, 11, 11}, 1.0);
  CHECK(acceleration(c, 0) == 1.0);
  CHECK(acceleration(c, 2) == acceleration(c, 1));
  CHECK(longitudinal_force(c, kBody, 0) == doctest::Approx(longitudinal_force(10.0, 1.0, kBody)));
}

TEST_CASE("coasting velocity against numerical integration") {
  const double v = coasting_velocity(20.0, 1.0, kBody);
  CHECK(v == doctest::Approx(19.78).epsilon(1e-3));
  for (double v0 : {0.5, 3.0, 10.0, 20.0, 35.0}) {
    for (double dt : {0.1, 1.0, 2.0}) {
      const double oracle = coast_rk4(v0, dt, kBody);
      if (oracle > 0.0) CHECK(coasting_velocity(v0, dt, kBody) == doctest::Approx(oracle).epsilon(1e-9));
    }
  }
  CHECK(coasting_velocity(0.0, 1.0, kBody) == 0.0);
  CHECK(coasting_velocity(20.0, 0.0, kBody) == doctest::Approx(20.0).epsilon(1e-14));
  CHECK(coasting_velocity(0.1, 10.0, kBody) == 0.0);
}

TEST_CASE("coasting velocity is monotone in speed and elapsed time") {
  for (double dt = 0.25; dt <= 3.0; dt += 0.25) {
    double prev = -1.0;
    for (double v0 = 0.5; v0 <= 40.0; v0 += 0.5) {
      const double v = coasting_velocity(v0, dt, kBody);
      CHECK(v > prev);
      prev = v;
      CHECK(coasting_velocity(v0, dt + 0.25, kBody) <= v);
    }
  }
}

TEST_CASE("coasting slope matches a central difference") {
  for (double v0 : {2.0, 10.0, 25.0}) {
    const double h = 1e-6;
    const double fd = (coasting_velocity(v0 + h, 1.0, kBody) - coasting_velocity(v0 - h, 1.0, kBody)) / (2 * h);
    CHECK(coasting_velocity_slope(v0, 1.0, kBody) == doctest::Approx(fd).epsilon(1e-6));
  }
  CHECK(coasting_velocity_slope(0.0, 1.0, kBody) == 0.0);
}

TEST_CASE("mode classification") {
  SUBCASE("constant speed is traction") {
    const DrivingCycle c(std::vector<double>(50, 10.0), 1.0);
    for (Mode m : classify_modes(c, kBody)) CHECK(m == Mode::Traction);
  }
  SUBCASE("all zeros are idle") {
    const DrivingCycle c(std::vector<double>(10, 0.0), 1.0);
    for (Mode m : classify_modes(c, kBody)) CHECK(m == Mode::Idle);
  }
  SUBCASE("below the coasting speed is braking, on it is coasting") {
    const double vc = coasting_velocity(20.0, 1.0, kBody);
    const DrivingCycle braking({20.0, 19.0, 0.0}, 1.0);
    CHECK(classify_modes(braking, kBody)[1] == Mode::Braking);
    const DrivingCycle coasting({20.0, vc + 0.005, 0.0}, 1.0);
    CHECK(classify_modes(coasting, kBody)[1] == Mode::Coasting);
    const DrivingCycle traction({20.0, vc + 0.02, 0.0}, 1.0);
    CHECK(classify_modes(traction, kBody)[1] == Mode::Traction);
  }
  SUBCASE("step 0 follows the force sign") {
    CHECK(classify_modes(DrivingCycle({10.0, 12.0}, 1.0), kBody)[0] == Mode::Traction);
    CHECK(classify_modes(DrivingCycle({10.0, 8.0}, 1.0), kBody)[0] == Mode::Braking);
  }
}

TEST_CASE("traction regions are maximal runs") {
  const ModePartition p{Mode::Idle, Mode::Traction, Mode::Traction, Mode::Braking, Mode::Traction, Mode::Idle};
  const auto r = traction_regions(p);
  REQUIRE(r.size() == 2);
  CHECK(r[0].first == 1);
  CHECK(r[0].last == 2);
  CHECK(r[1].first == 4);
  CHECK(r[1].last == 4);
}

TEST_CASE("MTF components") {
  SUBCASE("constant speed") {
    const DrivingCycle c(std::vector<double>(100, 10.0), 1.0);
    const auto m = mtf_components(c, classify_modes(c, kBody));
    CHECK(m.alpha == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(m.beta == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.gamma == doctest::Approx(0.0));
    CHECK(m.distance == doctest::Approx(1000.0));
  }
  SUBCASE("zero distance") {
    const DrivingCycle c(std::vector<double>(5, 0.0), 1.0);
    CHECK_THROWS_AS(mtf_components(c, classify_modes(c, kBody)), Error);
  }
  SUBCASE("sawtooth against the term-by-term oracle") {
    const auto v = sawtooth();
    const DrivingCycle c(v, 1.0);
    const auto modes = classify_modes(c, kBody);
    const auto m = mtf_components(c, modes);
    const auto o = brute_mtf(v, 1.0, modes);
    CHECK(m.alpha == doctest::Approx(o.alpha).epsilon(1e-10));
    CHECK(m.beta == doctest::Approx(o.beta).epsilon(1e-10));
    CHECK(m.gamma == doctest::Approx(o.gamma).epsilon(1e-10));
    CHECK(m.beta >= 0.0);
    CHECK(m.beta <= 1.0);
  }
  SUBCASE("partition length must match") {
    const DrivingCycle c(std::vector<double>(5, 3.0), 1.0);
    CHECK_THROWS_AS(mtf_components(c, ModePartition(4, Mode::Traction)), Error);
  }
}

TEST_CASE("telescoped gamma equals the direct sum of a v dt over traction") {
  const auto v = sawtooth();
  const DrivingCycle c(v, 1.0);
  const auto modes = classify_modes(c, kBody);
  const auto m = mtf_components(c, modes);
  // a_k is the forward difference; v is taken at the interval midpoint.
  double direct = 0.0;
  for (const auto& r : traction_regions(modes)) {
    for (std::size_t k = r.first; k < r.last; ++k) direct += acceleration(c, k) * 0.5 * (v[k] + v[k + 1]) * c.dt();
  }
  CHECK(m.gamma == doctest::Approx(direct / m.distance).epsilon(1e-8));
}

TEST_CASE("halving dt with duplicated samples leaves alpha and beta unchanged") {
  const auto v = sawtooth();
  const DrivingCycle c(v, 1.0);
  const auto modes = classify_modes(c, kBody);
  std::vector<double> v2;
  ModePartition modes2;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v2.insert(v2.end(), {v[i], v[i]});
    modes2.insert(modes2.end(), {modes[i], modes[i]});
  }
  const auto a = mtf_components(c, modes);
  const auto b = mtf_components(DrivingCycle(v2, 0.5), modes2);
  CHECK(b.alpha == doctest::Approx(a.alpha).epsilon(1e-9));
  CHECK(b.beta == doctest::Approx(a.beta).epsilon(1e-9));
}

TEST_CASE("cycle CSV round trip and validation") {
  const auto dir = std::filesystem::temp_directory_path() / "hevrl_test_cycle";
  std::filesystem::create_directories(dir);
  const DrivingCycle c({0.0, 1.25, 2.5, 0.1}, 1.0, "trip");
  save_cycle_csv(c, dir / "trip.csv");
  const auto back = load_cycle_csv(dir / "trip.csv");
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(back[i] == c[i]);
  CHECK(back.dt() == 1.0);

  auto write = [&](const char* name, const char* text) {
    std::ofstream(dir / name) << text;
    return dir / name;
  };
  CHECK_THROWS_AS(load_cycle_csv(write("hdr.csv", "time,v\n0,1\n1,2\n")), Error);
  CHECK_THROWS_AS(load_cycle_csv(write("mono.csv", "t,v\n0,1\n2,2\n1,3\n")), Error);
  CHECK_THROWS_AS(load_cycle_csv(write("neg.csv", "t,v\n0,1\n1,-2\n")), Error);
  CHECK_THROWS_AS(load_cycle_csv(dir / "missing.csv"), Error);
  std::filesystem::remove_all(dir);
}
