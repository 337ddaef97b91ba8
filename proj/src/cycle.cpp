#include "hevrl/cycle.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hevrl/error.hpp"

namespace hevrl {

DrivingCycle::DrivingCycle(std::vector<double> speeds, double dt, std::string name)
    : dt_(dt), speeds_(std::move(speeds)), name_(std::move(name)) {
  if (!(dt_ > 0.0) || !std::isfinite(dt_)) {
    throw Error(ErrorKind::InvalidArgument, "cycle dt must be positive");
  }
  if (speeds_.size() < 2) {
    throw Error(ErrorKind::InvalidArgument, "cycle needs at least two samples");
  }
  for (std::size_t k = 0; k < speeds_.size(); ++k) {
    if (!std::isfinite(speeds_[k]) || speeds_[k] < 0.0) {
      throw Error(ErrorKind::InvalidArgument,
                  "speed at step " + std::to_string(k) + " is negative or not finite");
    }
  }
}

DrivingCycle DrivingCycle::slice(std::size_t first, std::size_t count, std::string name) const {
  if (first >= speeds_.size() || count < 2 || first + count > speeds_.size()) {
    throw Error(ErrorKind::IndexOutOfRange, "cycle slice out of range");
  }
  std::vector<double> part(speeds_.begin() + static_cast<std::ptrdiff_t>(first),
                           speeds_.begin() + static_cast<std::ptrdiff_t>(first + count));
  return DrivingCycle(std::move(part), dt_, name.empty() ? name_ : std::move(name));
}

void VehicleBodyParams::validate() const {
  for (double x : {mass, frontal_area, drag_coeff, rolling_coeff, air_density, gravity, tire_radius}) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw Error(ErrorKind::InvalidArgument, "vehicle body parameters must be positive");
    }
  }
}

const char* to_string(Mode mode) noexcept {
  switch (mode) {
    case Mode::Traction: return "traction";
    case Mode::Coasting: return "coasting";
    case Mode::Braking: return "braking";
    case Mode::Idle: return "idle";
  }
  return "?";
}

double acceleration(const DrivingCycle& cycle, std::size_t step) {
  const std::size_t n = cycle.size();
  if (step >= n) throw Error(ErrorKind::IndexOutOfRange, "acceleration step out of range");
  const std::size_t k = step + 1 < n ? step : n - 2;
  return (cycle[k + 1] - cycle[k]) / cycle.dt();
}

std::vector<double> accelerations(const DrivingCycle& cycle) {
  std::vector<double> out(cycle.size());
  for (std::size_t k = 0; k < cycle.size(); ++k) out[k] = acceleration(cycle, k);
  return out;
}

double longitudinal_force(double speed, double accel, const VehicleBodyParams& p) {
  const double aero = 0.5 * p.air_density * p.drag_coeff * p.frontal_area * speed * speed;
  const double rolling = speed > kIdleSpeed ? p.mass * p.gravity * p.rolling_coeff : 0.0;
  return aero + rolling + p.mass * accel;
}

double longitudinal_force(const DrivingCycle& cycle, const VehicleBodyParams& params,
                          std::size_t step) {
  return longitudinal_force(cycle[step], acceleration(cycle, step), params);
}

namespace {

struct CoastConstants {
  double k1;
  double k2;
};

CoastConstants coast_constants(const VehicleBodyParams& p) {
  return {std::sqrt(p.air_density * p.drag_coeff * p.frontal_area / (2.0 * p.mass)),
          std::sqrt(p.rolling_coeff * p.gravity)};
}

}  // namespace

double coasting_velocity(double v_prev, double dt, const VehicleBodyParams& params) {
  if (v_prev <= 0.0) return 0.0;
  const auto [k1, k2] = coast_constants(params);
  const double angle = std::atan(k1 / k2 * v_prev) - k1 * k2 * dt;
  if (angle <= 0.0) return 0.0;
  return k2 / k1 * std::tan(angle);
}

double coasting_velocity_slope(double v_prev, double dt, const VehicleBodyParams& params) {
  if (v_prev <= 0.0) return 0.0;
  const auto [k1, k2] = coast_constants(params);
  const double theta = std::atan(k1 / k2 * v_prev);
  const double angle = theta - k1 * k2 * dt;
  if (angle <= 0.0) return 0.0;
  const double c_theta = std::cos(theta);
  const double c_angle = std::cos(angle);
  return (c_theta * c_theta) / (c_angle * c_angle);
}

ModePartition classify_modes(const DrivingCycle& cycle, const VehicleBodyParams& params) {
  ModePartition modes(cycle.size());
  for (std::size_t k = 0; k < cycle.size(); ++k) {
    const double v = cycle[k];
    if (v <= kIdleSpeed) {
      modes[k] = Mode::Idle;
      continue;
    }
    if (k == 0) {
      // No predecessor to coast from: fall back to the sign of the propulsive force.
      const double force = longitudinal_force(cycle, params, 0);
      modes[k] = force > 0.0 ? Mode::Traction : (force < 0.0 ? Mode::Braking : Mode::Coasting);
      continue;
    }
    const double v_coast = coasting_velocity(cycle[k - 1], cycle.dt(), params);
    if (std::abs(v - v_coast) <= kCoastTolerance) {
      modes[k] = Mode::Coasting;
    } else if (v > v_coast) {
      modes[k] = Mode::Traction;
    } else {
      modes[k] = Mode::Braking;
    }
  }
  return modes;
}

std::vector<TractionRegion> traction_regions(const ModePartition& partition) {
  std::vector<TractionRegion> regions;
  for (std::size_t k = 0; k < partition.size(); ++k) {
    if (partition[k] != Mode::Traction) continue;
    if (!regions.empty() && regions.back().last + 1 == k) {
      regions.back().last = k;
    } else {
      regions.push_back({k, k});
    }
  }
  return regions;
}

MtfComponents mtf_components(const DrivingCycle& cycle, const ModePartition& partition) {
  if (partition.size() != cycle.size()) {
    throw Error(ErrorKind::ShapeMismatch, "partition length differs from cycle length");
  }
  const double dt = cycle.dt();
  double distance = 0.0;
  double cubic = 0.0;
  double linear = 0.0;
  for (std::size_t k = 0; k < cycle.size(); ++k) {
    const double v = cycle[k];
    distance += v * dt;
    if (partition[k] == Mode::Traction) {
      cubic += v * v * v * dt;
      linear += v * dt;
    }
  }
  if (!(distance > 0.0)) {
    throw Error(ErrorKind::ZeroDistance, "cycle '" + cycle.name() + "' covers no distance");
  }
  double kinetic = 0.0;
  for (const auto& region : traction_regions(partition)) {
    const double v0 = cycle[region.first];
    const double v1 = cycle[region.last];
    kinetic += 0.5 * (v1 * v1 - v0 * v0);
  }
  return {cubic / distance, linear / distance, kinetic / distance, distance};
}

DrivingCycle load_cycle_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open cycle file " + path.string());

  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };

  std::string line;
  if (!std::getline(in, line) || trim(line) != "t,v") {
    throw Error(ErrorKind::Parse, path.string() + ": expected header 't,v'");
  }
  std::vector<double> times;
  std::vector<double> speeds;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(lineno) + ": missing comma");
    }
    try {
      std::size_t used_t = 0;
      std::size_t used_v = 0;
      const std::string ts = trim(line.substr(0, comma));
      const std::string vs = trim(line.substr(comma + 1));
      const double t = std::stod(ts, &used_t);
      const double v = std::stod(vs, &used_v);
      if (used_t != ts.size() || used_v != vs.size()) throw std::invalid_argument("trailing");
      times.push_back(t);
      speeds.push_back(v);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  if (times.size() < 2) throw Error(ErrorKind::Parse, path.string() + ": fewer than two samples");

  for (double t : times) {
    if (t != std::floor(t)) throw Error(ErrorKind::Parse, path.string() + ": timestamps must be integers");
  }
  const double stride = times[1] - times[0];
  if (!(stride > 0.0)) throw Error(ErrorKind::Parse, path.string() + ": timestamps must increase");
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (times[k] - times[k - 1] != stride) {
      throw Error(ErrorKind::Parse, path.string() + ": non-uniform timestamps at row " + std::to_string(k + 1));
    }
  }
  try {
    return DrivingCycle(std::move(speeds), stride, path.stem().string());
  } catch (const Error& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void save_cycle_csv(const DrivingCycle& cycle, const std::filesystem::path& path) {
  if (cycle.dt() != std::floor(cycle.dt())) {
    throw Error(ErrorKind::InvalidArgument, "CSV cycles need an integer sampling period");
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "t,v\n" << std::setprecision(17);
  const auto stride = static_cast<long long>(cycle.dt());
  for (std::size_t k = 0; k < cycle.size(); ++k) {
    out << static_cast<long long>(k) * stride << ',' << cycle[k] << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace hevrl
