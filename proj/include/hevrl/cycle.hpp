#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hevrl {

/// Speeds at or below this are treated as standstill (m/s).
inline constexpr double kIdleSpeed = 0.05;
/// Half-width of the band around the coasting velocity that counts as coasting (m/s).
inline constexpr double kCoastTolerance = 0.01;

/// Uniformly sampled speed trace. Invariants (checked on construction):
/// dt > 0, at least two samples, every speed finite and >= 0.
class DrivingCycle {
 public:
  DrivingCycle(std::vector<double> speeds, double dt = 1.0, std::string name = {});

  double dt() const noexcept { return dt_; }
  std::span<const double> speeds() const noexcept { return speeds_; }
  double operator[](std::size_t k) const { return speeds_[k]; }
  std::size_t size() const noexcept { return speeds_.size(); }
  const std::string& name() const noexcept { return name_; }

  double duration() const noexcept { return dt_ * static_cast<double>(speeds_.size()); }

  /// Sub-trace [first, first + count). Throws if the slice is shorter than 2 samples.
  DrivingCycle slice(std::size_t first, std::size_t count, std::string name = {}) const;

 private:
  double dt_;
  std::vector<double> speeds_;
  std::string name_;
};

struct VehicleBodyParams {
  double mass = 16000.0;          // kg
  double frontal_area = 1.8;      // m^2
  double drag_coeff = 0.55;
  double rolling_coeff = 0.021;
  double air_density = 1.293;     // kg/m^3
  double gravity = 9.81;          // m/s^2
  double tire_radius = 0.508;     // m

  void validate() const;
};

enum class Mode : unsigned char { Traction, Coasting, Braking, Idle };

const char* to_string(Mode mode) noexcept;

using ModePartition = std::vector<Mode>;

struct MtfComponents {
  double alpha = 0.0;     // m^2/s^2
  double beta = 0.0;      // unitless, in [0, 1]
  double gamma = 0.0;     // m/s^2
  double distance = 0.0;  // m
};

/// Contiguous run of traction steps, inclusive bounds.
struct TractionRegion {
  std::size_t first = 0;
  std::size_t last = 0;
};

/// Forward-difference acceleration; the last sample reuses the previous one.
double acceleration(const DrivingCycle& cycle, std::size_t step);
std::vector<double> accelerations(const DrivingCycle& cycle);

/// Aerodynamic + rolling + inertial force at `step`. Rolling resistance is
/// dropped at standstill.
double longitudinal_force(const DrivingCycle& cycle, const VehicleBodyParams& params,
                          std::size_t step);
double longitudinal_force(double speed, double accel, const VehicleBodyParams& params);

/// Speed reached after `dt` seconds of unpowered rolling from `v_prev`,
/// from the closed-form solution of dv/dt = -k1^2 v^2 - k2^2. Clipped at 0.
double coasting_velocity(double v_prev, double dt, const VehicleBodyParams& params);
/// d coasting_velocity / d v_prev (0 in the clipped region).
double coasting_velocity_slope(double v_prev, double dt, const VehicleBodyParams& params);

ModePartition classify_modes(const DrivingCycle& cycle, const VehicleBodyParams& params);

std::vector<TractionRegion> traction_regions(const ModePartition& partition);

/// Throws Error(ZeroDistance) when the cycle covers no distance.
MtfComponents mtf_components(const DrivingCycle& cycle, const ModePartition& partition);

/// CSV with header `t,v`, integer timestamps at a constant positive stride.
DrivingCycle load_cycle_csv(const std::filesystem::path& path);
void save_cycle_csv(const DrivingCycle& cycle, const std::filesystem::path& path);

}  // namespace hevrl
