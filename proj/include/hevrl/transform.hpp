#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hevrl/cycle.hpp"

namespace hevrl {

struct TransformTargets {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  static TransformTargets from(const MtfComponents& m) { return {m.alpha, m.beta, m.gamma}; }
};

struct SolverOptions {
  double tol_eq = 1e-3;        // relative to the target magnitude
  double tol_eq_floor = 1e-4;  // absolute floor
  double tol_ineq = 1e-6;      // m/s
  // Both bands sit 1e-4 clear of the classification threshold, so the output
  // re-classifies to the same traction set.
  double traction_margin = kCoastTolerance + 1e-4;
  double coast_tolerance = kCoastTolerance - 1e-4;
  std::size_t max_outer = 5000;
  std::size_t max_inner = 200;
  /// Give up once the constraint violation has not shrunk by 1% in this many outer iterations.
  std::size_t stall_outer = 25;
  double v_max = 40.0;
};

struct InequalityViolation {
  std::size_t step = 0;
  double amount = 0.0;  // m/s beyond the allowed band
};

struct ConstraintResiduals {
  double g1 = 0.0;
  double g2 = 0.0;
  double g3 = 0.0;
  std::vector<InequalityViolation> violations;
  double max_violation = 0.0;
};

/// Equality residuals against `targets` and the traction / non-traction
/// speed bands, all measured over the fixed `partition` of the primitive.
/// Traction steps need v >= v_coast(v_prev) + margin; the others
/// v <= v_coast(v_prev) + coast_tolerance.
ConstraintResiduals constraint_residuals(const DrivingCycle& candidate, const ModePartition& partition,
                                         const TransformTargets& targets, const VehicleBodyParams& params,
                                         const SolverOptions& opts = {});

/// Sum of squared second differences over dt^2 (one-sided at both ends).
double jerk_cost(const DrivingCycle& cycle);

struct TransformResult {
  DrivingCycle transformed;
  double cost = 0.0;
  double g1 = 0.0;
  double g2 = 0.0;
  double g3 = 0.0;
  double max_inequality_violation = 0.0;
  std::size_t iterations = 0;        // outer
  std::size_t inner_iterations = 0;  // total
  bool converged = false;
  std::string message;
};

/// True when |g_i| is within tolerance for all three equality residuals.
bool equalities_satisfied(const ConstraintResiduals& r, const TransformTargets& targets,
                          const SolverOptions& opts = {});

/// Minimum-jerk speed trace matching `targets` with the primitive's mode
/// partition held fixed. The first and last samples and every idle step keep
/// their primitive values. Rejects targets with alpha <= 0 or beta outside (0, 1].
TransformResult transform_cycle(const DrivingCycle& primitive, const VehicleBodyParams& params,
                                const TransformTargets& targets, const SolverOptions& opts = {});

}  // namespace hevrl
