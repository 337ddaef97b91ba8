#include "hevrl/transform.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "hevrl/error.hpp"

namespace hevrl {

namespace {

// Centre of the second-difference stencil used for jerk row k.
std::size_t stencil_centre(std::size_t k, std::size_t n) { return std::clamp<std::size_t>(k, 1, n - 2); }

double second_difference(const std::vector<double>& v, std::size_t c, double dt2) {
  return (v[c + 1] - 2.0 * v[c] + v[c - 1]) / dt2;
}

double jerk_of(const std::vector<double>& v, double dt) {
  const std::size_t n = v.size();
  if (n < 3) return 0.0;
  const double dt2 = dt * dt;
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double s = second_difference(v, stencil_centre(k, n), dt2);
    sum += s * s;
  }
  return sum;
}

double equality_tolerance(double target, const SolverOptions& o) {
  return std::max(o.tol_eq * std::abs(target), o.tol_eq_floor);
}

struct Band {
  std::size_t step;
  bool traction;
};

class Problem {
 public:
  Problem(const DrivingCycle& primitive, const VehicleBodyParams& params, const TransformTargets& targets,
          const SolverOptions& opts)
      : params_(params), opts_(opts), n_(primitive.size()), dt_(primitive.dt()) {
    partition_ = classify_modes(primitive, params);
    primitive_.assign(primitive.speeds().begin(), primitive.speeds().end());
    traction_.resize(n_);
    for (std::size_t k = 0; k < n_; ++k) traction_[k] = partition_[k] == Mode::Traction;
    region_sign_.assign(n_, 0.0);
    for (const auto& r : traction_regions(partition_)) {
      if (r.first == r.last) continue;
      region_sign_[r.first] = -1.0;
      region_sign_[r.last] = 1.0;
    }
    slot_.assign(n_, -1);
    for (std::size_t k = 0; k < n_; ++k) {
      const bool pinned = k == 0 || k + 1 == n_ || partition_[k] == Mode::Idle;
      if (!pinned) {
        slot_[k] = static_cast<long>(free_.size());
        free_.push_back(k);
      }
    }
    for (std::size_t k = 1; k < n_; ++k) {
      if (slot_[k] < 0 && slot_[k - 1] < 0) continue;
      bands_.push_back({k, traction_[k]});
    }
    lo_.resize(free_.size());
    hi_.resize(free_.size());
    for (std::size_t i = 0; i < free_.size(); ++i) {
      lo_[i] = std::min(primitive_[free_[i]], 0.1);
      hi_[i] = opts.v_max;
    }
    target_ = {targets.alpha, targets.beta, targets.gamma};
    for (int i = 0; i < 3; ++i) scale_[i] = std::max(std::abs(target_[i]), opts.tol_eq_floor / opts.tol_eq);
    f0_ = std::max(jerk_of(primitive_, dt_), 1.0);
  }

  std::size_t dim() const { return free_.size(); }
  const ModePartition& partition() const { return partition_; }
  const std::vector<double>& primitive() const { return primitive_; }
  double dt() const { return dt_; }

  std::vector<double> expand(const Eigen::VectorXd& x) const {
    std::vector<double> v = primitive_;
    for (std::size_t i = 0; i < free_.size(); ++i) v[free_[i]] = x[static_cast<Eigen::Index>(i)];
    return v;
  }

  Eigen::VectorXd start() const {
    Eigen::VectorXd x(dim());
    for (std::size_t i = 0; i < free_.size(); ++i) {
      x[static_cast<Eigen::Index>(i)] = std::clamp(primitive_[free_[i]], lo_[i], hi_[i]);
    }
    return x;
  }

  Eigen::VectorXd project(Eigen::VectorXd x) const {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x[i] = std::clamp(x[i], lo_[static_cast<std::size_t>(i)], hi_[static_cast<std::size_t>(i)]);
    }
    return x;
  }

  // Normalised equality residuals and their gradients over the full speed vector.
  std::array<double, 3> equalities(const std::vector<double>& v, std::array<std::vector<double>, 3>* grad) const {
    double x = 0.0, a = 0.0, b = 0.0, kin = 0.0;
    for (std::size_t k = 0; k < n_; ++k) {
      x += v[k] * dt_;
      if (traction_[k]) {
        a += v[k] * v[k] * v[k] * dt_;
        b += v[k] * dt_;
      }
      kin += 0.5 * region_sign_[k] * v[k] * v[k];
    }
    if (!(x > 0.0)) throw Error(ErrorKind::ZeroDistance, "candidate covers no distance");
    const std::array<double, 3> num{a, b, kin};
    std::array<double, 3> c{};
    for (int i = 0; i < 3; ++i) c[i] = (num[i] / x - target_[i]) / scale_[i];
    if (grad) {
      for (int i = 0; i < 3; ++i) (*grad)[i].assign(n_, 0.0);
      const double x2 = x * x;
      for (std::size_t k = 0; k < n_; ++k) {
        const double t = traction_[k] ? 1.0 : 0.0;
        (*grad)[0][k] = (3.0 * v[k] * v[k] * dt_ * t / x - a * dt_ / x2) / scale_[0];
        (*grad)[1][k] = (dt_ * t / x - b * dt_ / x2) / scale_[1];
        (*grad)[2][k] = (region_sign_[k] * v[k] / x - kin * dt_ / x2) / scale_[2];
      }
    }
    return c;
  }

  // h <= 0 form of band j, with d h / d v[k-1] in *slope.
  double band_value(const std::vector<double>& v, const Band& b, double* slope) const {
    const double vc = coasting_velocity(v[b.step - 1], dt_, params_);
    if (slope) *slope = coasting_velocity_slope(v[b.step - 1], dt_, params_);
    return b.traction ? vc + opts_.traction_margin - v[b.step] : v[b.step] - vc - opts_.coast_tolerance;
  }

  struct Multipliers {
    std::array<double, 3> lambda{};
    std::vector<double> mu;
    double rho = 10.0;
  };

  double lagrangian(const Eigen::VectorXd& x, const Multipliers& m) const {
    const auto v = expand(x);
    double value = jerk_of(v, dt_) / f0_;
    const auto c = equalities(v, nullptr);
    for (int i = 0; i < 3; ++i) value += m.lambda[i] * c[i] + 0.5 * m.rho * c[i] * c[i];
    for (std::size_t j = 0; j < bands_.size(); ++j) {
      const double h = band_value(v, bands_[j], nullptr);
      const double s = std::max(0.0, m.mu[j] + m.rho * h);
      value += (s * s - m.mu[j] * m.mu[j]) / (2.0 * m.rho);
    }
    return value;
  }

  // Gradient of the augmented Lagrangian and a Gauss-Newton model of its
  // Hessian, split into a sparse banded part and a rank-3 dense part.
  void model(const Eigen::VectorXd& x, const Multipliers& m, Eigen::VectorXd& g,
             std::vector<Eigen::Triplet<double>>& sparse, Eigen::Matrix<double, Eigen::Dynamic, 3>& dense) const {
    const auto v = expand(x);
    const std::size_t nf = dim();
    g.setZero(static_cast<Eigen::Index>(nf));
    sparse.clear();
    dense.setZero(static_cast<Eigen::Index>(nf), 3);
    const double dt2 = dt_ * dt_;
    const std::array<double, 3> w{1.0 / dt2, -2.0 / dt2, 1.0 / dt2};
    for (std::size_t k = 0; k < n_; ++k) {
      const std::size_t c = stencil_centre(k, n_);
      const double s = second_difference(v, c, dt2);
      for (int p = 0; p < 3; ++p) {
        const long sp = slot_[c - 1 + static_cast<std::size_t>(p)];
        if (sp < 0) continue;
        g[sp] += 2.0 * s * w[static_cast<std::size_t>(p)] / f0_;
        for (int q = 0; q < 3; ++q) {
          const long sq = slot_[c - 1 + static_cast<std::size_t>(q)];
          if (sq < 0) continue;
          sparse.emplace_back(sp, sq, 2.0 * w[static_cast<std::size_t>(p)] * w[static_cast<std::size_t>(q)] / f0_);
        }
      }
    }
    std::array<std::vector<double>, 3> grad;
    const auto c = equalities(v, &grad);
    const double root = std::sqrt(m.rho);
    for (int i = 0; i < 3; ++i) {
      const double coef = m.lambda[i] + m.rho * c[i];
      for (std::size_t f = 0; f < nf; ++f) {
        const double gi = grad[i][free_[f]];
        g[static_cast<Eigen::Index>(f)] += coef * gi;
        dense(static_cast<Eigen::Index>(f), i) = root * gi;
      }
    }
    for (std::size_t j = 0; j < bands_.size(); ++j) {
      const Band& b = bands_[j];
      double slope = 0.0;
      const double h = band_value(v, b, &slope);
      const double s = m.mu[j] + m.rho * h;
      if (s <= 0.0) continue;
      const double d_prev = b.traction ? slope : -slope;
      const double d_here = b.traction ? -1.0 : 1.0;
      const long sp = slot_[b.step - 1];
      const long sh = slot_[b.step];
      if (sp >= 0) g[sp] += s * d_prev;
      if (sh >= 0) g[sh] += s * d_here;
      if (sp >= 0) sparse.emplace_back(sp, sp, m.rho * d_prev * d_prev);
      if (sh >= 0) sparse.emplace_back(sh, sh, m.rho * d_here * d_here);
      if (sp >= 0 && sh >= 0) {
        sparse.emplace_back(sp, sh, m.rho * d_prev * d_here);
        sparse.emplace_back(sh, sp, m.rho * d_prev * d_here);
      }
    }
  }

  // Forward sweep that moves each free sample into its band given the
  // (already repaired) previous sample.
  std::vector<double> repair(std::vector<double> v) const {
    for (std::size_t k = 1; k < n_; ++k) {
      const long s = slot_[k];
      if (s < 0) continue;
      double x = std::clamp(v[k], lo_[static_cast<std::size_t>(s)], hi_[static_cast<std::size_t>(s)]);
      const double vc = coasting_velocity(v[k - 1], dt_, params_);
      if (traction_[k]) {
        x = std::max(x, vc + opts_.traction_margin);
      } else {
        x = std::min(x, vc + opts_.coast_tolerance);
      }
      v[k] = std::clamp(x, 0.0, opts_.v_max);
    }
    return v;
  }

  std::vector<double> band_values(const std::vector<double>& v) const {
    std::vector<double> h(bands_.size());
    for (std::size_t j = 0; j < bands_.size(); ++j) h[j] = band_value(v, bands_[j], nullptr);
    return h;
  }

  std::size_t band_count() const { return bands_.size(); }
  const std::vector<double>& lower() const { return lo_; }
  const std::vector<double>& upper() const { return hi_; }

 private:
  const VehicleBodyParams& params_;
  const SolverOptions& opts_;
  std::size_t n_;
  double dt_;
  ModePartition partition_;
  std::vector<double> primitive_;
  std::vector<bool> traction_;
  std::vector<double> region_sign_;
  std::vector<long> slot_;
  std::vector<std::size_t> free_;
  std::vector<Band> bands_;
  std::vector<double> lo_;
  std::vector<double> hi_;
  std::array<double, 3> target_{};
  std::array<double, 3> scale_{};
  double f0_ = 1.0;
};

}  // namespace

double jerk_cost(const DrivingCycle& cycle) {
  return jerk_of(std::vector<double>(cycle.speeds().begin(), cycle.speeds().end()), cycle.dt());
}

ConstraintResiduals constraint_residuals(const DrivingCycle& candidate, const ModePartition& partition,
                                         const TransformTargets& targets, const VehicleBodyParams& params,
                                         const SolverOptions& opts) {
  const MtfComponents m = mtf_components(candidate, partition);
  ConstraintResiduals r;
  r.g1 = m.alpha - targets.alpha;
  r.g2 = m.beta - targets.beta;
  r.g3 = m.gamma - targets.gamma;
  for (std::size_t k = 1; k < candidate.size(); ++k) {
    const double vc = coasting_velocity(candidate[k - 1], candidate.dt(), params);
    const double amount = partition[k] == Mode::Traction ? vc + opts.traction_margin - candidate[k]
                                                         : candidate[k] - vc - opts.coast_tolerance;
    if (amount > 0.0) {
      r.violations.push_back({k, amount});
      r.max_violation = std::max(r.max_violation, amount);
    }
  }
  return r;
}

bool equalities_satisfied(const ConstraintResiduals& r, const TransformTargets& t, const SolverOptions& o) {
  return std::abs(r.g1) <= equality_tolerance(t.alpha, o) && std::abs(r.g2) <= equality_tolerance(t.beta, o) &&
         std::abs(r.g3) <= equality_tolerance(t.gamma, o);
}

TransformResult transform_cycle(const DrivingCycle& primitive, const VehicleBodyParams& params,
                                const TransformTargets& targets, const SolverOptions& opts) {
  params.validate();
  if (!(targets.alpha > 0.0) || !std::isfinite(targets.alpha)) {
    throw Error(ErrorKind::InvalidArgument, "alpha target must be positive");
  }
  if (!(targets.beta > 0.0 && targets.beta <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "beta target must lie in (0, 1]");
  }
  if (!std::isfinite(targets.gamma)) throw Error(ErrorKind::InvalidArgument, "gamma target must be finite");
  if (primitive.size() < 3) throw Error(ErrorKind::InvalidArgument, "transformation needs at least three samples");

  Problem prob(primitive, params, targets, opts);
  mtf_components(primitive, prob.partition());  // ZeroDistance check

  const std::string name = primitive.name().empty() ? std::string("transformed") : primitive.name() + "_dct";
  TransformResult result{DrivingCycle(prob.primitive(), primitive.dt(), name), 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0, false, {}};

  double best_cost = std::numeric_limits<double>::infinity();
  bool have_best = false;
  auto consider = [&](const std::vector<double>& v) {
    DrivingCycle cand(v, primitive.dt(), name);
    const auto r = constraint_residuals(cand, prob.partition(), targets, params, opts);
    const bool feasible = equalities_satisfied(r, targets, opts) && r.max_violation <= opts.tol_ineq;
    const double cost = jerk_of(v, primitive.dt());
    if (feasible && cost < best_cost) {
      best_cost = cost;
      have_best = true;
      result.transformed = std::move(cand);
      result.cost = cost;
      result.g1 = r.g1;
      result.g2 = r.g2;
      result.g3 = r.g3;
      result.max_inequality_violation = r.max_violation;
    }
    return feasible;
  };

  consider(prob.primitive());
  if (prob.dim() == 0) {
    result.converged = have_best;
    result.message = have_best ? "no free samples; primitive already feasible" : "no free samples";
    if (!have_best) {
      const auto r = constraint_residuals(result.transformed, prob.partition(), targets, params, opts);
      result.cost = jerk_cost(result.transformed);
      result.g1 = r.g1;
      result.g2 = r.g2;
      result.g3 = r.g3;
      result.max_inequality_violation = r.max_violation;
    }
    return result;
  }

  Problem::Multipliers mult;
  mult.mu.assign(prob.band_count(), 0.0);
  Eigen::VectorXd x = prob.start();
  Eigen::VectorXd g;
  Eigen::Matrix<double, Eigen::Dynamic, 3> dense;
  std::vector<Eigen::Triplet<double>> triplets;
  const auto nf = static_cast<Eigen::Index>(prob.dim());
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt;

  double omega = 1e-2;
  double previous_infeas = std::numeric_limits<double>::infinity();
  double last_feasible_cost = std::numeric_limits<double>::infinity();
  int stalled = 0;
  double best_infeas = std::numeric_limits<double>::infinity();
  std::size_t since_progress = 0;
  bool gave_up = false;
  std::vector<double> last_raw;

  for (std::size_t outer = 0; outer < opts.max_outer; ++outer) {
    result.iterations = outer + 1;
    bool inner_converged = false;
    for (std::size_t inner = 0; inner < opts.max_inner; ++inner) {
      ++result.inner_iterations;
      prob.model(x, mult, g, triplets, dense);

      // Variables on a bound with the gradient pushing outward stay put.
      std::vector<bool> held(static_cast<std::size_t>(nf), false);
      double pg = 0.0;
      for (Eigen::Index i = 0; i < nf; ++i) {
        const auto u = static_cast<std::size_t>(i);
        const bool at_lo = x[i] <= prob.lower()[u] + 1e-12 && g[i] > 0.0;
        const bool at_hi = x[i] >= prob.upper()[u] - 1e-12 && g[i] < 0.0;
        held[u] = at_lo || at_hi;
        if (!held[u]) pg = std::max(pg, std::abs(g[i]));
      }
      if (pg <= omega) {
        inner_converged = true;
        break;
      }

      std::vector<Eigen::Triplet<double>> reduced;
      reduced.reserve(triplets.size() + static_cast<std::size_t>(nf));
      double diag_max = 0.0;
      for (const auto& t : triplets) {
        if (held[static_cast<std::size_t>(t.row())] || held[static_cast<std::size_t>(t.col())]) continue;
        reduced.push_back(t);
        if (t.row() == t.col()) diag_max = std::max(diag_max, t.value());
      }
      const double reg = 1e-12 * std::max(diag_max, 1.0);
      for (Eigen::Index i = 0; i < nf; ++i) {
        reduced.emplace_back(i, i, held[static_cast<std::size_t>(i)] ? 1.0 : reg);
      }
      Eigen::SparseMatrix<double> h(nf, nf);
      h.setFromTriplets(reduced.begin(), reduced.end());
      llt.compute(h);
      if (llt.info() != Eigen::Success) break;

      Eigen::VectorXd rhs = g;
      for (Eigen::Index i = 0; i < nf; ++i) {
        if (held[static_cast<std::size_t>(i)]) {
          rhs[i] = 0.0;
          dense.row(i).setZero();
        }
      }
      // Woodbury: (S + U U^T)^-1 r = y - Z (I + U^T Z)^-1 U^T y.
      const Eigen::VectorXd y = llt.solve(rhs);
      const Eigen::Matrix<double, Eigen::Dynamic, 3> z = llt.solve(dense);
      const Eigen::Matrix3d cap = Eigen::Matrix3d::Identity() + dense.transpose() * z;
      const Eigen::VectorXd d = y - z * cap.ldlt().solve(dense.transpose() * y);

      const double l0 = prob.lagrangian(x, mult);
      double t = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 50; ++ls) {
        Eigen::VectorXd trial = prob.project(x - t * d);
        const double decrease = g.dot(x - trial);
        const double l1 = prob.lagrangian(trial, mult);
        if (l1 <= l0 - 1e-4 * decrease && decrease >= 0.0) {
          accepted = (x - trial).lpNorm<Eigen::Infinity>() > 0.0;
          x = std::move(trial);
          break;
        }
        t *= 0.5;
      }
      if (!accepted) {
        inner_converged = pg <= 1e-6;
        break;
      }
    }

    const auto raw = prob.expand(x);
    const auto c = prob.equalities(raw, nullptr);
    const auto hv = prob.band_values(raw);
    double infeas = 0.0;
    for (int i = 0; i < 3; ++i) infeas = std::max(infeas, std::abs(c[i]));
    for (std::size_t j = 0; j < hv.size(); ++j) infeas = std::max(infeas, std::max(hv[j], -mult.mu[j] / mult.rho));
    for (int i = 0; i < 3; ++i) mult.lambda[i] += mult.rho * c[i];
    for (std::size_t j = 0; j < hv.size(); ++j) mult.mu[j] = std::max(0.0, mult.mu[j] + mult.rho * hv[j]);
    if (infeas > 0.25 * previous_infeas) mult.rho = std::min(mult.rho * 10.0, 1e12);
    previous_infeas = infeas;
    if (infeas < 0.99 * best_infeas) {
      best_infeas = infeas;
      since_progress = 0;
    } else {
      ++since_progress;
    }

    const auto repaired = prob.repair(raw);
    const bool feasible = consider(repaired);
    if (feasible) {
      const double cost = jerk_of(repaired, primitive.dt());
      if (std::abs(cost - last_feasible_cost) <= 1e-8 * std::max(cost, 1e-12)) {
        ++stalled;
      } else {
        stalled = 0;
      }
      last_feasible_cost = cost;
      if ((inner_converged && omega <= 1e-6) || stalled >= 3) {
        result.converged = true;
        result.message = "feasible and stationary";
        break;
      }
    }
    omega = std::max(omega * 0.1, 1e-8);
    last_raw = raw;
    if (since_progress >= opts.stall_outer) {
      gave_up = true;
      break;
    }
  }

  if (!result.converged) {
    if (have_best) {
      result.message = gave_up ? "constraint violation stalled; best feasible iterate returned"
                               : "iteration limit reached; best feasible iterate returned";
    } else {
      const auto v = prob.repair(last_raw.empty() ? prob.primitive() : last_raw);
      result.transformed = DrivingCycle(v, primitive.dt(), name);
      const auto r = constraint_residuals(result.transformed, prob.partition(), targets, params, opts);
      result.cost = jerk_of(v, primitive.dt());
      result.g1 = r.g1;
      result.g2 = r.g2;
      result.g3 = r.g3;
      result.max_inequality_violation = r.max_violation;
      result.message = gave_up ? "constraint violation stalled; targets look unattainable"
                               : "iteration limit reached without a feasible iterate";
    }
  }
  return result;
}

}  // namespace hevrl
