#include "hevrl/markov.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "hevrl/error.hpp"
#include "hevrl/rng.hpp"

namespace hevrl {

using nlohmann::json;

std::size_t QuantizerGrid::power_bin(double watts) const {
  const auto& c = power_levels;
  const auto it = std::lower_bound(c.begin(), c.end(), watts);
  if (it == c.begin()) return 0;
  if (it == c.end()) return c.size() - 1;
  const auto hi = static_cast<std::size_t>(it - c.begin());
  return (watts - c[hi - 1] <= c[hi] - watts) ? hi - 1 : hi;
}

std::size_t QuantizerGrid::speed_bin(double speed) const {
  const auto it = std::upper_bound(speed_edges.begin(), speed_edges.end(), speed);
  if (it == speed_edges.begin()) return 0;
  return static_cast<std::size_t>(it - speed_edges.begin()) - 1;
}

void QuantizerGrid::validate() const {
  if (power_levels.size() < 2) throw Error(ErrorKind::InvalidArgument, "need at least two power levels");
  if (speed_edges.empty()) throw Error(ErrorKind::InvalidArgument, "need at least one speed bin");
  auto increasing = [](const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
      if (!(v[i] > v[i - 1])) return false;
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!increasing(power_levels) || !increasing(speed_edges)) {
    throw Error(ErrorKind::InvalidArgument, "grid levels and edges must be finite and strictly increasing");
  }
}

QuantizerGrid QuantizerGrid::uniform(std::size_t levels, double p_min, double p_max,
                                     std::vector<double> speed_edges) {
  if (levels < 2 || !(p_max > p_min)) throw Error(ErrorKind::InvalidArgument, "bad power range");
  QuantizerGrid g;
  g.power_levels.resize(levels);
  const double step = (p_max - p_min) / static_cast<double>(levels - 1);
  for (std::size_t i = 0; i < levels; ++i) g.power_levels[i] = p_min + step * static_cast<double>(i);
  g.speed_edges = std::move(speed_edges);
  g.validate();
  return g;
}

QuantizerGrid QuantizerGrid::defaults() {
  return uniform(20, -150e3, 300e3, {0.0, 5.0, 10.0, 15.0, 20.0});
}

TransitionModel::TransitionModel(QuantizerGrid grid, std::vector<std::uint64_t> counts)
    : grid_(std::move(grid)), counts_(std::move(counts)) {
  grid_.validate();
  const std::size_t m = levels();
  const std::size_t k = speed_bins();
  if (counts_.size() != k * m * m) {
    throw Error(ErrorKind::ShapeMismatch, "count tensor does not match grid");
  }
  probs_.assign(counts_.size(), 0.0);
  for (std::size_t b = 0; b < k; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      const std::uint64_t total = row_count(b, i);
      if (total == 0) {
        probs_[index(b, i, i)] = 1.0;
        continue;
      }
      const auto denom = static_cast<double>(total);
      for (std::size_t j = 0; j < m; ++j) {
        probs_[index(b, i, j)] = static_cast<double>(counts_[index(b, i, j)]) / denom;
      }
    }
  }
}

std::uint64_t TransitionModel::row_count(std::size_t bin, std::size_t from) const {
  std::uint64_t total = 0;
  for (std::size_t j = 0; j < levels(); ++j) total += counts_[index(bin, from, j)];
  return total;
}

std::uint64_t TransitionModel::bin_count(std::size_t bin) const {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < levels(); ++i) total += row_count(bin, i);
  return total;
}

std::uint64_t TransitionModel::total_count() const {
  std::uint64_t total = 0;
  for (auto c : counts_) total += c;
  return total;
}

std::span<const double> TransitionModel::matrix(std::size_t bin) const {
  const std::size_t m = levels();
  return std::span<const double>(probs_).subspan(bin * m * m, m * m);
}

std::vector<double> power_request_series(const DrivingCycle& cycle, const VehicleBodyParams& params) {
  std::vector<double> out(cycle.size());
  for (std::size_t k = 0; k < cycle.size(); ++k) {
    out[k] = longitudinal_force(cycle, params, k) * cycle[k];
  }
  return out;
}

TransitionModel estimate_tpm(std::span<const double> powers, std::span<const double> speeds,
                             const QuantizerGrid& grid) {
  if (powers.size() != speeds.size()) {
    throw Error(ErrorKind::ShapeMismatch, "power and speed sequences differ in length");
  }
  if (powers.size() < 2) throw Error(ErrorKind::EmptySequence, "need at least one transition");
  grid.validate();
  const std::size_t m = grid.power_count();
  std::vector<std::uint64_t> counts(grid.speed_count() * m * m, 0);
  std::size_t prev = grid.power_bin(powers[0]);
  for (std::size_t k = 0; k + 1 < powers.size(); ++k) {
    const std::size_t next = grid.power_bin(powers[k + 1]);
    const std::size_t bin = grid.speed_bin(speeds[k]);
    ++counts[(bin * m + prev) * m + next];
    prev = next;
  }
  return TransitionModel(grid, std::move(counts));
}

TransitionModel estimate_tpm(const DrivingCycle& cycle, const VehicleBodyParams& params,
                             const QuantizerGrid& grid) {
  const auto powers = power_request_series(cycle, params);
  return estimate_tpm(powers, cycle.speeds(), grid);
}

double spectral_norm_of_difference(std::span<const double> a, std::span<const double> b,
                                   std::size_t n, const PowerIterationOptions& opts) {
  if (a.size() != n * n || b.size() != n * n) {
    throw Error(ErrorKind::ShapeMismatch, "matrix size does not match dimension");
  }
  std::vector<double> d(n * n);
  bool all_zero = true;
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = a[i] - b[i];
    all_zero = all_zero && d[i] == 0.0;
  }
  if (all_zero) return 0.0;

  Rng rng(opts.seed);
  std::vector<double> x(n);
  std::vector<double> y(n);
  for (auto& xi : x) xi = rng.uniform(-1.0, 1.0);

  auto normalize = [](std::vector<double>& v) {
    double s = 0.0;
    for (double vi : v) s += vi * vi;
    s = std::sqrt(s);
    if (s > 0.0)
      for (double& vi : v) vi /= s;
    return s;
  };
  normalize(x);

  double estimate = 0.0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    // y = D x ; sigma^2 estimate = |y|^2 ; x <- D^T y
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += d[i * n + j] * x[j];
      y[i] = s;
    }
    double sq = 0.0;
    for (double yi : y) sq += yi * yi;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += d[i * n + j] * y[i];
      x[j] = s;
    }
    const double previous = estimate;
    estimate = sq;
    if (normalize(x) == 0.0) break;
    if (it > 0 && std::abs(estimate - previous) <= opts.relative_tolerance * estimate) break;
  }
  return std::sqrt(estimate);
}

ImnResult imn(const TransitionModel& a, const TransitionModel& b, const PowerIterationOptions& opts) {
  if (!(a.grid() == b.grid())) throw Error(ErrorKind::GridMismatch, "transition models use different grids");
  ImnResult out;
  const std::size_t k = a.speed_bins();
  out.per_bin.assign(k, 0.0);
  out.weights.assign(k, 0);
  double weighted = 0.0;
  std::uint64_t total = 0;
  for (std::size_t bin = 0; bin < k; ++bin) {
    out.per_bin[bin] = spectral_norm_of_difference(a.matrix(bin), b.matrix(bin), a.levels(), opts);
    out.weights[bin] = a.bin_count(bin) + b.bin_count(bin);
    weighted += static_cast<double>(out.weights[bin]) * out.per_bin[bin];
    total += out.weights[bin];
  }
  out.aggregate = total > 0 ? weighted / static_cast<double>(total) : 0.0;
  return out;
}

namespace {

json grid_to_json(const QuantizerGrid& g) {
  return {{"power_levels", g.power_levels}, {"speed_edges", g.speed_edges}};
}

QuantizerGrid grid_from_json(const json& j) {
  QuantizerGrid g;
  g.power_levels = j.at("power_levels").get<std::vector<double>>();
  g.speed_edges = j.at("speed_edges").get<std::vector<double>>();
  g.validate();
  return g;
}

}  // namespace

void save_tpm_json(const TransitionModel& model, const std::filesystem::path& path) {
  json j;
  j["format"] = "hevrl.tpm/1";
  j["grid"] = grid_to_json(model.grid());
  j["counts"] = std::vector<std::uint64_t>(model.counts().begin(), model.counts().end());
  j["probabilities"] = std::vector<double>(model.probabilities().begin(), model.probabilities().end());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

TransitionModel load_tpm_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    const json j = json::parse(in);
    if (j.at("format") != "hevrl.tpm/1") throw Error(ErrorKind::Parse, "unknown TPM format");
    TransitionModel model(grid_from_json(j.at("grid")), j.at("counts").get<std::vector<std::uint64_t>>());
    const auto stored = j.at("probabilities").get<std::vector<double>>();
    const auto recomputed = model.probabilities();
    if (stored.size() != recomputed.size()) throw Error(ErrorKind::Parse, "probability tensor has wrong size");
    for (std::size_t i = 0; i < stored.size(); ++i) {
      if (std::abs(stored[i] - recomputed[i]) > 1e-12) {
        throw Error(ErrorKind::Parse, "stored probabilities disagree with counts");
      }
    }
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

}  // namespace hevrl
