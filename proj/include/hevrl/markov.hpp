#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hevrl/cycle.hpp"

namespace hevrl {

/// Power-request levels (bin centres, W) and speed bins. Speed bin k covers
/// [speed_edges[k], speed_edges[k+1]); the last bin is unbounded above.
struct QuantizerGrid {
  std::vector<double> power_levels;
  std::vector<double> speed_edges;

  std::size_t power_count() const noexcept { return power_levels.size(); }
  std::size_t speed_count() const noexcept { return speed_edges.size(); }

  /// Nearest centre; ties go to the lower level. Values outside the range clamp.
  std::size_t power_bin(double watts) const;
  std::size_t speed_bin(double speed) const;

  void validate() const;
  bool operator==(const QuantizerGrid&) const = default;

  /// M levels uniform over [p_min, p_max].
  static QuantizerGrid uniform(std::size_t levels, double p_min, double p_max,
                               std::vector<double> speed_edges);
  /// 20 levels over [-150 kW, 300 kW]; speed bins at 0/5/10/15/20 m/s.
  static QuantizerGrid defaults();
};

/// Speed-conditioned transition probability matrices over quantized power
/// request, stored dense as [speed bin][from level][to level].
class TransitionModel {
 public:
  TransitionModel() = default;
  TransitionModel(QuantizerGrid grid, std::vector<std::uint64_t> counts);

  const QuantizerGrid& grid() const noexcept { return grid_; }
  std::size_t levels() const noexcept { return grid_.power_count(); }
  std::size_t speed_bins() const noexcept { return grid_.speed_count(); }

  std::uint64_t count(std::size_t bin, std::size_t from, std::size_t to) const {
    return counts_[index(bin, from, to)];
  }
  double probability(std::size_t bin, std::size_t from, std::size_t to) const {
    return probs_[index(bin, from, to)];
  }
  std::uint64_t row_count(std::size_t bin, std::size_t from) const;
  std::uint64_t bin_count(std::size_t bin) const;
  std::uint64_t total_count() const;

  /// Row-major M x M block for one speed bin.
  std::span<const double> matrix(std::size_t bin) const;
  std::span<const std::uint64_t> counts() const noexcept { return counts_; }
  std::span<const double> probabilities() const noexcept { return probs_; }

 private:
  std::size_t index(std::size_t bin, std::size_t from, std::size_t to) const {
    const std::size_t m = levels();
    return (bin * m + from) * m + to;
  }

  QuantizerGrid grid_;
  std::vector<std::uint64_t> counts_;
  std::vector<double> probs_;
};

/// Wheel-side power request F * v for every step of the cycle.
std::vector<double> power_request_series(const DrivingCycle& cycle, const VehicleBodyParams& params);

/// Maximum-likelihood transition estimate. Each pair (k, k+1) is attributed to
/// the speed bin of speeds[k]. Rows never visited get self-transition 1.
TransitionModel estimate_tpm(std::span<const double> powers, std::span<const double> speeds,
                             const QuantizerGrid& grid);
TransitionModel estimate_tpm(const DrivingCycle& cycle, const VehicleBodyParams& params,
                             const QuantizerGrid& grid);

struct PowerIterationOptions {
  int max_iterations = 500;
  double relative_tolerance = 1e-12;
  std::uint64_t seed = 0x5eed;
};

/// Largest singular value of (a - b), both n x n row-major, via power
/// iteration on (a-b)^T (a-b).
double spectral_norm_of_difference(std::span<const double> a, std::span<const double> b,
                                   std::size_t n, const PowerIterationOptions& opts = {});

struct ImnResult {
  std::vector<double> per_bin;
  /// Transition counts backing each bin (both models combined); 0 means excluded.
  std::vector<std::uint64_t> weights;
  /// Count-weighted mean over bins that either model visited.
  double aggregate = 0.0;
};

/// Induced 2-norm distance between two models, per speed bin plus aggregate.
ImnResult imn(const TransitionModel& a, const TransitionModel& b,
              const PowerIterationOptions& opts = {});

void save_tpm_json(const TransitionModel& model, const std::filesystem::path& path);
/// Probabilities are recomputed from counts and checked against the stored ones.
TransitionModel load_tpm_json(const std::filesystem::path& path);

}  // namespace hevrl
