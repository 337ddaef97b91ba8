#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hevrl/markov.hpp"
#include "hevrl/powertrain.hpp"

namespace hevrl {

/// Discretisation of the energy-management MDP: state = (SOC bin, power-request
/// bin, speed bin), action = engine torque level.
struct QTableGrid {
  std::size_t soc_bins = 13;
  double soc_min = 0.3;
  double soc_max = 0.9;
  QuantizerGrid demand = QuantizerGrid::defaults();
  std::vector<double> actions = default_actions();

  std::size_t states() const noexcept {
    return soc_bins * demand.power_count() * demand.speed_count();
  }
  std::size_t action_count() const noexcept { return actions.size(); }

  std::size_t soc_bin(double soc) const;
  std::size_t state_index(double soc, double power_request, double speed) const;
  std::size_t state_index(std::size_t soc_bin, std::size_t power_bin, std::size_t speed_bin) const;

  void validate() const;
  bool operator==(const QTableGrid&) const = default;

  /// 10 torque levels uniform over [0, 900] N m.
  static std::vector<double> default_actions();
};

/// Dense action-value table (cost convention: lower is better).
struct QTable {
  std::size_t states = 0;
  std::size_t actions = 0;
  std::vector<double> values;
  std::optional<QTableGrid> grid;
  std::string source_id;
  std::uint64_t training_sweeps = 0;

  QTable() = default;
  QTable(std::size_t n_states, std::size_t n_actions, double fill = 0.0);
  explicit QTable(const QTableGrid& g, double fill = 0.0);

  double& at(std::size_t s, std::size_t a) { return values[s * actions + a]; }
  double at(std::size_t s, std::size_t a) const { return values[s * actions + a]; }

  /// Lowest-cost action; ties resolve to the lowest index.
  std::size_t best_action(std::size_t s) const;
  double min_value(std::size_t s) const;

  bool same_shape(const QTable& other) const noexcept {
    return states == other.states && actions == other.actions;
  }
};

struct LearningConfig {
  double discount = 0.96;
  std::uint64_t sweeps = 10000;
  double epsilon_start = 0.5;
  double epsilon_decay = 0.999;
  double epsilon_floor = 0.05;
  std::uint64_t fine_tune_sweeps = 500;
  std::uint64_t seed = 1;

  double learning_rate(std::uint64_t k) const;
  double epsilon(std::uint64_t k) const;
  void validate() const;
};

/// Q(s,a) += tau_k (r + mu min_a' Q(s',a') - Q(s,a)). `next_state` empty means terminal.
void q_update(QTable& q, std::size_t state, std::size_t action, double reward,
              std::optional<std::size_t> next_state, std::uint64_t iteration,
              const LearningConfig& config);

/// Episodic environment driven by the learner.
class Environment {
 public:
  struct Transition {
    double reward = 0.0;
    std::optional<std::size_t> next_state;  // empty at episode end
  };
  virtual ~Environment() = default;
  virtual std::size_t reset() = 0;
  virtual Transition act(std::size_t action) = 0;
};

struct SweepLog {
  std::uint64_t sweep = 0;
  double accumulated_reward = 0.0;
  /// Mean |Q_after - Q_before| over every table entry for this sweep.
  double mean_discrepancy = 0.0;
  double epsilon = 0.0;
};

/// Epsilon-greedy tabular Q-learning for `config.sweeps` episodes.
std::vector<SweepLog> q_learning(Environment& env, QTable& q, const LearningConfig& config,
                                 std::size_t max_episode_steps = 1'000'000);

/// Replays a driving cycle as an episode. The final step also pays the
/// terminal charge-sustenance penalty.
class CycleEnvironment final : public Environment {
 public:
  CycleEnvironment(const DrivingCycle& cycle, const PowertrainParams& params, const QTableGrid& grid,
                   double soc_init);
  std::size_t reset() override;
  Transition act(std::size_t action) override;

 private:
  std::size_t state_at(std::size_t t, double soc) const;

  const PowertrainParams* params_;
  const QTableGrid* grid_;
  std::vector<StepDemand> demands_;
  std::vector<std::size_t> power_bins_;
  std::vector<std::size_t> speed_bins_;
  double soc_init_;
  double soc_ = 0.0;
  std::size_t t_ = 0;
};

struct TrainResult {
  QTable q;
  std::vector<SweepLog> log;
};

/// Learns a Q-table on `cycle`; starts from `initial` when given, else zeros.
TrainResult train(const DrivingCycle& cycle, const PowertrainParams& params, const LearningConfig& config,
                  const QTableGrid& grid = {}, std::optional<QTable> initial = std::nullopt,
                  std::optional<double> soc_init = std::nullopt);

std::vector<std::size_t> greedy_policy(const QTable& q);

/// Torque policy that looks up the greedy action of `q` for the cycle's demand.
PolicyTrace simulate_greedy(const DrivingCycle& cycle, const PowertrainParams& params, const QTable& q,
                            double soc_init, std::string name = {});

struct LibraryEntry {
  std::string id;
  TransitionModel tpm;
  QTable q;
};

struct SourceLibrary {
  std::vector<LibraryEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  /// Throws GridMismatch unless every entry shares one TPM grid and Q-table shape.
  void validate() const;
};

void save_library(const SourceLibrary& library, const std::filesystem::path& dir);
SourceLibrary load_library(const std::filesystem::path& dir);

struct TransferWeights {
  std::vector<double> deltas;
  std::vector<double> distances;
  double transfer_factor = 0.0;
};

TransferWeights transfer_weights(const SourceLibrary& library, const TransitionModel& p_new,
                                 double transfer_factor, const PowerIterationOptions& opts = {});
/// Weights from precomputed distances.
TransferWeights transfer_weights(std::vector<double> distances, double transfer_factor);

QTable transfer_q(const SourceLibrary& library, const TransferWeights& weights);

/// transfer_q invocations made on the calling thread since it started.
std::uint64_t transfer_q_calls_this_thread() noexcept;

struct AdaptOptions {
  double threshold = 0.2;
  std::size_t window = 1000;  // steps
  double transfer_factor = 0.0;
  /// Run the Q-learning fine-tune after each transfer.
  bool fine_tune = true;
};

struct WindowCheck {
  std::size_t step = 0;  // window boundary (exclusive end of the window)
  double imn = 0.0;
  std::vector<double> imn_per_bin;
  bool updated = false;
};

struct PolicyUpdate {
  std::size_t step = 0;
  double imn = 0.0;
  TransferWeights weights;
  std::vector<SweepLog> fine_tune_log;
};

struct AdaptResult {
  PolicyTrace trace;
  std::size_t initial_source = 0;
  std::vector<WindowCheck> checks;
  std::vector<PolicyUpdate> updates;
  /// Active Q-table index per step: 0 is the initial source, n is after the n-th update.
  std::vector<std::size_t> policy_epoch;
  std::vector<QTable> policies;
};

/// Library entry whose TPM is closest (aggregate IMN) to `model`.
std::size_t closest_source(const SourceLibrary& library, const TransitionModel& model,
                           const PowerIterationOptions& opts = {});

/// Drives `stream` with the active greedy policy, checking the window TPM
/// against the active policy's TPM at every window boundary and transferring
/// a new Q-table when the distance exceeds the threshold.
AdaptResult adapt_online(const DrivingCycle& stream, const SourceLibrary& library, const AdaptOptions& opts,
                         const PowertrainParams& params, const LearningConfig& config);

void save_qtable_json(const QTable& q, const std::filesystem::path& path);
QTable load_qtable_json(const std::filesystem::path& path);
/// FNV-1a over the shape and raw value bits.
std::uint64_t qtable_hash(const QTable& q) noexcept;

}  // namespace hevrl
