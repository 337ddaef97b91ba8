#include "hevrl/agent.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "hevrl/error.hpp"
#include "hevrl/rng.hpp"

namespace hevrl {

using nlohmann::json;

// ---------------------------------------------------------------- grid / table

std::vector<double> QTableGrid::default_actions() {
  std::vector<double> a(10);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 900.0 * static_cast<double>(i) / 9.0;
  return a;
}

std::size_t QTableGrid::soc_bin(double soc) const {
  const double x = (soc - soc_min) / (soc_max - soc_min) * static_cast<double>(soc_bins);
  if (!(x > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(x), soc_bins - 1);
}

std::size_t QTableGrid::state_index(std::size_t soc_b, std::size_t power_b, std::size_t speed_b) const {
  return (soc_b * demand.power_count() + power_b) * demand.speed_count() + speed_b;
}

std::size_t QTableGrid::state_index(double soc, double power_request, double speed) const {
  return state_index(soc_bin(soc), demand.power_bin(power_request), demand.speed_bin(speed));
}

void QTableGrid::validate() const {
  demand.validate();
  if (soc_bins == 0 || !(soc_max > soc_min)) throw Error(ErrorKind::InvalidArgument, "bad SOC grid");
  if (actions.empty()) throw Error(ErrorKind::InvalidArgument, "empty action set");
}

QTable::QTable(std::size_t n_states, std::size_t n_actions, double fill)
    : states(n_states), actions(n_actions), values(n_states * n_actions, fill) {}

QTable::QTable(const QTableGrid& g, double fill) : QTable(g.states(), g.action_count(), fill) {
  grid = g;
}

std::size_t QTable::best_action(std::size_t s) const {
  const double* row = values.data() + s * actions;
  std::size_t best = 0;
  for (std::size_t a = 1; a < actions; ++a) {
    if (row[a] < row[best]) best = a;
  }
  return best;
}

double QTable::min_value(std::size_t s) const { return at(s, best_action(s)); }

double LearningConfig::learning_rate(std::uint64_t k) const {
  return 1.0 / std::sqrt(static_cast<double>(k) + 2.0);
}

double LearningConfig::epsilon(std::uint64_t k) const {
  return std::max(epsilon_floor, epsilon_start * std::pow(epsilon_decay, static_cast<double>(k)));
}

void LearningConfig::validate() const {
  if (!(discount > 0.0 && discount < 1.0)) throw Error(ErrorKind::InvalidArgument, "discount must lie in (0, 1)");
  if (epsilon_start < 0.0 || epsilon_start > 1.0 || epsilon_floor < 0.0 || epsilon_floor > 1.0) {
    throw Error(ErrorKind::InvalidArgument, "exploration rates must lie in [0, 1]");
  }
}

// ---------------------------------------------------------------- learning

void q_update(QTable& q, std::size_t state, std::size_t action, double reward,
              std::optional<std::size_t> next_state, std::uint64_t iteration,
              const LearningConfig& config) {
  if (state >= q.states || action >= q.actions || (next_state && *next_state >= q.states)) {
    throw Error(ErrorKind::IndexOutOfRange, "Q-table index out of range");
  }
  const double target = reward + (next_state ? config.discount * q.min_value(*next_state) : 0.0);
  double& entry = q.at(state, action);
  entry += config.learning_rate(iteration) * (target - entry);
}

std::vector<SweepLog> q_learning(Environment& env, QTable& q, const LearningConfig& config,
                                 std::size_t max_episode_steps) {
  config.validate();
  std::vector<SweepLog> log;
  log.reserve(config.sweeps);
  Rng rng(config.seed);
  std::vector<double> before;
  for (std::uint64_t k = 0; k < config.sweeps; ++k) {
    before = q.values;
    const double eps = config.epsilon(k);
    double accumulated = 0.0;
    std::optional<std::size_t> s = env.reset();
    for (std::size_t n = 0; s && n < max_episode_steps; ++n) {
      std::size_t a;
      if (rng.uniform() < eps) {
        a = static_cast<std::size_t>(rng.below(q.actions));
      } else {
        a = q.best_action(*s);
      }
      const auto tr = env.act(a);
      accumulated += tr.reward;
      q_update(q, *s, a, tr.reward, tr.next_state, k, config);
      s = tr.next_state;
    }
    double change = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) change += std::abs(q.values[i] - before[i]);
    log.push_back({k, accumulated, before.empty() ? 0.0 : change / static_cast<double>(before.size()), eps});
  }
  q.training_sweeps += config.sweeps;
  return log;
}

CycleEnvironment::CycleEnvironment(const DrivingCycle& cycle, const PowertrainParams& params,
                                   const QTableGrid& grid, double soc_init)
    : params_(&params), grid_(&grid), demands_(cycle_demands(cycle, params)), soc_init_(soc_init) {
  power_bins_.resize(demands_.size());
  speed_bins_.resize(demands_.size());
  for (std::size_t t = 0; t < demands_.size(); ++t) {
    power_bins_[t] = grid.demand.power_bin(demands_[t].power_request);
    speed_bins_[t] = grid.demand.speed_bin(demands_[t].speed);
  }
}

std::size_t CycleEnvironment::state_at(std::size_t t, double soc) const {
  return grid_->state_index(grid_->soc_bin(soc), power_bins_[t], speed_bins_[t]);
}

std::size_t CycleEnvironment::reset() {
  t_ = 0;
  soc_ = soc_init_;
  return state_at(0, soc_);
}

Environment::Transition CycleEnvironment::act(std::size_t action) {
  const StepOutcome o = step(VehicleState{soc_, t_}, grid_->actions[action], demands_[t_], *params_);
  soc_ = o.soc_next;
  ++t_;
  Transition tr;
  tr.reward = o.reward;
  if (t_ < demands_.size()) {
    tr.next_state = state_at(t_, soc_);
  } else {
    tr.reward += charge_penalty(soc_, *params_);
  }
  return tr;
}

TrainResult train(const DrivingCycle& cycle, const PowertrainParams& params, const LearningConfig& config,
                  const QTableGrid& grid, std::optional<QTable> initial, std::optional<double> soc_init) {
  grid.validate();
  TrainResult out;
  if (initial) {
    if (initial->states != grid.states() || initial->actions != grid.action_count()) {
      throw Error(ErrorKind::ShapeMismatch, "initial Q-table does not match the grid");
    }
    out.q = std::move(*initial);
    out.q.grid = grid;
  } else {
    out.q = QTable(grid);
  }
  if (out.q.source_id.empty()) out.q.source_id = cycle.name();
  CycleEnvironment env(cycle, params, grid, soc_init.value_or(params.soc_init));
  out.log = q_learning(env, out.q, config);
  return out;
}

std::vector<std::size_t> greedy_policy(const QTable& q) {
  std::vector<std::size_t> policy(q.states);
  for (std::size_t s = 0; s < q.states; ++s) policy[s] = q.best_action(s);
  return policy;
}

PolicyTrace simulate_greedy(const DrivingCycle& cycle, const PowertrainParams& params, const QTable& q,
                            double soc_init, std::string name) {
  if (!q.grid) throw Error(ErrorKind::InvalidArgument, "Q-table carries no state grid");
  const QTableGrid& g = *q.grid;
  const auto demands = cycle_demands(cycle, params);
  const auto policy = greedy_policy(q);
  return simulate_policy(
      cycle, params,
      [&](std::size_t k, double soc) {
        return g.actions[policy[g.state_index(soc, demands[k].power_request, demands[k].speed)]];
      },
      soc_init, std::move(name));
}

// ---------------------------------------------------------------- transfer

namespace {
thread_local std::uint64_t g_transfer_calls = 0;
}

std::uint64_t transfer_q_calls_this_thread() noexcept { return g_transfer_calls; }

void SourceLibrary::validate() const {
  if (entries.empty()) throw Error(ErrorKind::InvalidArgument, "source library is empty");
  const auto& first = entries.front();
  for (const auto& e : entries) {
    if (!(e.tpm.grid() == first.tpm.grid())) throw Error(ErrorKind::GridMismatch, "library TPM grids differ");
    if (!e.q.same_shape(first.q)) throw Error(ErrorKind::GridMismatch, "library Q-table shapes differ");
    if (e.q.grid && !(e.q.grid->demand == e.tpm.grid())) {
      throw Error(ErrorKind::GridMismatch, "Q-table state grid differs from its TPM grid in entry " + e.id);
    }
  }
}

TransferWeights transfer_weights(std::vector<double> distances, double transfer_factor) {
  if (distances.empty()) throw Error(ErrorKind::InvalidArgument, "no source distances");
  if (!(transfer_factor >= 0.0)) throw Error(ErrorKind::InvalidArgument, "transfer factor must be >= 0");
  TransferWeights w;
  w.transfer_factor = transfer_factor;
  w.distances = std::move(distances);
  const std::size_t n = w.distances.size();
  const double d_max = *std::max_element(w.distances.begin(), w.distances.end());
  w.deltas.resize(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w.deltas[i] = (transfer_factor + d_max) - w.distances[i];
    sum += w.deltas[i];
  }
  if (!(sum > 0.0)) {
    // All distances equal with no transfer factor: symmetric limit.
    std::fill(w.deltas.begin(), w.deltas.end(), 1.0 / static_cast<double>(n));
    return w;
  }
  for (double& d : w.deltas) d /= sum;
  return w;
}

TransferWeights transfer_weights(const SourceLibrary& library, const TransitionModel& p_new,
                                 double transfer_factor, const PowerIterationOptions& opts) {
  library.validate();
  std::vector<double> d;
  d.reserve(library.size());
  for (const auto& e : library.entries) d.push_back(imn(e.tpm, p_new, opts).aggregate);
  return transfer_weights(std::move(d), transfer_factor);
}

QTable transfer_q(const SourceLibrary& library, const TransferWeights& weights) {
  ++g_transfer_calls;
  if (library.entries.empty() || weights.deltas.size() != library.size()) {
    throw Error(ErrorKind::ShapeMismatch, "weights do not match the library size");
  }
  const QTable& first = library.entries.front().q;
  QTable out(first.states, first.actions, 0.0);
  out.grid = first.grid;
  out.source_id = "transfer";
  for (std::size_t i = 0; i < library.size(); ++i) {
    const QTable& src = library.entries[i].q;
    if (!src.same_shape(first)) throw Error(ErrorKind::ShapeMismatch, "library Q-table shapes differ");
    const double w = weights.deltas[i];
    for (std::size_t j = 0; j < out.values.size(); ++j) out.values[j] += w * src.values[j];
  }
  return out;
}

std::size_t closest_source(const SourceLibrary& library, const TransitionModel& model,
                           const PowerIterationOptions& opts) {
  library.validate();
  std::size_t best = 0;
  double best_d = 0.0;
  for (std::size_t i = 0; i < library.size(); ++i) {
    const double d = imn(library.entries[i].tpm, model, opts).aggregate;
    if (i == 0 || d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

AdaptResult adapt_online(const DrivingCycle& stream, const SourceLibrary& library, const AdaptOptions& opts,
                         const PowertrainParams& params, const LearningConfig& config) {
  library.validate();
  if (opts.window < 2) throw Error(ErrorKind::InvalidArgument, "window must span at least two steps");
  if (!(opts.threshold > 0.0)) throw Error(ErrorKind::InvalidArgument, "IMN threshold must be positive");
  const QTable& seed_q = library.entries.front().q;
  if (!seed_q.grid) throw Error(ErrorKind::InvalidArgument, "library Q-tables carry no state grid");
  const QTableGrid grid = *seed_q.grid;
  const QuantizerGrid& qgrid = library.entries.front().tpm.grid();

  const auto demands = cycle_demands(stream, params);
  const auto modes = classify_modes(stream, params.body);
  std::vector<double> powers(demands.size());
  for (std::size_t k = 0; k < demands.size(); ++k) powers[k] = demands[k].power_request;
  const auto speeds = stream.speeds();

  auto window_tpm = [&](std::size_t end) {
    const std::size_t begin = end - std::min(end, opts.window);
    return estimate_tpm(std::span<const double>(powers).subspan(begin, end - begin),
                        speeds.subspan(begin, end - begin), qgrid);
  };

  AdaptResult out;
  const std::size_t first_end = std::min(opts.window, stream.size());
  out.initial_source = closest_source(library, window_tpm(first_end));
  out.policies.push_back(library.entries[out.initial_source].q);
  TransitionModel active_tpm = library.entries[out.initial_source].tpm;
  std::vector<std::size_t> policy = greedy_policy(out.policies.back());

  PolicyTrace& trace = out.trace;
  trace.policy = "transfer_rl";
  trace.soc_initial = params.soc_init;
  trace.records.reserve(stream.size());
  out.policy_epoch.reserve(stream.size());
  double soc = params.soc_init;

  for (std::size_t k = 0; k < stream.size(); ++k) {
    if (k > 0 && k % opts.window == 0) {
      const TransitionModel current = window_tpm(k);
      const ImnResult d = imn(active_tpm, current);
      WindowCheck check{k, d.aggregate, d.per_bin, false};
      if (d.aggregate > opts.threshold) {
        PolicyUpdate upd;
        upd.step = k;
        upd.imn = d.aggregate;
        upd.weights = transfer_weights(library, current, opts.transfer_factor);
        QTable q_new = transfer_q(library, upd.weights);
        if (opts.fine_tune && config.fine_tune_sweeps > 0) {
          LearningConfig ft = config;
          ft.sweeps = config.fine_tune_sweeps;
          ft.seed = config.seed + 7919 * (out.updates.size() + 1);
          const DrivingCycle recent = stream.slice(k - opts.window, opts.window, stream.name() + "/window");
          auto res = train(recent, params, ft, grid, std::move(q_new), soc);
          q_new = std::move(res.q);
          upd.fine_tune_log = std::move(res.log);
        }
        out.policies.push_back(std::move(q_new));
        policy = greedy_policy(out.policies.back());
        active_tpm = current;
        check.updated = true;
        out.updates.push_back(std::move(upd));
      }
      out.checks.push_back(std::move(check));
    }

    const std::size_t s = grid.state_index(soc, demands[k].power_request, demands[k].speed);
    const StepOutcome o = step(VehicleState{soc, k}, grid.actions[policy[s]], demands[k], params);
    TraceRecord r;
    r.t = static_cast<double>(k) * stream.dt();
    r.speed = stream[k];
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
    out.policy_epoch.push_back(out.policies.size() - 1);
    soc = o.soc_next;
  }
  trace.terminal_cost = charge_penalty(soc, params);
  return out;
}

// ---------------------------------------------------------------- persistence

std::uint64_t qtable_hash(const QTable& q) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
      h ^= (word >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(q.states);
  mix(q.actions);
  for (double v : q.values) mix(std::bit_cast<std::uint64_t>(v));
  return h;
}

namespace {

std::string hex64(std::uint64_t x) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << x;
  return os.str();
}

json qgrid_to_json(const QTableGrid& g) {
  return {{"soc_bins", g.soc_bins},
          {"soc_min", g.soc_min},
          {"soc_max", g.soc_max},
          {"power_levels", g.demand.power_levels},
          {"speed_edges", g.demand.speed_edges},
          {"actions", g.actions}};
}

QTableGrid qgrid_from_json(const json& j) {
  QTableGrid g;
  g.soc_bins = j.at("soc_bins").get<std::size_t>();
  g.soc_min = j.at("soc_min").get<double>();
  g.soc_max = j.at("soc_max").get<double>();
  g.demand.power_levels = j.at("power_levels").get<std::vector<double>>();
  g.demand.speed_edges = j.at("speed_edges").get<std::vector<double>>();
  g.actions = j.at("actions").get<std::vector<double>>();
  g.validate();
  return g;
}

}  // namespace

void save_qtable_json(const QTable& q, const std::filesystem::path& path) {
  json j;
  j["format"] = "hevrl.qtable/1";
  j["states"] = q.states;
  j["actions"] = q.actions;
  if (q.grid) j["grid"] = qgrid_to_json(*q.grid);
  j["source_id"] = q.source_id;
  j["training_sweeps"] = q.training_sweeps;
  j["values"] = q.values;
  j["hash"] = hex64(qtable_hash(q));
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

QTable load_qtable_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    const json j = json::parse(in);
    if (j.at("format") != "hevrl.qtable/1") throw Error(ErrorKind::Parse, "unknown Q-table format");
    QTable q(j.at("states").get<std::size_t>(), j.at("actions").get<std::size_t>());
    q.values = j.at("values").get<std::vector<double>>();
    if (q.values.size() != q.states * q.actions) throw Error(ErrorKind::Parse, "Q-table value count mismatch");
    if (j.contains("grid")) {
      q.grid = qgrid_from_json(j.at("grid"));
      if (q.grid->states() != q.states || q.grid->action_count() != q.actions) {
        throw Error(ErrorKind::Parse, "Q-table grid does not match its shape");
      }
    }
    q.source_id = j.value("source_id", "");
    q.training_sweeps = j.value("training_sweeps", std::uint64_t{0});
    if (j.at("hash").get<std::string>() != hex64(qtable_hash(q))) {
      throw Error(ErrorKind::Parse, path.string() + ": content hash mismatch");
    }
    return q;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void save_library(const SourceLibrary& library, const std::filesystem::path& dir) {
  library.validate();
  std::filesystem::create_directories(dir);
  json index;
  index["format"] = "hevrl.library/1";
  index["entries"] = json::array();
  for (std::size_t i = 0; i < library.size(); ++i) {
    const auto& e = library.entries[i];
    const std::string stem = "source_" + std::to_string(i);
    save_tpm_json(e.tpm, dir / (stem + ".tpm.json"));
    save_qtable_json(e.q, dir / (stem + ".q.json"));
    index["entries"].push_back({{"id", e.id}, {"tpm", stem + ".tpm.json"}, {"q", stem + ".q.json"}});
  }
  std::ofstream out(dir / "library.json");
  if (!out) throw Error(ErrorKind::Io, "cannot write library index in " + dir.string());
  out << index.dump(1) << '\n';
}

SourceLibrary load_library(const std::filesystem::path& dir) {
  std::ifstream in(dir / "library.json");
  if (!in) throw Error(ErrorKind::Io, "no library.json in " + dir.string());
  SourceLibrary lib;
  try {
    const json index = json::parse(in);
    if (index.at("format") != "hevrl.library/1") throw Error(ErrorKind::Parse, "unknown library format");
    for (const auto& e : index.at("entries")) {
      lib.entries.push_back({e.at("id").get<std::string>(),
                             load_tpm_json(dir / e.at("tpm").get<std::string>()),
                             load_qtable_json(dir / e.at("q").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, dir.string() + ": " + e.what());
  }
  lib.validate();
  return lib;
}

}  // namespace hevrl
