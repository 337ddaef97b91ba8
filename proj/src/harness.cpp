#include "hevrl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "hevrl/error.hpp"
#include "hevrl/rng.hpp"

namespace hevrl {

using nlohmann::json;

// ---------------------------------------------------------------- synthetic corpus

const char* to_string(Recipe r) noexcept {
  switch (r) {
    case Recipe::Urban: return "urban";
    case Recipe::Suburban: return "suburban";
    case Recipe::Highway: return "highway";
    case Recipe::ChangePoint: return "change_point";
  }
  return "?";
}

Recipe recipe_from_string(const std::string& name) {
  for (Recipe r : {Recipe::Urban, Recipe::Suburban, Recipe::Highway, Recipe::ChangePoint}) {
    if (name == to_string(r)) return r;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown cycle recipe '" + name + "'");
}

double traction_capability(double speed, const PowertrainParams& p) {
  constexpr double rpm = std::numbers::pi / 30.0;
  const double ratio = p.gears.ratios[p.gears.gear_for(speed)];
  const double r = p.body.tire_radius;
  const double omega = speed * ratio / r;
  const auto& b = p.battery;
  const double i = b.current_max;
  const double battery = std::min(b.power_max, b.open_circuit_voltage * i - b.internal_resistance * i * i);
  const double motor_power = std::min(p.motor.max_power, battery * p.motor.efficiency);
  double force;
  if (speed < 0.5) {
    force = std::min(p.motor.max_torque * ratio / r, motor_power / 0.5) * p.transmission_efficiency;
  } else {
    double engine = 0.0;
    if (speed >= p.gears.launch_speed && omega >= p.engine.idle_speed_rpm * rpm &&
        omega <= p.engine.max_speed_rpm * rpm) {
      engine = std::min(p.engine.rated_power, p.engine.max_torque * omega);
    }
    const double motor = std::min(motor_power, p.motor.max_torque * omega);
    force = (engine + motor) * p.transmission_efficiency / speed;
  }
  return (force - longitudinal_force(speed, 0.0, p.body)) / p.body.mass;
}

namespace {

class TraceBuilder {
 public:
  TraceBuilder(const PowertrainParams& params, Rng& rng) : params_(params), rng_(rng) {}

  std::size_t size() const { return v_.size(); }
  double last() const { return v_.empty() ? 0.0 : v_.back(); }
  const std::vector<double>& speeds() const { return v_; }

  void idle(std::size_t n) { v_.insert(v_.end(), n, 0.0); }

  void accelerate_to(double target, double nominal) {
    double v = last();
    while (v < target - 1e-9) {
      const double a = std::min(nominal, 0.7 * traction_capability(v, params_));
      v = std::min(v + std::max(a, 0.05), target);
      v_.push_back(v);
    }
  }

  void decelerate_to(double target, double rate) {
    double v = last();
    while (v > target + 1e-9) {
      v = std::max(v - rate, target);
      v_.push_back(v);
    }
  }

  // Engine off, no brake: the body's own resistance slows it down.
  void coast(std::size_t n) {
    double v = last();
    for (std::size_t k = 0; k < n; ++k) {
      v = coasting_velocity(v, 1.0, params_.body);
      v_.push_back(v);
    }
  }

  void coast_to(double target) {
    double v = last();
    while (v > target) {
      v = coasting_velocity(v, 1.0, params_.body);
      v_.push_back(v);
    }
  }

  // Hold around `speed` with a bounded random walk that settles back onto
  // `speed` over the final samples, so the next manoeuvre starts from the
  // same state every time.
  void cruise(std::size_t n, double speed, double wobble) {
    constexpr double kStep = 0.02;
    const std::size_t settle = static_cast<std::size_t>(std::ceil(wobble / kStep)) + 1;
    double offset = last() - speed;
    for (std::size_t k = 0; k < n; ++k) {
      if (k + settle < n) {
        offset = std::clamp(offset + rng_.uniform(-kStep, kStep), -wobble, wobble);
      } else {
        offset -= std::clamp(offset, -kStep, kStep);
      }
      v_.push_back(speed + offset);
    }
  }

  void append(const std::vector<double>& part) { v_.insert(v_.end(), part.begin(), part.end()); }

 private:
  const PowertrainParams& params_;
  Rng& rng_;
  std::vector<double> v_;
};

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

// Microtrips (idle, launch, hold, stop) appended until the next one would
// overrun `duration`; the remainder is idle.
template <typename Trip>
std::vector<double> microtrips(std::size_t duration, const PowertrainParams& params, Rng& rng, Trip trip) {
  TraceBuilder out(params, rng);
  for (;;) {
    TraceBuilder t(params, rng);
    trip(t);
    if (out.size() + t.size() > duration) break;
    out.append(t.speeds());
  }
  std::vector<double> v = out.speeds();
  v.resize(duration, 0.0);
  return v;
}

// Cruise speeds are chosen so the steady power request sits near the middle
// of a default power bin; launches and stops repeat exactly from trip to trip.
std::vector<double> urban(std::size_t duration, const PowertrainParams& p, Rng& rng) {
  return microtrips(duration, p, rng, [&](TraceBuilder& t) {
    t.idle(pick(rng, 12, 18));
    t.accelerate_to(11.0, 0.6);
    t.cruise(pick(rng, 25, 40), 11.0, 0.3);
    t.coast(6);
    t.decelerate_to(0.0, 0.8);
  });
}

std::vector<double> suburban(std::size_t duration, const PowertrainParams& p, Rng& rng) {
  return microtrips(duration, p, rng, [&](TraceBuilder& t) {
    t.idle(pick(rng, 12, 18));
    t.accelerate_to(18.0, 0.5);
    t.cruise(pick(rng, 80, 120), 18.0, 0.3);
    t.coast(20);
    t.decelerate_to(0.0, 0.7);
  });
}

std::vector<double> highway(std::size_t duration, const PowertrainParams& p, Rng& rng) {
  return microtrips(duration, p, rng, [&](TraceBuilder& t) {
    t.idle(pick(rng, 12, 18));
    t.accelerate_to(24.0, 0.5);
    t.cruise(pick(rng, 60, 100), 24.0, 0.3);
    t.coast_to(19.0);
    t.cruise(pick(rng, 20, 30), 19.0, 0.3);
    t.accelerate_to(24.0, 0.15);
    t.cruise(pick(rng, 60, 100), 24.0, 0.3);
    t.coast(12);
    t.decelerate_to(0.0, 0.7);
  });
}

}  // namespace

DrivingCycle generate_cycle(const CycleSpec& spec, const PowertrainParams& params) {
  if (spec.duration < 2) throw Error(ErrorKind::InvalidArgument, "cycle duration must be at least 2 s");
  Rng rng(spec.seed);
  std::vector<double> v;
  switch (spec.recipe) {
    case Recipe::Urban: v = urban(spec.duration, params, rng); break;
    case Recipe::Suburban: v = suburban(spec.duration, params, rng); break;
    case Recipe::Highway: v = highway(spec.duration, params, rng); break;
    case Recipe::ChangePoint: {
      if (spec.change_point == 0 || spec.change_point >= spec.duration) {
        throw Error(ErrorKind::InvalidArgument, "change point must fall inside the cycle");
      }
      v = urban(spec.change_point, params, rng);
      const auto tail = highway(spec.duration - spec.change_point, params, rng);
      v.insert(v.end(), tail.begin(), tail.end());
      break;
    }
  }
  std::ostringstream name;
  name << to_string(spec.recipe) << "_s" << spec.seed;
  return DrivingCycle(std::move(v), 1.0, name.str());
}

// ---------------------------------------------------------------- configuration

DrivingCycle CycleSource::load(const PowertrainParams& params) const {
  if (path) {
    DrivingCycle c = load_cycle_csv(*path);
    if (!id.empty()) return DrivingCycle(std::vector<double>(c.speeds().begin(), c.speeds().end()), c.dt(), id);
    return c;
  }
  if (spec) {
    DrivingCycle c = generate_cycle(*spec, params);
    if (!id.empty()) return DrivingCycle(std::vector<double>(c.speeds().begin(), c.speeds().end()), c.dt(), id);
    return c;
  }
  throw Error(ErrorKind::InvalidArgument, "cycle source needs a path or a recipe");
}

void ExperimentConfig::validate() const {
  if (!(imn_threshold > 0.0)) throw Error(ErrorKind::InvalidArgument, "imn_threshold must be positive");
  if (window < 2) throw Error(ErrorKind::InvalidArgument, "window must be at least two samples");
  if (!(transfer_factor >= 0.0)) throw Error(ErrorKind::InvalidArgument, "transfer_factor must be >= 0");
  if (dp_soc_nodes < 2) throw Error(ErrorKind::InvalidArgument, "dp_soc_nodes must be at least 2");
  learning.validate();
  qgrid.validate();
  params.validate();
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

json params_to_json(const PowertrainParams& p) {
  return {
      {"body",
       {{"mass", p.body.mass},
        {"frontal_area", p.body.frontal_area},
        {"drag_coeff", p.body.drag_coeff},
        {"rolling_coeff", p.body.rolling_coeff},
        {"air_density", p.body.air_density},
        {"gravity", p.body.gravity},
        {"tire_radius", p.body.tire_radius}}},
      {"transmission_efficiency", p.transmission_efficiency},
      {"engine",
       {{"max_torque", p.engine.max_torque},
        {"rated_power", p.engine.rated_power},
        {"idle_speed_rpm", p.engine.idle_speed_rpm},
        {"max_speed_rpm", p.engine.max_speed_rpm},
        {"indicated_efficiency", p.engine.indicated_efficiency},
        {"lower_heating_value", p.engine.lower_heating_value},
        {"friction_coeff", p.engine.friction_coeff}}},
      {"motor",
       {{"max_torque", p.motor.max_torque},
        {"max_power", p.motor.max_power},
        {"max_speed_rpm", p.motor.max_speed_rpm},
        {"efficiency", p.motor.efficiency}}},
      {"battery",
       {{"capacity_ah", p.battery.capacity_ah},
        {"open_circuit_voltage", p.battery.open_circuit_voltage},
        {"internal_resistance", p.battery.internal_resistance},
        {"current_min", p.battery.current_min},
        {"current_max", p.battery.current_max},
        {"power_min", p.battery.power_min},
        {"power_max", p.battery.power_max}}},
      {"gears",
       {{"ratios", p.gears.ratios},
        {"upshift_speeds", p.gears.upshift_speeds},
        {"hysteresis", p.gears.hysteresis},
        {"launch_speed", p.gears.launch_speed}}},
      {"sigma", p.sigma},
      {"soc_ref", p.soc_ref},
      {"soc_min", p.soc_min},
      {"soc_max", p.soc_max},
      {"soc_init", p.soc_init},
      {"infeasible_penalty", p.infeasible_penalty},
  };
}

PowertrainParams params_from_json(const json& j) {
  PowertrainParams p;
  if (j.contains("body")) {
    const auto& b = j.at("body");
    read(b, "mass", p.body.mass);
    read(b, "frontal_area", p.body.frontal_area);
    read(b, "drag_coeff", p.body.drag_coeff);
    read(b, "rolling_coeff", p.body.rolling_coeff);
    read(b, "air_density", p.body.air_density);
    read(b, "gravity", p.body.gravity);
    read(b, "tire_radius", p.body.tire_radius);
  }
  read(j, "transmission_efficiency", p.transmission_efficiency);
  if (j.contains("engine")) {
    const auto& e = j.at("engine");
    read(e, "max_torque", p.engine.max_torque);
    read(e, "rated_power", p.engine.rated_power);
    read(e, "idle_speed_rpm", p.engine.idle_speed_rpm);
    read(e, "max_speed_rpm", p.engine.max_speed_rpm);
    read(e, "indicated_efficiency", p.engine.indicated_efficiency);
    read(e, "lower_heating_value", p.engine.lower_heating_value);
    read(e, "friction_coeff", p.engine.friction_coeff);
  }
  if (j.contains("motor")) {
    const auto& m = j.at("motor");
    read(m, "max_torque", p.motor.max_torque);
    read(m, "max_power", p.motor.max_power);
    read(m, "max_speed_rpm", p.motor.max_speed_rpm);
    read(m, "efficiency", p.motor.efficiency);
  }
  if (j.contains("battery")) {
    const auto& b = j.at("battery");
    read(b, "capacity_ah", p.battery.capacity_ah);
    read(b, "open_circuit_voltage", p.battery.open_circuit_voltage);
    read(b, "internal_resistance", p.battery.internal_resistance);
    read(b, "current_min", p.battery.current_min);
    read(b, "current_max", p.battery.current_max);
    read(b, "power_min", p.battery.power_min);
    read(b, "power_max", p.battery.power_max);
  }
  if (j.contains("gears")) {
    const auto& g = j.at("gears");
    read(g, "ratios", p.gears.ratios);
    read(g, "upshift_speeds", p.gears.upshift_speeds);
    read(g, "hysteresis", p.gears.hysteresis);
    read(g, "launch_speed", p.gears.launch_speed);
  }
  read(j, "sigma", p.sigma);
  read(j, "soc_ref", p.soc_ref);
  read(j, "soc_min", p.soc_min);
  read(j, "soc_max", p.soc_max);
  read(j, "soc_init", p.soc_init);
  read(j, "infeasible_penalty", p.infeasible_penalty);
  p.validate();
  return p;
}

json spec_to_json(const CycleSpec& s) {
  json j{{"recipe", to_string(s.recipe)}, {"duration", s.duration}, {"seed", s.seed}};
  if (s.recipe == Recipe::ChangePoint) j["change_point"] = s.change_point;
  return j;
}

CycleSpec spec_from_json(const json& j) {
  CycleSpec s;
  s.recipe = recipe_from_string(j.at("recipe").get<std::string>());
  read(j, "duration", s.duration);
  read(j, "seed", s.seed);
  read(j, "change_point", s.change_point);
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    ExperimentConfig c;
    if (j.contains("sources")) {
      for (const auto& s : j.at("sources")) {
        CycleSource src;
        read(s, "id", src.id);
        if (s.contains("path")) src.path = std::filesystem::path(s.at("path").get<std::string>());
        if (s.contains("recipe")) src.spec = spec_from_json(s);
        if (!src.path && !src.spec) throw Error(ErrorKind::Parse, "source needs 'path' or 'recipe'");
        c.sources.push_back(std::move(src));
      }
    }
    read(j, "imn_threshold", c.imn_threshold);
    read(j, "window", c.window);
    read(j, "transfer_factor", c.transfer_factor);
    read(j, "seed", c.seed);
    c.learning.seed = c.seed;
    if (j.contains("learning")) {
      const auto& l = j.at("learning");
      read(l, "discount", c.learning.discount);
      read(l, "sweeps", c.learning.sweeps);
      read(l, "epsilon_start", c.learning.epsilon_start);
      read(l, "epsilon_decay", c.learning.epsilon_decay);
      read(l, "epsilon_floor", c.learning.epsilon_floor);
      read(l, "fine_tune_sweeps", c.learning.fine_tune_sweeps);
    }
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      read(g, "soc_bins", c.qgrid.soc_bins);
      read(g, "power_levels", c.qgrid.demand.power_levels);
      read(g, "speed_edges", c.qgrid.demand.speed_edges);
      read(g, "actions", c.qgrid.actions);
      read(g, "dp_soc_nodes", c.dp_soc_nodes);
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("params")) c.params = params_from_json(j.at("params"));
    c.qgrid.soc_min = c.params.soc_min;
    c.qgrid.soc_max = c.params.soc_max;
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("config: ") + e.what());
  }
}

std::string config_to_json_text(const ExperimentConfig& c) {
  json sources = json::array();
  for (const auto& s : c.sources) {
    json e = s.spec ? spec_to_json(*s.spec) : json::object();
    if (s.path) e["path"] = s.path->string();
    if (!s.id.empty()) e["id"] = s.id;
    sources.push_back(std::move(e));
  }
  json j{{"sources", sources},
         {"imn_threshold", c.imn_threshold},
         {"window", c.window},
         {"transfer_factor", c.transfer_factor},
         {"seed", c.seed},
         {"learning",
          {{"discount", c.learning.discount},
           {"sweeps", c.learning.sweeps},
           {"epsilon_start", c.learning.epsilon_start},
           {"epsilon_decay", c.learning.epsilon_decay},
           {"epsilon_floor", c.learning.epsilon_floor},
           {"fine_tune_sweeps", c.learning.fine_tune_sweeps}}},
         {"grid",
          {{"soc_bins", c.qgrid.soc_bins},
           {"power_levels", c.qgrid.demand.power_levels},
           {"speed_edges", c.qgrid.demand.speed_edges},
           {"actions", c.qgrid.actions},
           {"dp_soc_nodes", c.dp_soc_nodes}}},
         {"output_dir", c.output_dir.string()},
         {"params", params_to_json(c.params)}};
  return j.dump(2) + "\n";
}

ExperimentConfig load_config_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return config_from_json_text(text);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Parse) throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
    throw;
  }
}

PowertrainParams load_params_json(const std::filesystem::path& path) {
  try {
    return params_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void save_params_json(const PowertrainParams& params, const std::filesystem::path& path) {
  write_file(path, params_to_json(params).dump(2) + "\n");
}

// ---------------------------------------------------------------- experiments

SourceLibrary prelearn(const std::vector<DrivingCycle>& cycles, const ExperimentConfig& config) {
  if (cycles.empty()) throw Error(ErrorKind::InvalidArgument, "prelearn needs at least one cycle");
  config.validate();
  std::vector<std::future<LibraryEntry>> jobs;
  for (std::size_t i = 0; i < cycles.size(); ++i) {
    jobs.push_back(std::async(std::launch::async, [&, i] {
      const DrivingCycle& c = cycles[i];
      LearningConfig lc = config.learning;
      lc.seed = config.learning.seed + 1000003ULL * i;
      auto trained = train(c, config.params, lc, config.qgrid);
      trained.q.source_id = c.name();
      return LibraryEntry{c.name(), estimate_tpm(c, config.params.body, config.qgrid.demand), std::move(trained.q)};
    }));
  }
  SourceLibrary lib;
  for (auto& j : jobs) lib.entries.push_back(j.get());
  lib.validate();
  return lib;
}

const MethodResult& ComparisonReport::method(const std::string& name) const {
  for (const auto& m : methods) {
    if (m.name == name) return m;
  }
  throw Error(ErrorKind::InvalidArgument, "report has no method '" + name + "'");
}

void fill_relative_increases(std::vector<MethodResult>& methods) {
  if (methods.empty()) return;
  double best_fuel = methods.front().total_fuel;
  double best_cost = methods.front().grid_cost;
  for (const auto& m : methods) {
    best_fuel = std::min(best_fuel, m.total_fuel);
    best_cost = std::min(best_cost, m.grid_cost);
  }
  for (auto& m : methods) {
    m.fuel_increase_pct = best_fuel > 0.0 ? 100.0 * (m.total_fuel - best_fuel) / best_fuel : 0.0;
    m.cost_increase_pct = best_cost > 0.0 ? 100.0 * (m.grid_cost - best_cost) / best_cost : 0.0;
  }
}

namespace {

MethodResult summarize(const std::string& name, const PolicyTrace& trace, double grid_cost) {
  MethodResult m;
  m.name = name;
  m.total_fuel = total_fuel(trace);
  m.total_cost = trace.total_cost();
  m.grid_cost = grid_cost;
  m.final_soc = trace.final_soc();
  m.infeasible_steps = trace.infeasible_steps();
  return m;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

ComparisonRun compare(const DrivingCycle& cycle, const SourceLibrary& library, const ExperimentConfig& config) {
  config.validate();
  library.validate();
  const PowertrainParams& params = config.params;
  const QTableGrid& qgrid = *library.entries.front().q.grid;
  DpGrid dp_grid{DpGrid::uniform_nodes(config.dp_soc_nodes, params.soc_min, params.soc_max), qgrid.actions};
  const auto demands = cycle_demands(cycle, params);

  struct DpArm {
    DpSolution sol;
    double seconds;
  };
  struct TransferArm {
    AdaptResult result;
    std::uint64_t calls;
    double seconds;
  };
  struct ConventionalArm {
    std::size_t source;
    PolicyTrace trace;
    std::uint64_t calls;
    double seconds;
  };

  auto dp_job = std::async(std::launch::async, [&] {
    const auto t0 = std::chrono::steady_clock::now();
    DpSolution sol = solve(cycle, params, dp_grid, params.soc_init);
    return DpArm{std::move(sol), seconds_since(t0)};
  });
  auto transfer_job = std::async(std::launch::async, [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t before = transfer_q_calls_this_thread();
    AdaptOptions opts;
    opts.threshold = config.imn_threshold;
    opts.window = config.window;
    opts.transfer_factor = config.transfer_factor;
    AdaptResult r = adapt_online(cycle, library, opts, params, config.learning);
    const std::uint64_t calls = transfer_q_calls_this_thread() - before;
    return TransferArm{std::move(r), calls, seconds_since(t0)};
  });
  auto conventional_job = std::async(std::launch::async, [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t before = transfer_q_calls_this_thread();
    const std::size_t first_end = std::min(config.window, cycle.size());
    std::vector<double> powers(first_end);
    for (std::size_t k = 0; k < first_end; ++k) powers[k] = demands[k].power_request;
    const auto tpm = estimate_tpm(powers, cycle.speeds().subspan(0, first_end), qgrid.demand);
    const std::size_t src = closest_source(library, tpm);
    PolicyTrace trace = simulate_greedy(cycle, params, library.entries[src].q, params.soc_init, "conventional_rl");
    const std::uint64_t calls = transfer_q_calls_this_thread() - before;
    return ConventionalArm{src, std::move(trace), calls, seconds_since(t0)};
  });

  DpArm dp = dp_job.get();
  TransferArm tr = transfer_job.get();
  ConventionalArm conv = conventional_job.get();

  // Grid-model costs of both RL arms, directly comparable with the DP optimum.
  std::vector<std::vector<std::size_t>> greedy;
  for (const auto& q : tr.result.policies) greedy.push_back(greedy_policy(q));
  const auto conv_policy = greedy_policy(library.entries[conv.source].q);
  auto state = [&](std::size_t t, double soc) {
    return qgrid.state_index(soc, demands[t].power_request, demands[t].speed);
  };
  const double transfer_grid = evaluate_on_grid(
      cycle, params, dp_grid,
      [&](std::size_t t, double soc) { return greedy[tr.result.policy_epoch[t]][state(t, soc)]; }, params.soc_init);
  const double conventional_grid = evaluate_on_grid(
      cycle, params, dp_grid, [&](std::size_t t, double soc) { return conv_policy[state(t, soc)]; },
      params.soc_init);

  ComparisonRun run;
  auto& rep = run.report;
  rep.cycle = cycle.name();
  rep.steps = cycle.size();
  rep.threshold = config.imn_threshold;
  rep.window = config.window;
  rep.initial_source = tr.result.initial_source;
  for (const auto& u : tr.result.updates) rep.update_steps.push_back(u.step);
  for (const auto& c : tr.result.checks) rep.imn_series.push_back({c.step, c.imn, c.updated});

  run.dp_trace = std::move(dp.sol.trace);
  run.transfer_trace = std::move(tr.result.trace);
  run.conventional_trace = std::move(conv.trace);
  run.updates = std::move(tr.result.updates);

  rep.methods.push_back(summarize("dp", run.dp_trace, dp.sol.optimal_cost));
  rep.methods.push_back(summarize("transfer_rl", run.transfer_trace, transfer_grid));
  rep.methods.push_back(summarize("conventional_rl", run.conventional_trace, conventional_grid));
  rep.methods[1].transfer_calls = tr.calls;
  rep.methods[2].transfer_calls = conv.calls;
  fill_relative_increases(rep.methods);

  run.timings = {dp.seconds, tr.seconds, conv.seconds};
  return run;
}

// ---------------------------------------------------------------- persistence

namespace {

// Shortest text that round-trips the double exactly.
std::string num(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

}  // namespace

std::string report_to_json_text(const ComparisonReport& r) {
  json methods = json::array();
  for (const auto& m : r.methods) {
    methods.push_back({{"name", m.name},
                       {"total_fuel_g", m.total_fuel},
                       {"total_cost", m.total_cost},
                       {"grid_cost", m.grid_cost},
                       {"final_soc", m.final_soc},
                       {"infeasible_steps", m.infeasible_steps},
                       {"fuel_increase_pct", m.fuel_increase_pct},
                       {"cost_increase_pct", m.cost_increase_pct},
                       {"transfer_calls", m.transfer_calls}});
  }
  json imn = json::array();
  for (const auto& p : r.imn_series) imn.push_back({{"step", p.step}, {"imn", p.imn}, {"updated", p.updated}});
  json j{{"format", "hevrl.report/1"},
         {"cycle", r.cycle},
         {"steps", r.steps},
         {"threshold", r.threshold},
         {"window", r.window},
         {"methods", methods},
         {"initial_source", r.initial_source},
         {"update_steps", r.update_steps},
         {"imn_series", imn}};
  return j.dump(2) + "\n";
}

ComparisonReport report_from_json_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "hevrl.report/1") throw Error(ErrorKind::Parse, "unknown report format");
    ComparisonReport r;
    r.cycle = j.at("cycle").get<std::string>();
    r.steps = j.at("steps").get<std::size_t>();
    r.threshold = j.at("threshold").get<double>();
    r.window = j.at("window").get<std::size_t>();
    for (const auto& m : j.at("methods")) {
      MethodResult x;
      x.name = m.at("name").get<std::string>();
      x.total_fuel = m.at("total_fuel_g").get<double>();
      x.total_cost = m.at("total_cost").get<double>();
      x.grid_cost = m.at("grid_cost").get<double>();
      x.final_soc = m.at("final_soc").get<double>();
      x.infeasible_steps = m.at("infeasible_steps").get<std::size_t>();
      x.fuel_increase_pct = m.at("fuel_increase_pct").get<double>();
      x.cost_increase_pct = m.at("cost_increase_pct").get<double>();
      x.transfer_calls = m.at("transfer_calls").get<std::uint64_t>();
      r.methods.push_back(std::move(x));
    }
    r.initial_source = j.at("initial_source").get<std::size_t>();
    r.update_steps = j.at("update_steps").get<std::vector<std::size_t>>();
    for (const auto& p : j.at("imn_series")) {
      r.imn_series.push_back({p.at("step").get<std::size_t>(), p.at("imn").get<double>(), p.at("updated").get<bool>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("report: ") + e.what());
  }
}

ComparisonReport load_report_json(const std::filesystem::path& path) {
  return report_from_json_text(read_file(path));
}

void save_trace_csv(const PolicyTrace& trace, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "# policy=" << trace.policy << " soc_initial=" << num(trace.soc_initial)
     << " terminal_cost=" << num(trace.terminal_cost) << '\n';
  os << "t,v,mode,engine_torque,engine_speed,p_engine,p_battery,p_brake,soc,fuel_g,reward,feasible\n";
  for (const auto& r : trace.records) {
    os << num(r.t) << ',' << num(r.speed) << ',' << to_string(r.mode) << ',' << num(r.engine_torque) << ','
       << num(r.engine_speed) << ',' << num(r.p_engine) << ',' << num(r.p_battery) << ',' << num(r.p_brake) << ','
       << num(r.soc) << ',' << num(r.fuel_g) << ',' << num(r.reward) << ',' << (r.feasible ? 1 : 0) << '\n';
  }
  write_file(path, os.str());
}

PolicyTrace load_trace_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  PolicyTrace trace;
  std::string line;
  auto bad = [&](const std::string& why) { return Error(ErrorKind::Parse, path.string() + ": " + why); };
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw bad("missing metadata line");
  {
    std::istringstream meta(line.substr(2));
    std::string field;
    while (meta >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw bad("bad metadata field");
      const std::string key = field.substr(0, eq);
      const std::string value = field.substr(eq + 1);
      if (key == "policy") trace.policy = value;
      if (key == "soc_initial") trace.soc_initial = std::stod(value);
      if (key == "terminal_cost") trace.terminal_cost = std::stod(value);
    }
  }
  if (!std::getline(in, line)) throw bad("missing header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 12) throw bad("expected 12 columns");
    TraceRecord r;
    r.t = std::stod(cells[0]);
    r.speed = std::stod(cells[1]);
    r.mode = Mode::Idle;
    for (Mode m : {Mode::Traction, Mode::Coasting, Mode::Braking, Mode::Idle}) {
      if (cells[2] == to_string(m)) r.mode = m;
    }
    r.engine_torque = std::stod(cells[3]);
    r.engine_speed = std::stod(cells[4]);
    r.p_engine = std::stod(cells[5]);
    r.p_battery = std::stod(cells[6]);
    r.p_brake = std::stod(cells[7]);
    r.soc = std::stod(cells[8]);
    r.fuel_g = std::stod(cells[9]);
    r.reward = std::stod(cells[10]);
    r.feasible = cells[11] == "1";
    trace.records.push_back(r);
  }
  return trace;
}

void emit_plot_data(const ComparisonRun& run, const std::filesystem::path& outdir) {
  std::filesystem::create_directories(outdir);
  write_file(outdir / "report.json", report_to_json_text(run.report));

  json timing{{"dp_s", run.timings.dp},
              {"transfer_rl_s", run.timings.transfer_rl},
              {"conventional_rl_s", run.timings.conventional_rl}};
  write_file(outdir / "timing.json", timing.dump(2) + "\n");

  std::ostringstream imn;
  imn << "step,imn,updated\n";
  for (const auto& p : run.report.imn_series) imn << p.step << ',' << num(p.imn) << ',' << (p.updated ? 1 : 0) << '\n';
  write_file(outdir / "imn.csv", imn.str());

  std::ostringstream conv;
  conv << "update_step,sweep,accumulated_reward,mean_discrepancy,epsilon\n";
  for (const auto& u : run.updates) {
    for (const auto& s : u.fine_tune_log) {
      conv << u.step << ',' << s.sweep << ',' << num(s.accumulated_reward) << ',' << num(s.mean_discrepancy) << ','
           << num(s.epsilon) << '\n';
    }
  }
  write_file(outdir / "q_convergence.csv", conv.str());

  const std::pair<const char*, const PolicyTrace*> arms[] = {
      {"dp", &run.dp_trace}, {"transfer_rl", &run.transfer_trace}, {"conventional_rl", &run.conventional_trace}};
  for (const auto& [name, trace] : arms) {
    const auto dir = outdir / name;
    std::filesystem::create_directories(dir);
    save_trace_csv(*trace, dir / "trace.csv");
    std::ostringstream pts;
    pts << "t,engine_speed,engine_torque\n";
    for (const auto& r : trace->records) {
      if (r.p_engine > 0.0) pts << num(r.t) << ',' << num(r.engine_speed) << ',' << num(r.engine_torque) << '\n';
    }
    write_file(dir / "engine_points.csv", pts.str());
  }
}

}  // namespace hevrl
