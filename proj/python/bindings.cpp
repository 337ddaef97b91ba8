#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hevrl/agent.hpp"
#include "hevrl/cycle.hpp"
#include "hevrl/dpbench.hpp"
#include "hevrl/error.hpp"
#include "hevrl/harness.hpp"
#include "hevrl/markov.hpp"
#include "hevrl/powertrain.hpp"
#include "hevrl/transform.hpp"

namespace py = pybind11;
using namespace hevrl;

namespace {

DrivingCycle make_cycle(std::vector<double> speeds, double dt, std::string name) {
  return DrivingCycle(std::move(speeds), dt, std::move(name));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Driving-cycle transformation and transfer-learning energy management for hybrid vehicles";

  static py::exception<Error> error(m, "HevrlError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  py::class_<VehicleBodyParams>(m, "VehicleBodyParams")
      .def(py::init<>())
      .def_readwrite("mass", &VehicleBodyParams::mass)
      .def_readwrite("frontal_area", &VehicleBodyParams::frontal_area)
      .def_readwrite("drag_coeff", &VehicleBodyParams::drag_coeff)
      .def_readwrite("rolling_coeff", &VehicleBodyParams::rolling_coeff);

  py::class_<PowertrainParams>(m, "PowertrainParams")
      .def(py::init<>())
      .def_readwrite("body", &PowertrainParams::body)
      .def_readwrite("sigma", &PowertrainParams::sigma)
      .def_readwrite("soc_ref", &PowertrainParams::soc_ref)
      .def_readwrite("soc_init", &PowertrainParams::soc_init)
      .def_readwrite("soc_min", &PowertrainParams::soc_min)
      .def_readwrite("soc_max", &PowertrainParams::soc_max);

  py::class_<DrivingCycle>(m, "DrivingCycle")
      .def(py::init(&make_cycle), py::arg("speeds"), py::arg("dt") = 1.0, py::arg("name") = "")
      .def_property_readonly("dt", &DrivingCycle::dt)
      .def_property_readonly("name", &DrivingCycle::name)
      .def_property_readonly("speeds",
                             [](const DrivingCycle& c) { return std::vector<double>(c.speeds().begin(), c.speeds().end()); })
      .def("__len__", &DrivingCycle::size);

  m.def("load_cycle_csv", &load_cycle_csv, py::arg("path"));
  m.def("save_cycle_csv", &save_cycle_csv, py::arg("cycle"), py::arg("path"));
  m.def(
      "generate_cycle",
      [](const std::string& recipe, std::size_t duration, std::uint64_t seed, std::size_t change_point) {
        return generate_cycle({recipe_from_string(recipe), duration, seed, change_point});
      },
      py::arg("recipe"), py::arg("duration") = 3000, py::arg("seed") = 1, py::arg("change_point") = 3000);

  py::class_<MtfComponents>(m, "MtfComponents")
      .def_readonly("alpha", &MtfComponents::alpha)
      .def_readonly("beta", &MtfComponents::beta)
      .def_readonly("gamma", &MtfComponents::gamma)
      .def_readonly("distance", &MtfComponents::distance);

  m.def(
      "mtf",
      [](const DrivingCycle& c, const VehicleBodyParams& body) { return mtf_components(c, classify_modes(c, body)); },
      py::arg("cycle"), py::arg("body") = VehicleBodyParams{});
  m.def(
      "classify_modes",
      [](const DrivingCycle& c, const VehicleBodyParams& body) {
        std::vector<std::string> out;
        for (Mode mode : classify_modes(c, body)) out.emplace_back(to_string(mode));
        return out;
      },
      py::arg("cycle"), py::arg("body") = VehicleBodyParams{});

  py::class_<TransformResult>(m, "TransformResult")
      .def_readonly("transformed", &TransformResult::transformed)
      .def_readonly("cost", &TransformResult::cost)
      .def_readonly("converged", &TransformResult::converged)
      .def_readonly("iterations", &TransformResult::iterations)
      .def_readonly("message", &TransformResult::message);

  m.def(
      "transform",
      [](const DrivingCycle& c, double alpha, double beta, double gamma, const VehicleBodyParams& body) {
        py::gil_scoped_release release;
        return transform_cycle(c, body, {alpha, beta, gamma});
      },
      py::arg("cycle"), py::arg("alpha"), py::arg("beta"), py::arg("gamma"), py::arg("body") = VehicleBodyParams{});
  m.def("jerk_cost", &jerk_cost, py::arg("cycle"));

  py::class_<TransitionModel>(m, "TransitionModel")
      .def_property_readonly("levels", &TransitionModel::levels)
      .def_property_readonly("speed_bins", &TransitionModel::speed_bins)
      .def_property_readonly("total_count", &TransitionModel::total_count)
      .def("probability", &TransitionModel::probability, py::arg("bin"), py::arg("src"), py::arg("dst"))
      .def("count", &TransitionModel::count, py::arg("bin"), py::arg("src"), py::arg("dst"));

  m.def(
      "estimate_tpm",
      [](const DrivingCycle& c, const PowertrainParams& p) { return estimate_tpm(c, p.body, QuantizerGrid::defaults()); },
      py::arg("cycle"), py::arg("params") = PowertrainParams{});
  m.def("load_tpm_json", &load_tpm_json, py::arg("path"));
  m.def("save_tpm_json", &save_tpm_json, py::arg("model"), py::arg("path"));
  m.def(
      "imn", [](const TransitionModel& a, const TransitionModel& b) { return imn(a, b).aggregate; }, py::arg("a"),
      py::arg("b"));
  m.def(
      "spectral_norm_of_difference",
      [](const std::vector<double>& a, const std::vector<double>& b, std::size_t n) {
        return spectral_norm_of_difference(a, b, n);
      },
      py::arg("a"), py::arg("b"), py::arg("n"));

  m.def(
      "transfer_weights",
      [](std::vector<double> d, double tf) { return transfer_weights(std::move(d), tf).deltas; },
      py::arg("distances"), py::arg("transfer_factor") = 0.0);

  py::class_<QTable>(m, "QTable")
      .def_readonly("states", &QTable::states)
      .def_readonly("actions", &QTable::actions)
      .def_readonly("values", &QTable::values)
      .def("best_action", &QTable::best_action, py::arg("state"));
  m.def("load_qtable_json", &load_qtable_json, py::arg("path"));
  m.def("save_qtable_json", &save_qtable_json, py::arg("q"), py::arg("path"));

  m.def(
      "train",
      [](const DrivingCycle& c, std::uint64_t sweeps, std::uint64_t seed, const PowertrainParams& p) {
        py::gil_scoped_release release;
        LearningConfig lc;
        lc.sweeps = sweeps;
        lc.seed = seed;
        auto r = train(c, p, lc);
        std::vector<double> rewards;
        for (const auto& s : r.log) rewards.push_back(s.accumulated_reward);
        return std::make_pair(std::move(r.q), std::move(rewards));
      },
      py::arg("cycle"), py::arg("sweeps") = 10000, py::arg("seed") = 1, py::arg("params") = PowertrainParams{},
      "Returns (q_table, accumulated cost per sweep).");

  m.def(
      "final_soc",
      [](const DrivingCycle& c, const QTable& q, const PowertrainParams& p) {
        return simulate_greedy(c, p, q, p.soc_init).final_soc();
      },
      py::arg("cycle"), py::arg("q"), py::arg("params") = PowertrainParams{});

  m.def(
      "dp_optimal_cost",
      [](const DrivingCycle& c, std::size_t nodes, const PowertrainParams& p) {
        py::gil_scoped_release release;
        DpGrid g = DpGrid::defaults();
        g.soc_nodes = DpGrid::uniform_nodes(nodes, p.soc_min, p.soc_max);
        const auto sol = solve(c, p, g, p.soc_init);
        return std::make_pair(sol.optimal_cost, sol.total_fuel);
      },
      py::arg("cycle"), py::arg("nodes") = 121, py::arg("params") = PowertrainParams{},
      "Returns (grid optimal cost, forward-simulated fuel in g).");

  m.def(
      "compare",
      [](const std::filesystem::path& config_path, const DrivingCycle& cycle, const std::filesystem::path& library,
         const std::filesystem::path& out) {
        py::gil_scoped_release release;
        const auto config = load_config_json(config_path);
        const auto run = compare(cycle, load_library(library), config);
        emit_plot_data(run, out);
        return report_to_json_text(run.report);
      },
      py::arg("config"), py::arg("cycle"), py::arg("library"), py::arg("out"),
      "Runs the three-arm comparison, writes plot data under `out` and returns the report JSON text.");
  m.def(
      "prelearn",
      [](const std::filesystem::path& config_path, const std::filesystem::path& out) {
        py::gil_scoped_release release;
        const auto config = load_config_json(config_path);
        std::vector<DrivingCycle> cycles;
        for (const auto& s : config.sources) cycles.push_back(s.load(config.params));
        save_library(prelearn(cycles, config), out);
      },
      py::arg("config"), py::arg("out"));
}
