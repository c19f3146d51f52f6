// Python module koopmhe._core.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "koopmhe/error.hpp"
#include "koopmhe/experiment.hpp"
#include "koopmhe/koopman_model.hpp"
#include "koopmhe/log.hpp"
#include "koopmhe/mhe.hpp"
#include "koopmhe/process.hpp"
#include "koopmhe/training.hpp"

namespace py = pybind11;
using namespace koopmhe;

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "Physics-informed Koopman models and moving-horizon estimation";

  static py::exception<Error> error_type(mod, "KoopmheError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(e.what());
      exc.attr("code") = to_string(e.code());
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  py::enum_<LogLevel>(mod, "LogLevel")
      .value("QUIET", LogLevel::kQuiet)
      .value("WARNING", LogLevel::kWarning)
      .value("INFO", LogLevel::kInfo)
      .value("DEBUG", LogLevel::kDebug);
  mod.def("set_log_level", &set_log_level);

  py::class_<Trajectory>(mod, "Trajectory")
      .def(py::init([](Eigen::MatrixXd states, Eigen::MatrixXd inputs, double dt) {
             Trajectory t{std::move(states), std::move(inputs), dt};
             t.validate();
             return t;
           }),
           py::arg("states"), py::arg("inputs"), py::arg("dt"))
      .def_readonly("states", &Trajectory::states)
      .def_readonly("inputs", &Trajectory::inputs)
      .def_readonly("dt", &Trajectory::dt)
      .def("__len__", &Trajectory::size);

  py::class_<Scaler>(mod, "Scaler")
      .def_readonly("state_mean", &Scaler::state_mean)
      .def_readonly("state_std", &Scaler::state_std)
      .def_readonly("input_mean", &Scaler::input_mean)
      .def_readonly("input_std", &Scaler::input_std);

  py::class_<ProcessParams>(mod, "ProcessParams").def(py::init<>());
  using Fractions = RecycleFractions<double>;
  py::class_<Fractions>(mod, "RecycleFractions")
      .def_readonly("xA", &Fractions::xA)
      .def_readonly("xB", &Fractions::xB)
      .def_readonly("xC", &Fractions::xC);
  mod.def("recycle_fractions", &recycle_fractions<double>, py::arg("xA3"), py::arg("xB3"),
          py::arg("params") = ProcessParams{});

  py::class_<KoopmanModel>(mod, "KoopmanModel")
      .def_readonly("n_x", &KoopmanModel::n_x)
      .def_readonly("n_u", &KoopmanModel::n_u)
      .def_readonly("n_l", &KoopmanModel::n_l)
      .def_property_readonly("n_g", &KoopmanModel::n_g)
      .def_readonly("measured", &KoopmanModel::measured)
      .def_readonly("A", &KoopmanModel::A)
      .def_readonly("B", &KoopmanModel::B)
      .def_readonly("C", &KoopmanModel::C)
      .def_readonly("D", &KoopmanModel::D)
      .def_readonly("scaler", &KoopmanModel::scaler)
      .def_readonly("metadata", &KoopmanModel::metadata);
  py::class_<ModelShape>(mod, "ModelShape")
      .def(py::init<>())
      .def_readwrite("n_x", &ModelShape::n_x)
      .def_readwrite("n_u", &ModelShape::n_u)
      .def_readwrite("n_l", &ModelShape::n_l)
      .def_readwrite("measured", &ModelShape::measured)
      .def_readwrite("lifting_hidden", &ModelShape::lifting_hidden)
      .def_readwrite("noise_hidden", &ModelShape::noise_hidden);
  mod.def("make_model", &make_model, py::arg("shape"), py::arg("scaler"), py::arg("seed"),
          "Untrained model: random networks, A = I, B = 0.");
  mod.def("load_model", &load_model, py::arg("path"));
  mod.def("save_model", &save_model, py::arg("model"), py::arg("path"));
  mod.def("export_readable", &export_readable, py::arg("model"));
  mod.def("lift", &lift, py::arg("model"), py::arg("x"), py::arg("already_scaled") = false);
  mod.def("reconstruct", &reconstruct_unscaled, py::arg("model"), py::arg("z"));
  mod.def("reconstruct_scaled", &reconstruct_scaled, py::arg("model"), py::arg("z"));
  mod.def("noise_std", [](const KoopmanModel& m, const Eigen::VectorXd& z) { return noise_std(m, z); },
          py::arg("model"), py::arg("z"));

  py::class_<ExperimentConfig>(mod, "ExperimentConfig")
      .def_static("load", &ExperimentConfig::load, py::arg("path"))
      .def_readonly("seeds", &ExperimentConfig::seeds)
      .def_readonly("test_samples", &ExperimentConfig::test_samples)
      .def_readonly("predict_horizon", &ExperimentConfig::predict_horizon)
      .def_readonly("estimate_samples", &ExperimentConfig::estimate_samples)
      .def_readonly("measurement_std", &ExperimentConfig::measurement_std)
      .def("hash", &ExperimentConfig::hash)
      .def("set_seeds", &ExperimentConfig::set_seeds, py::arg("seeds"));

  py::class_<SimulatedData>(mod, "SimulatedData")
      .def_readonly("runs", &SimulatedData::runs)
      .def_readonly("test", &SimulatedData::test)
      .def_readonly("scaler", &SimulatedData::scaler)
      .def_property_readonly("train", [](const SimulatedData& d) { return d.dataset.train; })
      .def_property_readonly("validation", [](const SimulatedData& d) { return d.dataset.validation; });
  mod.def("simulate_data", &simulate_data, py::arg("config"), py::arg("seed"));

  py::class_<PredictionReport>(mod, "PredictionReport")
      .def_readonly("mse", &PredictionReport::mse)
      .def_readonly("per_state_mse", &PredictionReport::per_state_mse)
      .def_readonly("per_step_mse", &PredictionReport::per_step_mse)
      .def_readonly("windows", &PredictionReport::windows);
  mod.def(
      "evaluate_prediction",
      [](const KoopmanModel& m, const std::vector<Trajectory>& runs, int horizon) {
        std::vector<Trajectory> scaled;
        for (const auto& r : runs) scaled.push_back(m.scaler.scale(r));
        return evaluate_prediction(m, scaled, horizon);
      },
      py::arg("model"), py::arg("runs"), py::arg("horizon"), "Runs are in physical units.");

  py::enum_<MheDesign>(mod, "MheDesign")
      .value("SELF_TUNING", MheDesign::kSelfTuning)
      .value("CONSTANT_WEIGHTS", MheDesign::kConstantWeights)
      .value("BASELINE_CONSTANT", MheDesign::kBaselineConstant);

  py::class_<MheConfig>(mod, "MheConfig")
      .def(py::init<>())
      .def_readwrite("horizon", &MheConfig::horizon)
      .def_readwrite("tolerance", &MheConfig::tolerance)
      .def_readwrite("max_iterations", &MheConfig::max_iterations)
      .def_readwrite("r_floor", &MheConfig::r_floor)
      .def_readwrite("sigma_min", &MheConfig::sigma_min)
      .def_readwrite("normalize_q", &MheConfig::normalize_q)
      .def_readwrite("self_tuning", &MheConfig::self_tuning)
      .def_readwrite("constant_q", &MheConfig::constant_q)
      .def_readwrite("max_term", &MheConfig::max_term)
      .def_readwrite("initial_guess_factor", &MheConfig::initial_guess_factor)
      .def_readwrite("lower", &MheConfig::lower)
      .def_readwrite("upper", &MheConfig::upper)
      .def_readwrite("box_margin", &MheConfig::box_margin)
      .def_readwrite("warm_start", &MheConfig::warm_start);
  mod.def("resolve_mhe_config", &resolve_mhe_config, py::arg("config"), py::arg("model"), py::arg("design"));

  py::class_<SolverInfo>(mod, "SolverInfo")
      .def_readonly("iterations", &SolverInfo::iterations)
      .def_readonly("kkt_residual", &SolverInfo::kkt_residual)
      .def_readonly("converged", &SolverInfo::converged);

  py::class_<MheWeights>(mod, "MheWeights")
      .def_readonly("q", &MheWeights::q)
      .def_readonly("R", &MheWeights::R)
      .def_readonly("clamped", &MheWeights::clamped);

  py::class_<MheModel>(mod, "MheModel")
      .def(py::init([](Eigen::MatrixXd a, Eigen::MatrixXd b, Eigen::MatrixXd d, int n_x) {
             MheModel m{std::move(a), std::move(b), std::move(d), n_x};
             m.validate();
             return m;
           }),
           py::arg("A"), py::arg("B"), py::arg("D"), py::arg("n_x"))
      .def_static("from_model", &MheModel::from, py::arg("model"))
      .def_readonly("A", &MheModel::A)
      .def_readonly("B", &MheModel::B)
      .def_readonly("D", &MheModel::D)
      .def_readonly("n_x", &MheModel::n_x);
  mod.def("constant_weights", &constant_weights, py::arg("model"), py::arg("q"), py::arg("r_floor") = 1e-8);

  py::class_<MheProblem>(mod, "MheProblem")
      .def(py::init([](Eigen::VectorXd prior, Eigen::MatrixXd y, Eigen::MatrixXd u, MheWeights w,
                       Eigen::VectorXd lower, Eigen::VectorXd upper, bool max_term) {
             return MheProblem{std::move(prior), std::move(y), std::move(u), std::move(w),
                               std::move(lower), std::move(upper), max_term};
           }),
           py::arg("prior"), py::arg("y"), py::arg("u"), py::arg("weights"), py::arg("lower"), py::arg("upper"),
           py::arg("max_term") = true);

  py::class_<MheSolution>(mod, "MheSolution")
      .def_readonly("z", &MheSolution::z)
      .def_readonly("mu", &MheSolution::mu)
      .def_readonly("v", &MheSolution::v)
      .def_readonly("stage", &MheSolution::stage)
      .def_readonly("objective", &MheSolution::objective)
      .def_readonly("t_star", &MheSolution::t_star)
      .def_readonly("info", &MheSolution::info);
  mod.def(
      "solve_mhe",
      [](const MheModel& m, const MheProblem& p, double tolerance, int max_iterations) {
        SolverOptions o;
        o.tolerance = tolerance;
        o.max_iterations = max_iterations;
        return solve_mhe(m, p, o);
      },
      py::arg("model"), py::arg("problem"), py::arg("tolerance") = 1e-8, py::arg("max_iterations") = 200);

  py::class_<EstimateRecord>(mod, "EstimateRecord")
      .def_readonly("k", &EstimateRecord::k)
      .def_readonly("xhat", &EstimateRecord::xhat)
      .def_readonly("objective", &EstimateRecord::objective)
      .def_readonly("t_star", &EstimateRecord::t_star)
      .def_readonly("info", &EstimateRecord::info)
      .def_readonly("clamped", &EstimateRecord::clamped);

  py::class_<EstimationRun>(mod, "EstimationRun")
      .def_readonly("records", &EstimationRun::records)
      .def_readonly("truth", &EstimationRun::truth)
      .def_readonly("mse", &EstimationRun::mse)
      .def_property_readonly("estimates", [](const EstimationRun& r) {
        Eigen::MatrixXd x(r.truth.rows(), static_cast<Eigen::Index>(r.records.size()));
        for (std::size_t i = 0; i < r.records.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = r.records[i].xhat;
        return x;
      });
  mod.def("run_estimator", &run_estimator, py::arg("model"), py::arg("truth"), py::arg("measurements"),
          py::arg("config"), "Measurements are n_y x N in physical units.");
  mod.def("measure", &measure, py::arg("truth"), py::arg("measured"), py::arg("std_dev"), py::arg("seed"));
}
