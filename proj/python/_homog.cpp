#include "homog/effective.hpp"
#include "homog/error.hpp"
#include "homog/fk.hpp"
#include "homog/parallel.hpp"
#include "homog/pipeline.hpp"
#include "homog/problem_json.hpp"
#include "homog/sde.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace homog;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::array_t<double> matrix(const Eigen::MatrixXd& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  auto v = out.mutable_unchecked<2>();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v(r, c) = m(r, c);
  return out;
}

py::dict effective(const ProblemSpec& spec, std::vector<int> cells, const std::string& scheme) {
  if (cells.empty()) cells.assign(spec.d, spec.d == 1 ? 256 : spec.d == 2 ? 48 : 16);
  if (cells.size() == 1) cells.assign(spec.d, cells[0]);
  TorusGrid grid(cells, spec.tau, spec.n);
  GeneratorOptions go;
  go.scheme = drift_scheme_from_string(scheme);
  auto G = discretize_generator(spec, grid, 0.0, go);
  auto pi = stationary_measure(G);
  auto corr = solve_corrector(G, spec, pi);
  auto ec = effective_coefficients(pi, corr, spec);
  py::dict d;
  d["a"] = matrix(ec.a);
  d["b"] = std::vector<double>(ec.b.data(), ec.b.data() + ec.b.size());
  d["e_bar"] = ec.e_bar;
  d["a_switching"] = matrix(ec.a_switching);
  d["pi0_b"] = ec.pi_b;
  d["min_eigenvalue"] = ec.min_eigenvalue;
  d["stationary_residual"] = pi.residual;
  return d;
}

}  // namespace

PYBIND11_MODULE(_homog, m) {
  m.doc() = "Homogenization of regime-switching diffusions";
  m.attr("__version__") = tool_version();

  py::register_exception<SpecError>(m, "SpecError", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);
  py::register_exception<BudgetError>(m, "BudgetError", PyExc_RuntimeError);

  py::class_<ProblemSpec>(m, "Problem")
      .def_readonly("name", &ProblemSpec::name)
      .def_readonly("d", &ProblemSpec::d)
      .def_readonly("m", &ProblemSpec::m)
      .def_readonly("n", &ProblemSpec::n)
      .def_property_readonly("elliptic", &ProblemSpec::is_elliptic)
      .def_property_readonly("parabolic", &ProblemSpec::is_parabolic)
      .def("__repr__", [](const ProblemSpec& s) {
        return "<Problem '" + s.name + "' d=" + std::to_string(s.d) + " n=" + std::to_string(s.n) + ">";
      });

  m.def("load_problem", [](const std::filesystem::path& p) { return load_problem(p); }, py::arg("path"));
  m.def("problem_from_dict", [](const py::object& o) { return problem_from_json(from_py(o)); }, py::arg("doc"));

  m.def(
      "validate",
      [](const ProblemSpec& spec, std::size_t samples, std::uint64_t seed) {
        ValidationOptions o;
        o.samples = samples;
        o.seed = seed;
        return to_py(to_json(validate_spec(spec, o)));
      },
      py::arg("problem"), py::arg("samples") = 10000, py::arg("seed") = 0);

  m.def("effective", &effective, py::arg("problem"), py::arg("cells") = std::vector<int>{},
        py::arg("scheme") = "exponential-fitted",
        "Effective covariance, drift, killing rate and the switching diagnostic.");

  m.def(
      "terminal_values",
      [](const ProblemSpec& spec, double eps, std::vector<double> x0, int i0, double horizon, double dt,
         std::size_t n_paths, std::uint64_t seed) {
        PathOptions po;
        po.record_all = false;
        std::vector<double> v;
        {
          py::gil_scoped_release release;
          v = simulate_eps_paths(spec, eps, x0, i0, horizon, dt, n_paths, seed, po).terminal_values();
        }
        py::array_t<double> out({static_cast<py::ssize_t>(n_paths), static_cast<py::ssize_t>(spec.d)});
        std::copy(v.begin(), v.end(), out.mutable_data());
        return out;
      },
      py::arg("problem"), py::arg("eps"), py::arg("x0"), py::arg("i0"), py::arg("horizon"), py::arg("dt"),
      py::arg("n_paths"), py::arg("seed"), "X^eps at the horizon for each path, shape (n_paths, d).");

  m.def(
      "solve_elliptic",
      [](const ProblemSpec& spec, std::vector<double> x, int i, double eps, std::size_t n_paths, double dt,
         std::uint64_t seed) {
        FkOptions o;
        o.n_paths = n_paths;
        o.dt = dt;
        FkEstimate e;
        {
          py::gil_scoped_release release;
          e = solve_elliptic_eps(spec, x, i, eps, o, seed);
        }
        return to_py(to_json(e));
      },
      py::arg("problem"), py::arg("x"), py::arg("i"), py::arg("eps"), py::arg("n_paths") = 10000,
      py::arg("dt") = 1e-3, py::arg("seed") = 0);

  m.def(
      "run",
      [](const std::string& command, const std::filesystem::path& config, const std::filesystem::path& out,
         std::optional<std::uint64_t> seed) {
        auto cfg = load_run_config(config);
        if (seed) cfg.seed = seed;
        CommandResult r;
        {
          py::gil_scoped_release release;
          r = run_command(command, cfg, out);
        }
        py::dict d;
        d["exit_code"] = r.exit_code;
        d["stage"] = r.stage;
        d["message"] = r.message;
        d["files"] = r.files;
        return d;
      },
      py::arg("command"), py::arg("config"), py::arg("out"), py::arg("seed") = py::none(),
      "Runs one CLI subcommand; returns exit_code, stage, message and files.");

  m.def("set_threads", &set_thread_count, py::arg("threads"));
  m.def("sha256_file", [](const std::filesystem::path& p) { return sha256_file(p); }, py::arg("path"));
}
