#include <sstream>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mfg/harness.hpp"
#include "mfg/parallel.hpp"

namespace py = pybind11;
using namespace mfg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// Rows are points; a 1-D array is a cloud on the line.
EmpiricalMeasure to_measure(const Array& a) {
  const py::buffer_info info = a.request();
  if (info.ndim != 1 && info.ndim != 2) throw ValidationError("points must be a 1-D or 2-D array");
  const std::size_t rows = static_cast<std::size_t>(info.shape[0]);
  const int dim = info.ndim == 1 ? 1 : static_cast<int>(info.shape[1]);
  if (dim < 1 || dim > kMaxDim) throw ValidationError("points must have 1 to 3 columns");
  const double* data = static_cast<const double*>(info.ptr);
  std::vector<Vec> pts(rows, Vec(dim));
  for (std::size_t i = 0; i < rows; ++i)
    for (int k = 0; k < dim; ++k) pts[i](k) = data[i * dim + k];
  return EmpiricalMeasure::uniform(std::move(pts));
}

Array to_array(const EmpiricalMeasure& m) {
  Array out({m.size(), static_cast<std::size_t>(m.dim())});
  auto r = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < m.size(); ++i)
    for (int k = 0; k < m.dim(); ++k) r(i, k) = m.point(i)(k);
  return out;
}

Vec to_vec(const std::vector<double>& x) {
  if (x.empty() || x.size() > static_cast<std::size_t>(kMaxDim))
    throw ValidationError("state must have 1 to 3 coordinates");
  Vec v(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) v(static_cast<Eigen::Index>(i)) = x[i];
  return v;
}

std::vector<double> to_list(const Vec& v) { return {v.data(), v.data() + v.size()}; }

py::dict convergence_dict(const ConvergenceReport& r) {
  py::list rows;
  for (const ConvergenceRow& row : r.rows) {
    py::dict d;
    d["n"] = row.n;
    d["epsilon"] = row.epsilon;
    d["sup_w2"] = row.sup_w2;
    d["value_error"] = row.value_error;
    d["coupled_distance"] = row.coupled_distance;
    d["c5_fit"] = row.c5_fit;
    d["c6_fit"] = row.c6_fit;
    d["moment_max"] = row.moment_max;
    d["c1_ok"] = row.c1_ok;
    d["c3_ok"] = row.c3_ok;
    d["iterations"] = row.iterations;
    d["converged"] = row.converged;
    d["final_increment"] = row.final_increment;
    d["seconds"] = row.seconds;
    rows.append(d);
  }
  py::dict floor;
  floor["sup_w2"] = r.floor.sup_w2;
  floor["value_error"] = r.floor.value_error;
  floor["seed_w2"] = r.floor.seed_w2;
  floor["seed_value"] = r.floor.seed_value;
  py::dict out;
  out["rows"] = rows;
  out["floor"] = floor;
  out["c1"] = r.constants.c1;
  out["c3"] = r.constants.c3;
  out["c5"] = r.constants.c5;
  out["fitted_c6"] = r.fitted_c6;
  out["minimax_iterations"] = r.minimax_iterations;
  out["minimax_converged"] = r.minimax_converged;
  return out;
}

py::dict verify_solution(const Scenario& sc, const EquilibriumSolution& sol, double n,
                         std::optional<double> tol) {
  const double t = tol ? *tol : 3.0 * (sol.config.grid.h + sol.config.dt);
  py::dict d;
  d["tolerance"] = t;
  if (sol.chi) {
    MinimaxReport r;
    {
      py::gil_scoped_release release;
      r = verify_minimax(sol, sc.limit_spec(), t);
    }
    d["kind"] = "minimax";
    d["initial_w2"] = r.initial_w2;
    d["pushforward_w2"] = r.pushforward_w2;
    d["max_path_gap"] = r.max_path_gap;
    d["initial_ok"] = r.initial_ok;
    d["pushforward_ok"] = r.pushforward_ok;
    d["path_ok"] = r.path_ok;
    d["passed"] = r.passed();
    return d;
  }
  ProbabilisticReport r;
  {
    py::gil_scoped_release release;
    ProbabilisticCheckConfig cfg = default_check_config(sc, sol);
    cfg.tol = t;
    const auto policies = policy_dictionary(sc.controls, sol.flow.time_grid(), 50, sol.config.seed);
    r = verify_probabilistic(sol, sc.member_spec(n), policies, cfg);
  }
  d["kind"] = "stochastic";
  d["n"] = n;
  d["achieved_gap"] = r.achieved_gap;
  d["flow_w2"] = r.flow_w2;
  d["deviation_max_gap"] = r.deviation.max_gap;
  d["achieved_ok"] = r.achieved_ok;
  d["flow_ok"] = r.flow_ok;
  d["deviation_ok"] = r.deviation_ok;
  d["passed"] = r.passed();
  return d;
}

}  // namespace

PYBIND11_MODULE(_mfglab, m) {
  m.doc() = "Mean field games with vanishing noise: solvers and convergence harness";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<Scenario>(m, "Scenario")
      .def_static("from_json", &parse_scenario, py::arg("text"))
      .def_static("load", &load_scenario, py::arg("path"))
      .def_static("reference", &reference_scenario)
      .def_readonly("name", &Scenario::name)
      .def_readonly("dim", &Scenario::dim)
      .def_readonly("horizon", &Scenario::horizon)
      .def_readonly("n_list", &Scenario::n_list)
      .def_property_readonly("initial", [](const Scenario& s) { return to_array(s.initial); })
      .def_property_readonly("box_half_width", &Scenario::box_half_width)
      .def("epsilon", &member_epsilon, py::arg("n"))
      .def(
          "with_numerics",
          [](const Scenario& s, std::optional<std::size_t> particles, std::optional<double> dt,
             std::optional<double> grid_h, std::optional<std::uint64_t> seed,
             std::optional<std::vector<double>> n_list) {
            Scenario out = s;
            if (particles) out.numerics.particles = *particles;
            if (dt) out.numerics.dt = *dt;
            if (grid_h) out.numerics.grid_h = *grid_h;
            if (seed) out.numerics.seed = *seed;
            if (n_list) out.n_list = *n_list;
            out.validate();
            return out;
          },
          py::arg("particles") = py::none(), py::arg("dt") = py::none(), py::arg("grid_h") = py::none(),
          py::arg("seed") = py::none(), py::arg("n_list") = py::none(),
          "Copy with some numerical settings replaced.");

  py::class_<EquilibriumSolution>(m, "Solution")
      .def_property_readonly("converged", [](const EquilibriumSolution& s) { return s.diagnostics.converged; })
      .def_property_readonly("increments",
                             [](const EquilibriumSolution& s) {
                               std::vector<double> out;
                               for (const auto& r : s.diagnostics.history) out.push_back(r.increment);
                               return out;
                             })
      .def_property_readonly("times",
                             [](const EquilibriumSolution& s) {
                               const auto nodes = s.flow.time_grid().nodes();
                               return std::vector<double>(nodes.begin(), nodes.end());
                             })
      .def_property_readonly("is_minimax", [](const EquilibriumSolution& s) { return s.chi.has_value(); })
      .def("flow_at", [](const EquilibriumSolution& s, double t) { return to_array(s.flow.at(t)); },
           py::arg("t"), "Particles of the flow at the node nearest to t.")
      .def("flow_mean",
           [](const EquilibriumSolution& s) {
             std::vector<std::vector<double>> out;
             for (const auto& mu : s.flow.measures()) out.push_back(to_list(mu.mean()));
             return out;
           })
      .def("flow_second_moment",
           [](const EquilibriumSolution& s) {
             std::vector<double> out;
             for (const auto& mu : s.flow.measures()) out.push_back(mu.second_moment());
             return out;
           })
      .def("value",
           [](const EquilibriumSolution& s, double t, const std::vector<double>& x) {
             return evaluate(s.value, t, to_vec(x));
           },
           py::arg("t"), py::arg("x"))
      .def("save", [](const EquilibriumSolution& s, const std::filesystem::path& dir) { write_solution(dir, s); },
           py::arg("dir"))
      .def_static("load", &read_solution, py::arg("dir"));

  m.def("wasserstein2",
        [](const Array& a, const Array& b) { return wasserstein2(to_measure(a), to_measure(b)); },
        py::arg("a"), py::arg("b"), "W2 between two uniformly weighted clouds (rows are points).");
  m.def("second_moment", [](const Array& a) { return second_moment(to_measure(a)); }, py::arg("a"));

  m.def(
      "solve_minimax",
      [](const Scenario& sc) {
        py::gil_scoped_release release;
        return solve_minimax_mfg(sc.limit_spec(), sc.initial, sc.iteration_config(sc.numerics.seed));
      },
      py::arg("scenario"), "Deterministic limit game.");
  m.def(
      "solve_stochastic",
      [](const Scenario& sc, double n) {
        py::gil_scoped_release release;
        EquilibriumSolution sol =
            solve_stochastic_mfg(sc.member_spec(n), sc.member_initial(n), sc.iteration_config(sc.member_seed(n)));
        sol.diagnostics.checks["n"] = n;
        return sol;
      },
      py::arg("scenario"), py::arg("n"), "Member n of the stochastic family.");
  m.def(
      "verify",
      [](const Scenario& sc, const EquilibriumSolution& sol, std::optional<double> tol) {
        const auto it = sol.diagnostics.checks.find("n");
        const double n = it != sol.diagnostics.checks.end() ? it->second : sc.n_list.front();
        return verify_solution(sc, sol, n, tol);
      },
      py::arg("scenario"), py::arg("solution"), py::arg("tol") = py::none());
  m.def(
      "run_convergence_study",
      [](const Scenario& sc, std::optional<std::filesystem::path> out_dir) {
        StudyOptions opt;
        if (out_dir) opt.out_dir = *out_dir;
        ConvergenceReport r;
        {
          py::gil_scoped_release release;
          r = run_convergence_study(sc, opt);
        }
        return convergence_dict(r);
      },
      py::arg("scenario"), py::arg("out_dir") = py::none());
  m.def(
      "audit_bounds",
      [](const Scenario& sc, double n) {
        BoundsAudit a;
        {
          py::gil_scoped_release release;
          a = run_bounds_audit(sc, n);
        }
        py::dict d;
        d["n"] = a.n;
        d["epsilon"] = a.epsilon;
        d["m0"] = a.m0;
        d["c1"] = a.constants.c1;
        d["c3"] = a.constants.c3;
        d["c5"] = a.constants.c5;
        d["moment_max"] = a.moment_max;
        d["admissible_ratio"] = a.admissible_ratio;
        d["coupled_distance"] = a.coupled_distance;
        d["c5_fit"] = a.c5_fit;
        d["c6_fit"] = a.c6_fit;
        d["c1_ok"] = a.c1_ok;
        d["c3_ok"] = a.c3_ok;
        d["c5_ok"] = a.c5_ok;
        d["converged"] = a.converged;
        return d;
      },
      py::arg("scenario"), py::arg("n"));
  m.def(
      "bound_constants",
      [](double m0, double mm, double k, double horizon) {
        const BoundConstants c = bound_constants(m0, mm, k, horizon);
        return py::make_tuple(c.c1, c.c3, c.c5);
      },
      py::arg("m0"), py::arg("m"), py::arg("k"), py::arg("horizon"), "(C1, C3, C5).");
  m.def("set_threads", &set_thread_count, py::arg("n"));
  m.def("threads", &thread_count);
  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"mfglab"};
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cli_dispatch(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command line with these arguments; returns the exit code.");
}
