#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mfg/harness.hpp"

using namespace mfg;

namespace {

std::string tiny_json() {
  auto j = nlohmann::json::parse(reference_scenario_json());
  j["name"] = "tiny";
  j["controls"]["points"] = {11};
  j["initial"]["uniform_cloud"]["points"] = {41};
  j["n_list"] = {1, 4};
  j["numerics"]["particles"] = 300;
  j["numerics"]["dt"] = 0.05;
  j["numerics"]["grid_h"] = 0.05;
  j["numerics"]["tol"] = 5e-3;
  return j.dump();
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mfglab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_dispatch(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("reference scenario") {
  const Scenario sc = reference_scenario();
  CHECK(sc.dim == 1);
  CHECK(sc.controls.size() == 21);
  CHECK(sc.initial.size() == 201);
  CHECK(sc.n_list == std::vector<double>{1, 2, 4, 8, 16, 32});
  const auto spec = sc.limit_spec();
  CHECK(spec.is_deterministic());
  const auto m = EmpiricalMeasure::uniform({make_vec({-1.0}), make_vec({3.0})});
  const Vec x = make_vec({2.0}), u = make_vec({0.5});
  CHECK(spec.drift(0.0, x, m, u)(0) == doctest::Approx(0.5));
  CHECK(spec.running_payoff(0.0, x, m, u) == doctest::Approx(-0.125 - 0.5 * 1.0));
  CHECK(spec.terminal_payoff(x, m) == doctest::Approx(-1.0));
  const auto member = sc.member_spec(4.0);
  CHECK(member.diffusion_at(0.0, x, m, u)(0, 0) == doctest::Approx(0.25));
  CHECK(sc.member_spec(INFINITY).is_deterministic());
  CHECK(sc.box_half_width() == doctest::Approx(8.42).epsilon(0.01));
  CHECK(sc.member_seed(1) != sc.member_seed(2));
}

TEST_CASE("scenario parsing rejects malformed input") {
  CHECK_THROWS_AS(parse_scenario("{"), ValidationError);
  auto j = nlohmann::json::parse(reference_scenario_json());
  j["numerics"]["partikles"] = 3;
  CHECK_THROWS_AS(parse_scenario(j.dump()), ValidationError);
  j = nlohmann::json::parse(reference_scenario_json());
  j["n_list"] = {4, 2};
  CHECK_THROWS_AS(parse_scenario(j.dump()), ValidationError);
  j = nlohmann::json::parse(reference_scenario_json());
  j["numerics"]["damping"] = 0.0;
  CHECK_THROWS_AS(parse_scenario(j.dump()), ValidationError);
  CHECK_THROWS_AS(load_scenario("/nonexistent/s.json"), ValidationError);
}

TEST_CASE("jump family and shifted initial measures") {
  auto j = nlohmann::json::parse(reference_scenario_json());
  j["family"] = {{"jumps", {{{"rate", 2.0}, {"rate_power", 1.0}, {"displacement", {0.5}}, {"size_power", -1.0}}}},
                 {"initial_shift", {{"scale", 0.3}, {"power", 1.0}}}};
  const Scenario sc = parse_scenario(j.dump());
  const auto spec = sc.member_spec(4.0);
  REQUIRE(spec.jumps.size() == 1);
  const auto atom = spec.jumps[0](0.0, make_vec({0.0}), sc.initial, make_vec({0.0}));
  CHECK(atom.rate == doctest::Approx(8.0));
  CHECK(atom.displacement(0) == doctest::Approx(0.125));
  CHECK(sc.member_initial(4.0).mean()(0) == doctest::Approx(sc.initial.mean()(0) + 0.075));
  // noise ratio 8 * 0.125^2 = 0.125 at the origin, plus W2^2 of the shift
  CHECK(member_epsilon(sc, 4.0) == doctest::Approx(0.125));
}

TEST_CASE("epsilon of the reference family is 1/n") {
  const Scenario sc = reference_scenario();
  for (double n : sc.n_list) CHECK(member_epsilon(sc, n) == doctest::Approx(1.0 / n));
}

TEST_CASE("bound constants") {
  const auto c = bound_constants(0.5, 1.0, 1.0, 0.2);
  CHECK(c.c1 == doctest::Approx(0.9 * std::exp(1.4)));
  CHECK(c.c3 == doctest::Approx(0.4 * (1.0 + c.c1) * std::exp(1.0)));
  const double c8 = (1.0 + 2.0 * c.c1) + (0.5 + c.c1);
  CHECK(c.c5 == doctest::Approx(std::exp(2.0) * c8 * 0.2 * std::exp(std::exp(2.0) * 0.2)));
  // the double exponential overflows at T = 1 with K = 1
  CHECK(std::isinf(bound_constants(0.5, 1.0, 1.0, 1.0).c5));
}

TEST_CASE("coupling of a noise-free ensemble with itself") {
  const Scenario sc = parse_scenario(tiny_json());
  const auto limit = sc.limit_spec();
  const auto grid = TimeGrid::uniform(1.0, 20);
  SimulationConfig sim;
  sim.particles = 50;
  sim.dt = 0.05;
  sim.seed = 2;
  const auto y = simulate_interacting(limit, ControlPolicy::constant(3), grid, sc.initial, sim);
  const auto x = coupled_process(limit, y, grid);
  const auto st = coupling_stats(y, x);
  CHECK(st.coupled_distance < 1e-20);
  CHECK(st.law_distance_sq < 1e-20);
}

TEST_CASE("policy dictionary") {
  const auto grid = TimeGrid::uniform(1.0, 20);
  const auto controls = reference_scenario().controls;
  const auto d = policy_dictionary(controls, grid, 50, 7);
  CHECK(d.size() == 50);
  const auto m = EmpiricalMeasure::dirac(make_vec({0.0}));
  CHECK(d[0](0.3, make_vec({0.0}), m) == 0);
  CHECK(d[20](0.3, make_vec({0.0}), m) == 20);
  for (const auto& p : d)
    for (double t : {0.0, 0.5, 0.99}) CHECK(p(t, make_vec({0.0}), m) < controls.size());
}

TEST_CASE("weighted value error") {
  const auto spec = reference_scenario().limit_spec();
  const auto mu = FlowOfProbabilities::constant(TimeGrid::uniform(1.0, 4), EmpiricalMeasure::dirac(make_vec({0.0})));
  GridConfig g;
  g.half_width = 2.0;
  g.h = 0.1;
  const auto a = solve_deterministic_value(spec, mu, g);
  auto b = a;
  CHECK(weighted_value_error(a, b) == 0.0);
  for (std::size_t j = 0; j < b.lattice().size(); ++j) b.values()[j] += 1.0 + b.lattice().node(j).squaredNorm();
  CHECK(weighted_value_error(a, b) == doctest::Approx(1.0));
}

TEST_CASE("convergence study on a tiny scenario") {
  const Scenario sc = parse_scenario(tiny_json());
  const auto dir = std::filesystem::temp_directory_path() / "mfglab_tiny_study";
  std::filesystem::remove_all(dir);
  StudyOptions opt;
  opt.out_dir = dir;
  const auto report = run_convergence_study(sc, opt);
  REQUIRE(report.rows.size() == 2);
  for (const auto& r : report.rows) {
    CHECK(std::isfinite(r.sup_w2));
    CHECK(std::isfinite(r.value_error));
    CHECK(r.c1_ok);
  }
  CHECK(report.rows[1].epsilon < report.rows[0].epsilon);
  CHECK(report.rows[1].sup_w2 < report.rows[0].sup_w2);
  CHECK(std::filesystem::exists(dir / "report.csv"));
  CHECK(std::filesystem::exists(dir / "floor.csv"));
  CHECK(std::filesystem::exists(dir / "n_4" / "value.txt"));
  const std::string csv = slurp(dir / "report.csv");
  CHECK(csv.rfind("n,epsilon,sup_w2,value_error,coupled_distance", 0) == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("command line") {
  const auto dir = std::filesystem::temp_directory_path() / "mfglab_cli";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto scenario = dir / "tiny.json";
  std::ofstream(scenario) << tiny_json();

  CHECK(run_cli({"solve-minimax", "--scenario", "/nonexistent/s.json", "--out", (dir / "x").string()}) == 1);
  CHECK(run_cli({"frobnicate"}) == 1);
  CHECK(run_cli({"converge"}) == 1);
  auto j = nlohmann::json::parse(tiny_json());
  j["numerics"]["grid_h"] = -1.0;
  std::ofstream(dir / "bad.json") << j.dump();
  CHECK(run_cli({"solve-mfg", "--scenario", (dir / "bad.json").string()}) == 1);

  CHECK(run_cli({"simulate", "--scenario", scenario.string(), "--out", (dir / "sim").string()}) == 0);
  CHECK(std::filesystem::exists(dir / "sim" / "ensemble.txt"));

  CHECK(run_cli({"solve-minimax", "--scenario", scenario.string(), "--out", (dir / "mm").string()}) == 0);
  CHECK(run_cli({"verify", "--solution", (dir / "mm").string()}) == 0);
  const auto verdict = nlohmann::json::parse(slurp(dir / "mm" / "verify.json"));
  CHECK(verdict.at("passed").get<bool>());

  CHECK(run_cli({"solve-mfg", "--scenario", scenario.string(), "--n", "4", "--particles", "200", "--out",
                 (dir / "st").string()}) == 0);
  CHECK(run_cli({"verify", "--solution", (dir / "st").string()}) == 0);
  CHECK(run_cli({"verify", "--solution", (dir / "nothing").string()}) == 1);
  std::filesystem::remove_all(dir);
}
