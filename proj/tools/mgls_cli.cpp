// Command-line front end: scenario generation, open-loop and closed-loop
// experiments, and verification suites.
#include "mgls/mgls.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace mgls;

namespace {

struct SolverFlags {
  int lmax = 40;
  double eps = 1e-6;
  std::string lower_mode = "central";
  std::string parallel = "off";

  void attach(CLI::App* cmd)
  {
    cmd->add_option("--lmax", lmax, "maximum negotiation iterations")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--eps", eps, "descent stopping threshold on the overall cost")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--lower-mode", lower_mode, "lower-level solver")
        ->check(CLI::IsMember({"central", "distributed"}));
    cmd->add_option("--parallel", parallel, "parallelise independent subproblems")
        ->check(CLI::IsMember({"on", "off"}));
  }

  BidirConfig config() const
  {
    BidirConfig cfg;
    cfg.ell_max = lmax;
    cfg.epsilon = eps;
    cfg.lower_mode = lower_mode == "distributed" ? LowerMode::distributed : LowerMode::central;
    cfg.parallel = parallel == "on";
    return cfg;
  }
};

std::string scenario_digest(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(ss.str())));
  return buf;
}

Scenario make_example_scenario(int horizon)
{
  // four battery-less MGs on a lossless chain with constant demands
  // (-10, 0, 0, 10) against a zero reference
  Scenario sc;
  sc.name = "example1";
  sc.dt = 0.25;
  sc.horizon = horizon;
  sc.seed = 0;
  sc.reference_policy = "zero";
  const double demands[4] = {-10.0, 0.0, 0.0, 10.0};
  for (double w : demands) {
    sc.batteries.push_back({BatteryParams{}});
    sc.initial_soc.push_back({0.0});
    sc.actual.push_back({VectorXd::Constant(horizon + 1, w)});
    sc.predicted.push_back({VectorXd::Constant(horizon + 1, w)});
  }
  MatrixXd lambda = MatrixXd::Zero(4, 4), eta = MatrixXd::Zero(4, 4);
  for (int k = 0; k < 3; ++k) {
    lambda(k, k + 1) = lambda(k + 1, k) = 10.0;
    eta(k, k + 1) = eta(k + 1, k) = 1.0;
  }
  sc.topology = validate_topology(lambda, eta);
  return sc;
}

void write_iteration_table(const fs::path& path, const BidirResult& res)
{
  CsvTable table;
  table.names = {"iteration", "cost_before_exchange", "cost_after_exchange"};
  const int L = static_cast<int>(res.iterations.size());
  VectorXd idx(L + 1), before(L + 1), after(L + 1);
  idx(0) = 0;
  before(0) = res.J0;
  after(0) = res.J0;
  for (int l = 0; l < L; ++l) {
    idx(l + 1) = l + 1;
    before(l + 1) = res.iterations[l].J_before_exchange;
    after(l + 1) = res.iterations[l].J_after_exchange;
  }
  table.series = {idx, before, after};
  save_profiles_csv(path.string(), table);
}

void write_profiles(const fs::path& path, const Scenario& sc,
                    const std::vector<MicrogridModel>& mgs,
                    const std::vector<VectorXd>& zeta, const BidirResult& res,
                    const ExchangeGeometry& g)
{
  CsvTable table;
  MatrixXd net = g.num_components() > 0 ? MatrixXd(g.a * res.delta.delta)
                                        : MatrixXd::Zero(sc.num_mgs(), sc.horizon);
  for (int m = 0; m < sc.num_mgs(); ++m) {
    const std::string tag = "mg" + std::to_string(m + 1);
    table.names.push_back(tag + "_reference");
    table.series.push_back(zeta[m]);
    table.names.push_back(tag + "_before_batteries");
    table.series.push_back(mgs[m].b);
    table.names.push_back(tag + "_after_batteries");
    table.series.push_back(res.locals[m].z_bar);
    table.names.push_back(tag + "_after_exchange");
    table.series.push_back(VectorXd(res.locals[m].z_bar + net.row(m).transpose()));
  }
  save_profiles_csv(path.string(), table);
}

void print_summary(std::ostream& out, const std::string& digest, const std::string& mode,
                   const BidirResult& res, double seconds)
{
  out << "scenario digest: " << digest << "\n";
  out << "mode: " << mode << "\n";
  out << "baseline cost J0: " << res.J0 << "\n";
  out << "iterations: " << res.iterations.size()
      << (res.converged ? " (converged)" : " (iteration limit)") << "\n\n";
  out << "  l | before exchange | after exchange\n";
  out << "----+-----------------+---------------\n";
  char line[96];
  for (std::size_t l = 0; l < res.iterations.size(); ++l) {
    std::snprintf(line, sizeof(line), "%3zu | %15.6g | %14.6g\n", l + 1,
                  res.iterations[l].J_before_exchange,
                  res.iterations[l].J_after_exchange);
    out << line;
  }
  out << "\nfinal cost: " << res.final_cost << "\n";
  out << "elapsed: " << seconds << " s\n";
}

int cmd_generate(const std::string& kind, const std::vector<int>& households, int horizon,
                 std::uint64_t seed, int mgs, const std::string& out_dir)
{
  fs::create_directories(out_dir);
  Scenario sc;
  if (kind == "demo") {
    DemoOptions opt;
    if (!households.empty()) opt.households = households;
    opt.horizon = horizon;
    opt.seed = seed;
    sc = make_demo_scenario(opt);
  } else if (kind == "random") {
    RandomScenarioOptions opt;
    opt.num_mgs = mgs;
    opt.horizon = horizon;
    opt.households = households;
    opt.seed = seed;
    sc = make_random_scenario(opt);
  } else {  // example1
    sc = make_example_scenario(horizon);
  }
  const fs::path path = fs::path(out_dir) / (sc.name + ".json");
  save_scenario(sc, path.string());
  std::cout << "wrote " << path.string() << " (digest " << scenario_digest(path.string())
            << ")\n";
  return 0;
}

int cmd_openloop(const std::string& scenario_path, const SolverFlags& flags,
                 const std::string& out_dir)
{
  Scenario sc = load_scenario(scenario_path);
  ExchangeGeometry g = build_exchange_vectors(sc.topology);
  std::vector<MicrogridModel> mgs = models_at(sc, 0, sc.initial_soc);
  std::vector<VectorXd> zeta = reference_window(sc, 0);

  const auto t0 = std::chrono::steady_clock::now();
  BidirResult res = run_bidirectional(mgs, g, zeta, flags.config());
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(out_dir);
  write_iteration_table(fs::path(out_dir) / "iterations.csv", res);
  write_profiles(fs::path(out_dir) / "profiles.csv", sc, mgs, zeta, res, g);

  std::ofstream summary(fs::path(out_dir) / "summary.txt");
  print_summary(summary, scenario_digest(scenario_path), "open-loop", res, elapsed);
  print_summary(std::cout, scenario_digest(scenario_path), "open-loop", res, elapsed);

  // descent invariant as an output contract
  double prev = res.J0;
  for (const auto& rec : res.iterations) {
    if (rec.J_after_exchange > prev * (1.0 + 1e-9) + 1e-9) {
      std::cerr << "error: descent invariant violated in the logged trace\n";
      return 1;
    }
    prev = rec.J_after_exchange;
  }
  return 0;
}

int cmd_closedloop(const std::string& scenario_path, int steps, const SolverFlags& flags,
                   const std::string& out_dir)
{
  Scenario sc = load_scenario(scenario_path);
  MpcConfig cfg;
  cfg.bidir = flags.config();

  const auto t0 = std::chrono::steady_clock::now();
  ClosedLoopResult res = run_mpc(sc, steps, cfg);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(out_dir);
  CsvTable table;
  const int M = sc.num_mgs();
  const int K = static_cast<int>(res.steps.size());
  table.names = {"step", "stage_cost", "inner_iterations", "feasible"};
  VectorXd step(K), cost(K), iters(K), feas(K);
  std::vector<VectorXd> realized(M, VectorXd(K));
  for (int k = 0; k < K; ++k) {
    step(k) = k;
    cost(k) = res.steps[k].stage_cost;
    iters(k) = res.steps[k].inner_iterations;
    feas(k) = res.steps[k].feasible ? 1.0 : 0.0;
    for (int m = 0; m < M; ++m) realized[m](k) = res.steps[k].realized_demand(m);
  }
  table.series = {step, cost, iters, feas};
  for (int m = 0; m < M; ++m) {
    table.names.push_back("mg" + std::to_string(m + 1) + "_realized");
    table.series.push_back(realized[m]);
  }
  save_profiles_csv((fs::path(out_dir) / "closedloop.csv").string(), table);
  write_iteration_table(fs::path(out_dir) / "iterations.csv", res.first_solve);

  bool all_feasible = true;
  double total_cost = 0.0;
  for (const auto& s : res.steps) {
    all_feasible = all_feasible && s.feasible;
    total_cost += s.stage_cost;
  }

  std::ofstream summary(fs::path(out_dir) / "summary.txt");
  for (std::ostream* out : {static_cast<std::ostream*>(&summary), &std::cout}) {
    *out << "scenario digest: " << scenario_digest(scenario_path) << "\n";
    *out << "mode: closed-loop\n";
    *out << "steps: " << K << "\n";
    *out << "total stage cost: " << total_cost << "\n";
    *out << "all steps feasible: " << (all_feasible ? "yes" : "no") << "\n";
    *out << "elapsed: " << elapsed << " s\n";
  }
  if (!all_feasible) {
    std::cerr << "error: recursive feasibility lost\n";
    return 1;
  }
  return 0;
}

bool verify_example1()
{
  Scenario sc = make_example_scenario(2);
  ExchangeGeometry g = build_exchange_vectors(sc.topology);
  std::vector<MicrogridModel> mgs = models_at(sc, 0, sc.initial_soc);
  std::vector<VectorXd> zeta = reference_window(sc, 0);
  BidirResult res = run_bidirectional(mgs, g, zeta, {});
  return res.final_cost <= 1e-6;
}

bool verify_descent()
{
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    RandomScenarioOptions opt;
    opt.num_mgs = 2 + static_cast<int>(seed % 3);
    opt.horizon = 2 + static_cast<int>(seed % 4);
    opt.seed = seed;
    Scenario sc = make_random_scenario(opt);
    ExchangeGeometry g = build_exchange_vectors(sc.topology);
    std::vector<MicrogridModel> mgs = models_at(sc, 0, sc.initial_soc);
    std::vector<VectorXd> zeta = reference_window(sc, 0);
    BidirResult res = run_bidirectional(mgs, g, zeta, {});
    double prev = res.J0;
    for (const auto& rec : res.iterations) {
      if (rec.J_before_exchange > prev * (1.0 + 1e-9) + 1e-9) return false;
      if (rec.J_after_exchange > rec.J_before_exchange * (1.0 + 1e-9) + 1e-9) return false;
      prev = rec.J_after_exchange;
    }
  }
  return true;
}

bool verify_qp()
{
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const int n = 2 + static_cast<int>(seed % 2);
    MatrixXd R(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) R(i, j) = rng.normal(0.0, 1.0);
    qp::Problem p;
    p.P = R.transpose() * R + 0.5 * MatrixXd::Identity(n, n);
    p.q = VectorXd(n);
    for (int i = 0; i < n; ++i) p.q(i) = rng.normal(0.0, 2.0);
    p.G = MatrixXd::Zero(2 * n, n);
    p.h = VectorXd::Zero(2 * n);
    p.G.topRows(n) = MatrixXd::Identity(n, n);
    p.G.bottomRows(n) = -MatrixXd::Identity(n, n);
    p.h.head(n).array() = 1.0;
    p.h.tail(n).array() = 1.0;
    qp::Solution s = qp::solve(p);
    if (s.status != qp::Status::solved) return false;
    if ((p.G * s.x - p.h).maxCoeff() > 1e-8) return false;
  }
  return true;
}

bool verify_separability()
{
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RandomScenarioOptions opt;
    opt.num_mgs = 3;
    opt.horizon = 3;
    opt.seed = seed + 500;
    Scenario sc = make_random_scenario(opt);
    ExchangeGeometry g = build_exchange_vectors(sc.topology);
    if (g.edges.empty()) continue;
    Rng rng(seed);
    std::vector<VectorXd> z(3), zeta(3);
    for (int k = 0; k < 3; ++k) {
      z[k] = VectorXd::Zero(3);
      zeta[k] = VectorXd::Zero(3);
      for (int n = 0; n < 3; ++n) z[k](n) = rng.normal(0.0, 4.0);
    }
    ExchangeResult res = solve_exchange(z, zeta, g);
    double per_step = 0.0;
    for (int n = 0; n < 3; ++n) {
      VectorXd y(3);
      for (int k = 0; k < 3; ++k) y(k) = zeta[k](n) - z[k](n);
      per_step += solve_exchange_step(y, g).cost;
    }
    if (std::abs(res.cost - per_step) > 1e-6 * (1.0 + std::abs(per_step))) return false;
  }
  return true;
}

bool verify_distributed()
{
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto fleet = synthesize_batteries(1 + static_cast<int>(seed % 3), seed + 900);
    std::vector<ResidentialSystem> systems;
    Rng rng(seed);
    for (std::size_t i = 0; i < fleet.params.size(); ++i) {
      ResidentialSystem s;
      s.params = fleet.params[i];
      s.soc = fleet.initial_soc[i];
      s.net_consumption = VectorXd::Zero(4);
      for (int n = 0; n < 4; ++n) s.net_consumption(n) = rng.normal(0.4, 0.5);
      systems.push_back(std::move(s));
    }
    MicrogridModel mg = build_microgrid_model(std::move(systems), 4, 0.25);
    VectorXd zeta(4);
    for (int n = 0; n < 4; ++n) zeta(n) = rng.normal(0.4, 0.8);
    LocalSolution central = solve_local_central(mg, zeta);
    LocalSolution dist = solve_local_distributed(mg, zeta);
    if (std::abs(central.objective - dist.objective) >
        1e-4 * (1.0 + std::abs(central.objective)))
      return false;
  }
  return true;
}

int cmd_verify(const std::vector<std::string>& suites)
{
  const std::vector<std::pair<std::string, bool (*)()>> all = {
      {"example1", verify_example1},
      {"descent", verify_descent},
      {"qp", verify_qp},
      {"separability", verify_separability},
      {"distributed", verify_distributed},
  };
  std::vector<std::string> selected = suites;
  if (selected.empty())
    for (const auto& [name, fn] : all) selected.push_back(name);

  int failures = 0;
  for (const auto& want : selected) {
    const auto it = std::find_if(all.begin(), all.end(),
                                 [&](const auto& s) { return s.first == want; });
    if (it == all.end()) {
      std::cerr << "error: unknown suite '" << want << "'; available:";
      for (const auto& [name, fn] : all) std::cerr << " " << name;
      std::cerr << "\n";
      return 2;
    }
    bool ok = false;
    try {
      ok = it->second();
    } catch (const std::exception& e) {
      std::cerr << "suite " << want << " raised: " << e.what() << "\n";
    }
    std::cout << "[" << (ok ? "PASS" : "FAIL") << "] " << want << "\n";
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"microgrid load shaping: bidirectional battery/exchange optimisation"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "synthesize a scenario on disk");
  std::string gen_kind = "demo", gen_out = ".";
  std::vector<int> gen_households;
  int gen_horizon = 96, gen_mgs = 4;
  std::uint64_t gen_seed = 1;
  gen->add_option("--kind", gen_kind, "scenario family")
      ->check(CLI::IsMember({"demo", "random", "example1"}));
  gen->add_option("--households", gen_households, "households per microgrid");
  gen->add_option("--horizon", gen_horizon, "prediction horizon in steps")
      ->check(CLI::Range(2, 1000));
  gen->add_option("--mgs", gen_mgs, "number of microgrids (random kind)")
      ->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "random seed");
  gen->add_option("--out", gen_out, "output directory");

  // openloop
  auto* open = app.add_subcommand("openloop", "single bidirectional solve at step 0");
  std::string open_scenario, open_out = ".";
  SolverFlags open_flags;
  open->add_option("scenario", open_scenario, "scenario JSON path")->required();
  open_flags.attach(open);
  open->add_option("--out", open_out, "output directory");

  // closedloop
  auto* closed = app.add_subcommand("closedloop", "receding-horizon simulation");
  std::string closed_scenario, closed_out = ".";
  int closed_steps = 24;
  SolverFlags closed_flags;
  closed->add_option("scenario", closed_scenario, "scenario JSON path")->required();
  closed->add_option("--steps", closed_steps, "number of closed-loop steps")
      ->check(CLI::PositiveNumber);
  closed_flags.attach(closed);
  closed->add_option("--out", closed_out, "output directory");

  // verify
  auto* verify = app.add_subcommand("verify", "run verification suites");
  std::vector<std::string> verify_suites;
  verify->add_option("suites", verify_suites, "suite names (default: all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_generate(gen_kind, gen_households, gen_horizon, gen_seed, gen_mgs, gen_out);
    if (open->parsed()) return cmd_openloop(open_scenario, open_flags, open_out);
    if (closed->parsed())
      return cmd_closedloop(closed_scenario, closed_steps, closed_flags, closed_out);
    if (verify->parsed()) return cmd_verify(verify_suites);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
