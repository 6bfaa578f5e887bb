#pragma once

#include "mgls/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgls {

inline constexpr const char* kScenarioSchemaVersion = "mgls-scenario-1";

/// Deterministic normal/uniform draws (Box-Muller over mt19937_64); the
/// standard-library distributions are implementation-defined, this is not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform()  // [0,1)
  {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal(double mu, double sigma)
  {
    if (has_spare_) {
      has_spare_ = false;
      return mu + sigma * spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return mu + sigma * r * std::cos(a);
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct SynthesizedFleet {
  std::vector<BatteryParams> params;
  std::vector<double> initial_soc;
};

/// Random battery fleet: C ~ N(2, 0.5) kWh, x ~ N(0.5, 0.05) kWh,
/// alpha ~ N(0.99, 0.01), beta/gamma ~ N(0.95, 0.05),
/// -u_min and u_max ~ N(0.25, 0.15) * C kW. Draws are clamped into
/// validity, so every returned parameter set passes BatteryParams::validate.
inline SynthesizedFleet synthesize_batteries(int count, std::uint64_t seed)
{
  if (count < 1) throw std::invalid_argument("synthesize_batteries: count must be >= 1");
  Rng rng(seed);
  SynthesizedFleet fleet;
  fleet.params.reserve(count);
  fleet.initial_soc.reserve(count);
  auto unit = [](double v) { return std::clamp(v, 1e-3, 1.0); };
  for (int i = 0; i < count; ++i) {
    BatteryParams p;
    p.capacity = std::max(0.0, rng.normal(2.0, 0.5));
    double soc = std::clamp(rng.normal(0.5, 0.05), 0.0, p.capacity);
    p.alpha = unit(rng.normal(0.99, 0.01));
    p.beta = unit(rng.normal(0.95, 0.05));
    p.gamma = unit(rng.normal(0.95, 0.05));
    p.u_min = -std::max(0.0, rng.normal(0.25, 0.15)) * p.capacity;
    p.u_max = std::max(0.0, rng.normal(0.25, 0.15)) * p.capacity;
    fleet.params.push_back(p);
    fleet.initial_soc.push_back(soc);
  }
  return fleet;
}

// ---------------------------------------------------------------------------
// CSV time series: header row of series identifiers, one row per time step,
// values in kW.

struct CsvTable {
  std::vector<std::string> names;
  std::vector<VectorXd> series;  ///< one per column
};

inline CsvTable load_profiles_csv(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_profiles_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw std::runtime_error("load_profiles_csv: " + path + " is empty");

  CsvTable table;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) table.names.push_back(cell);
  }
  const std::size_t cols = table.names.size();
  if (cols == 0) throw std::runtime_error("load_profiles_csv: " + path + " has no columns");

  std::vector<std::vector<double>> data(cols);
  int file_row = 1;
  while (std::getline(in, line)) {
    ++file_row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col >= cols)
        throw std::runtime_error("load_profiles_csv: " + path + " row " + std::to_string(file_row) +
                                 " has more than " + std::to_string(cols) + " columns");
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &pos);
      } catch (const std::exception&) {
        pos = std::string::npos;
      }
      if (pos == std::string::npos || pos != cell.size())
        throw std::runtime_error("load_profiles_csv: non-numeric cell at row " +
                                 std::to_string(file_row) + ", column " + std::to_string(col + 1) +
                                 " of " + path);
      data[col].push_back(v);
      ++col;
    }
    if (col != cols)
      throw std::runtime_error("load_profiles_csv: ragged row " + std::to_string(file_row) +
                               " in " + path + " (expected " + std::to_string(cols) +
                               " columns, got " + std::to_string(col) + ")");
  }
  if (data[0].empty()) throw std::runtime_error("load_profiles_csv: " + path + " has no data rows");

  table.series.resize(cols);
  for (std::size_t c = 0; c < cols; ++c)
    table.series[c] = Eigen::Map<const VectorXd>(data[c].data(), static_cast<Eigen::Index>(data[c].size()));
  return table;
}

inline void save_profiles_csv(const std::string& path, const CsvTable& table)
{
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_profiles_csv: cannot write " + path);
  for (std::size_t c = 0; c < table.names.size(); ++c)
    out << (c ? "," : "") << table.names[c];
  out << "\n";
  const Eigen::Index rows = table.series.empty() ? 0 : table.series.front().size();
  char buf[40];
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < table.series.size(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", table.series[c](r));
      out << (c ? "," : "") << buf;
    }
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Scenario

struct Scenario {
  std::string name = "scenario";
  double dt = 0.25;  ///< hours per step
  int horizon = 96;
  std::uint64_t seed = 0;
  std::string reference_policy = "moving_average";  ///< or "zero"
  std::vector<std::vector<BatteryParams>> batteries;  ///< per MG per household
  std::vector<std::vector<double>> initial_soc;
  std::vector<std::vector<VectorXd>> actual;     ///< per MG per household, kW
  std::vector<std::vector<VectorXd>> predicted;
  NetworkTopology topology;

  int num_mgs() const { return static_cast<int>(batteries.size()); }

  std::vector<int> household_counts() const
  {
    std::vector<int> c;
    for (const auto& b : batteries) c.push_back(static_cast<int>(b.size()));
    return c;
  }

  int series_length() const
  {
    return actual.empty() || actual[0].empty() ? 0 : static_cast<int>(actual[0][0].size());
  }
};

/// Overall average predicted net consumption at step n: trailing window of
/// N steps, or the available prefix while n < N.
inline double overall_average_consumption(const std::vector<std::vector<VectorXd>>& predicted,
                                          int n, int N)
{
  if (predicted.empty() || predicted[0].empty() || predicted[0][0].size() == 0)
    throw std::invalid_argument("reference: empty series");
  const int lo = std::max(0, n - N + 1);
  double sum = 0.0;
  for (const auto& mg : predicted)
    for (const auto& w : mg) {
      if (n >= w.size()) throw std::invalid_argument("reference: series too short for step");
      for (int j = lo; j <= n; ++j) sum += w(j);
    }
  return sum / static_cast<double>(n - lo + 1);
}

/// zeta_k(n): each MG's household share of the overall trailing average.
inline std::vector<double> reference_trajectory(const std::vector<std::vector<VectorXd>>& predicted,
                                                int n, int N,
                                                const std::vector<int>& household_counts)
{
  const double zeta = overall_average_consumption(predicted, n, N);
  int total = 0;
  for (int c : household_counts) total += c;
  if (total <= 0) throw std::invalid_argument("reference: no households");
  std::vector<double> out;
  out.reserve(household_counts.size());
  for (int c : household_counts) out.push_back(zeta * c / total);
  return out;
}

/// Per-MG reference profiles for the window [k, k+N).
inline std::vector<VectorXd> reference_window(const Scenario& sc, int k)
{
  const int M = sc.num_mgs();
  const int N = sc.horizon;
  std::vector<VectorXd> zeta(M, VectorXd::Zero(N));
  if (sc.reference_policy == "zero") return zeta;
  if (sc.reference_policy != "moving_average")
    throw std::invalid_argument("unknown reference policy: " + sc.reference_policy);
  const auto counts = sc.household_counts();
  for (int n = 0; n < N; ++n) {
    const auto z = reference_trajectory(sc.predicted, k + n, N, counts);
    for (int m = 0; m < M; ++m) zeta[m](n) = z[m];
  }
  return zeta;
}

/// Stacked per-MG models at time k from the given SoCs and the predicted
/// consumption window.
inline std::vector<MicrogridModel> models_at(const Scenario& sc, int k,
                                             const std::vector<std::vector<double>>& socs)
{
  const int M = sc.num_mgs();
  const int N = sc.horizon;
  if (k + N > sc.series_length())
    throw std::invalid_argument("models_at: series do not cover the window");
  std::vector<MicrogridModel> mgs;
  mgs.reserve(M);
  for (int m = 0; m < M; ++m) {
    std::vector<ResidentialSystem> systems;
    systems.reserve(sc.batteries[m].size());
    for (std::size_t i = 0; i < sc.batteries[m].size(); ++i) {
      ResidentialSystem s;
      s.params = sc.batteries[m][i];
      s.soc = socs[m][i];
      s.net_consumption = sc.predicted[m][i].segment(k, N);
      systems.push_back(std::move(s));
    }
    mgs.push_back(build_microgrid_model(std::move(systems), N, sc.dt));
  }
  return mgs;
}

// ---------------------------------------------------------------------------
// Scenario (de)serialization: a JSON document plus two CSV series files
// referenced by relative path.

inline void save_scenario(const Scenario& sc, const std::string& path)
{
  namespace fs = std::filesystem;
  const fs::path p(path);
  const std::string stem = p.stem().string();
  const std::string actual_csv = stem + "_actual.csv";
  const std::string predicted_csv = stem + "_predicted.csv";

  nlohmann::json j;
  j["schema_version"] = kScenarioSchemaVersion;
  j["name"] = sc.name;
  j["dt_hours"] = sc.dt;
  j["horizon"] = sc.horizon;
  j["seed"] = sc.seed;
  j["reference_policy"] = sc.reference_policy;
  j["microgrids"] = nlohmann::json::array();
  for (int m = 0; m < sc.num_mgs(); ++m) {
    nlohmann::json households = nlohmann::json::array();
    for (std::size_t i = 0; i < sc.batteries[m].size(); ++i) {
      const auto& b = sc.batteries[m][i];
      households.push_back({{"alpha", b.alpha},
                            {"beta", b.beta},
                            {"gamma", b.gamma},
                            {"capacity", b.capacity},
                            {"u_min", b.u_min},
                            {"u_max", b.u_max},
                            {"soc", sc.initial_soc[m][i]}});
    }
    j["microgrids"].push_back({{"households", households}});
  }
  auto matrix_json = [](const MatrixXd& mat) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < mat.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < mat.cols(); ++c) row.push_back(mat(r, c));
      rows.push_back(row);
    }
    return rows;
  };
  j["line_limits"] = matrix_json(sc.topology.lambda);
  j["line_efficiencies"] = matrix_json(sc.topology.eta);
  j["actual_csv"] = actual_csv;
  j["predicted_csv"] = predicted_csv;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_scenario: cannot write " + path);
  out << j.dump(2) << "\n";

  auto write_series = [&](const std::string& file, const std::vector<std::vector<VectorXd>>& data) {
    CsvTable table;
    for (int m = 0; m < sc.num_mgs(); ++m)
      for (std::size_t i = 0; i < data[m].size(); ++i) {
        table.names.push_back("mg" + std::to_string(m + 1) + "_h" + std::to_string(i + 1));
        table.series.push_back(data[m][i]);
      }
    save_profiles_csv((p.parent_path() / file).string(), table);
  };
  write_series(actual_csv, sc.actual);
  write_series(predicted_csv, sc.predicted);
}

inline Scenario load_scenario(const std::string& path)
{
  namespace fs = std::filesystem;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_scenario: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_scenario: " + path + " is not valid JSON: " + e.what());
  }
  if (!j.contains("schema_version") || j["schema_version"] != kScenarioSchemaVersion)
    throw std::runtime_error("load_scenario: unknown schema version in " + path +
                             " (expected " + std::string(kScenarioSchemaVersion) + ")");
  for (const char* field : {"name", "dt_hours", "horizon", "seed", "reference_policy",
                            "microgrids", "line_limits", "line_efficiencies",
                            "actual_csv", "predicted_csv"})
    if (!j.contains(field))
      throw std::runtime_error("load_scenario: missing field '" + std::string(field) + "' in " + path);

  Scenario sc;
  sc.name = j["name"].get<std::string>();
  sc.dt = j["dt_hours"].get<double>();
  sc.horizon = j["horizon"].get<int>();
  sc.seed = j["seed"].get<std::uint64_t>();
  sc.reference_policy = j["reference_policy"].get<std::string>();

  for (const auto& mg : j["microgrids"]) {
    std::vector<BatteryParams> params;
    std::vector<double> socs;
    for (const auto& h : mg["households"]) {
      BatteryParams b;
      b.alpha = h["alpha"].get<double>();
      b.beta = h["beta"].get<double>();
      b.gamma = h["gamma"].get<double>();
      b.capacity = h["capacity"].get<double>();
      b.u_min = h["u_min"].get<double>();
      b.u_max = h["u_max"].get<double>();
      b.validate();
      params.push_back(b);
      socs.push_back(h["soc"].get<double>());
    }
    sc.batteries.push_back(std::move(params));
    sc.initial_soc.push_back(std::move(socs));
  }

  auto matrix_from = [](const nlohmann::json& rows) {
    const auto r = rows.size();
    MatrixXd mat(r, r == 0 ? 0 : rows[0].size());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t c = 0; c < rows[i].size(); ++c) mat(i, c) = rows[i][c].get<double>();
    return mat;
  };
  sc.topology = validate_topology(matrix_from(j["line_limits"]), matrix_from(j["line_efficiencies"]));
  if (sc.topology.num_mgs() != sc.num_mgs())
    throw std::runtime_error("load_scenario: topology size != number of microgrids");

  const fs::path dir = fs::path(path).parent_path();
  auto read_series = [&](const std::string& file) {
    CsvTable table = load_profiles_csv((dir / file).string());
    std::vector<std::vector<VectorXd>> data(sc.num_mgs());
    std::size_t col = 0;
    for (int m = 0; m < sc.num_mgs(); ++m)
      for (std::size_t i = 0; i < sc.batteries[m].size(); ++i) {
        if (col >= table.series.size())
          throw std::runtime_error("load_scenario: " + file + " has fewer columns than households");
        data[m].push_back(table.series[col++]);
      }
    if (col != table.series.size())
      throw std::runtime_error("load_scenario: " + file + " has more columns than households");
    return data;
  };
  sc.actual = read_series(j["actual_csv"].get<std::string>());
  sc.predicted = read_series(j["predicted_csv"].get<std::string>());

  const int len = sc.series_length();
  for (const auto& grp : {sc.actual, sc.predicted})
    for (const auto& mg : grp)
      for (const auto& w : mg)
        if (w.size() != len) throw std::runtime_error("load_scenario: ragged series lengths");
  if (len < sc.horizon) throw std::runtime_error("load_scenario: series shorter than horizon");
  return sc;
}

// ---------------------------------------------------------------------------
// Scenario generators

struct DemoOptions {
  std::vector<int> households = {40, 20, 20, 20};
  int horizon = 96;
  double dt = 0.25;
  std::uint64_t seed = 1;
  int extra_steps = 96;          ///< series length = horizon + extra_steps
  double prediction_noise = 0.05;  ///< relative noise on the predicted PV part
};

inline MatrixXd paper_line_limits()
{
  MatrixXd lambda(4, 4);
  lambda << 0, 9, 8, 7,
            9, 0, 0, 8,
            8, 0, 0, 0,
            7, 8, 0, 0;
  return lambda;
}

inline MatrixXd paper_line_efficiencies()
{
  MatrixXd eta(4, 4);
  eta << 0,    0.8, 0.9, 0.85,
         0.8,  0,   0,   0.9,
         0.9,  0,   0,   0,
         0.85, 0.9, 0,   0;
  return eta;
}

/// Synthetic day-profile demo: households with morning/evening load peaks,
/// a small midday PV dip, per-MG phase offsets, and random battery fleets.
inline Scenario make_demo_scenario(const DemoOptions& opt = {})
{
  const int M = static_cast<int>(opt.households.size());
  if (M == 0) throw std::invalid_argument("make_demo_scenario: no microgrids");
  for (int c : opt.households)
    if (c < 1) throw std::invalid_argument("make_demo_scenario: zero households requested");

  Scenario sc;
  sc.name = "demo";
  sc.dt = opt.dt;
  sc.horizon = opt.horizon;
  sc.seed = opt.seed;
  sc.reference_policy = "moving_average";

  if (M == 4) {
    sc.topology = validate_topology(paper_line_limits(), paper_line_efficiencies());
  } else {  // chain
    MatrixXd lambda = MatrixXd::Zero(M, M), eta = MatrixXd::Zero(M, M);
    for (int k = 0; k + 1 < M; ++k) {
      lambda(k, k + 1) = lambda(k + 1, k) = 10.0;
      eta(k, k + 1) = eta(k + 1, k) = 0.9;
    }
    sc.topology = validate_topology(lambda, eta);
  }

  const int len = opt.horizon + opt.extra_steps;
  auto bump = [](double h, double center, double width) {
    double d = std::fabs(h - center);
    d = std::min(d, 24.0 - d);
    return std::exp(-d * d / (2.0 * width * width));
  };

  Rng rng(opt.seed);
  for (int m = 0; m < M; ++m) {
    auto fleet = synthesize_batteries(opt.households[m], opt.seed * 1000003u + m + 1);
    sc.batteries.push_back(std::move(fleet.params));
    sc.initial_soc.push_back(std::move(fleet.initial_soc));

    const double phase = 1.5 * (m % 4) - 2.0;  // hours, staggers the MG peaks
    std::vector<VectorXd> actual, predicted;
    for (int i = 0; i < opt.households[m]; ++i) {
      const double base = rng.uniform(0.30, 0.50);
      const double a_morning = rng.uniform(0.05, 0.12);
      const double a_evening = rng.uniform(0.08, 0.18);
      const double pv_scale = rng.uniform(0.03, 0.06);
      VectorXd w_actual(len), w_pred(len);
      for (int t = 0; t < len; ++t) {
        const double h = std::fmod(t * opt.dt, 24.0);
        const double load = base + a_morning * bump(h, 8.0 + phase, 2.2) +
                            a_evening * bump(h, 19.0 + phase, 2.8) +
                            rng.uniform(-0.02, 0.02);
        const double pv = pv_scale * bump(h, 12.5, 3.0);
        const double pv_pred = pv * (1.0 + opt.prediction_noise * rng.normal(0.0, 1.0));
        w_actual(t) = load - pv;
        w_pred(t) = load - pv_pred;
      }
      actual.push_back(std::move(w_actual));
      predicted.push_back(std::move(w_pred));
    }
    sc.actual.push_back(std::move(actual));
    sc.predicted.push_back(std::move(predicted));
  }
  return sc;
}

struct RandomScenarioOptions {
  int num_mgs = 3;
  int horizon = 4;
  std::vector<int> households = {};  ///< empty: 1..3 drawn per MG
  std::uint64_t seed = 0;
  double edge_probability = 0.6;
  bool lossless = false;
};

/// Small random instances for property tests and verification suites.
inline Scenario make_random_scenario(const RandomScenarioOptions& opt)
{
  Scenario sc;
  sc.name = "random";
  sc.dt = 0.25;
  sc.horizon = opt.horizon;
  sc.seed = opt.seed;
  sc.reference_policy = "moving_average";

  Rng rng(opt.seed * 2654435761u + 17);
  const int M = opt.num_mgs;
  MatrixXd lambda = MatrixXd::Zero(M, M), eta = MatrixXd::Zero(M, M);
  for (int k = 0; k < M; ++k)
    for (int v = k + 1; v < M; ++v)
      if (rng.uniform() < opt.edge_probability) {
        lambda(k, v) = lambda(v, k) = rng.uniform(2.0, 10.0);
        eta(k, v) = eta(v, k) = opt.lossless ? 1.0 : rng.uniform(0.7, 1.0);
      }
  sc.topology = validate_topology(lambda, eta);

  const int len = opt.horizon + 2;
  for (int m = 0; m < M; ++m) {
    const int count = opt.households.empty()
                          ? 1 + static_cast<int>(rng.uniform() * 3.0)
                          : opt.households[m % opt.households.size()];
    auto fleet = synthesize_batteries(count, opt.seed * 7919u + m + 1);
    sc.batteries.push_back(std::move(fleet.params));
    sc.initial_soc.push_back(std::move(fleet.initial_soc));
    std::vector<VectorXd> actual, predicted;
    for (int i = 0; i < count; ++i) {
      VectorXd w(len);
      for (int t = 0; t < len; ++t) w(t) = rng.normal(0.4, 0.5);
      actual.push_back(w);
      predicted.push_back(w);
    }
    sc.actual.push_back(std::move(actual));
    sc.predicted.push_back(std::move(predicted));
  }
  return sc;
}

}  // namespace mgls
