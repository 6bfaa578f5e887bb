#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mgls {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Per-battery efficiencies and limits.
struct BatteryParams {
  double alpha = 1.0;     ///< self-discharge efficiency, (0,1]
  double beta = 1.0;      ///< charging efficiency, (0,1]
  double gamma = 1.0;     ///< discharging efficiency, (0,1]
  double capacity = 0.0;  ///< kWh, >= 0
  double u_min = 0.0;     ///< max discharge rate, kW, <= 0
  double u_max = 0.0;     ///< max charge rate, kW, >= 0

  void validate() const
  {
    auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
    if (!in_unit(alpha) || !in_unit(beta) || !in_unit(gamma))
      throw std::invalid_argument("BatteryParams: efficiencies must lie in (0,1]");
    if (!(capacity >= 0.0))
      throw std::invalid_argument("BatteryParams: capacity must be >= 0");
    if (!(u_min <= 0.0) || !(u_max >= 0.0))
      throw std::invalid_argument("BatteryParams: need u_min <= 0 <= u_max");
  }
};

/// One household: battery, measured SoC and (predicted) net consumption.
struct ResidentialSystem {
  BatteryParams params;
  double soc = 0.0;            ///< kWh, in [0, capacity]
  VectorXd net_consumption;    ///< kW per step, length >= horizon
};

/// Charge/discharge command for a single step.
struct ControlStep {
  double u_plus = 0.0;   ///< kW, >= 0
  double u_minus = 0.0;  ///< kW, <= 0
};

/// SoC update x(n+1) = alpha x + T (beta u+ + u-).
inline double step_soc(double x, const ControlStep& u, const BatteryParams& p, double dt)
{
  return p.alpha * x + dt * (p.beta * u.u_plus + u.u_minus);
}

/// Demand update z = w + u+ + gamma u-.
inline double demand_step(double w, const ControlStep& u, double gamma)
{
  return w + u.u_plus + gamma * u.u_minus;
}

/// Projects one control impulse into the exact per-step constraint set for
/// the given SoC, removing solver-tolerance violations. Idempotent on
/// already-feasible inputs.
inline ControlStep repair_control(ControlStep u, double soc, const BatteryParams& p, double dt)
{
  const bool has_battery = p.capacity > 0.0;
  const double umax = has_battery ? p.u_max : 0.0;
  const double umin = has_battery ? p.u_min : 0.0;
  u.u_plus = std::clamp(u.u_plus, 0.0, umax);
  u.u_minus = std::clamp(u.u_minus, umin, 0.0);
  double frac = (umin < 0.0 ? u.u_minus / umin : 0.0) + (umax > 0.0 ? u.u_plus / umax : 0.0);
  if (frac > 1.0) {
    u.u_plus /= frac;
    u.u_minus /= frac;
  }
  double next = step_soc(soc, u, p, dt);
  if (next > p.capacity && p.beta > 0.0 && dt > 0.0)
    u.u_plus = std::max(0.0, (p.capacity - p.alpha * soc - dt * u.u_minus) / (dt * p.beta));
  next = step_soc(soc, u, p, dt);
  if (next < 0.0 && dt > 0.0)
    u.u_minus = std::min(0.0, (-p.alpha * soc - dt * p.beta * u.u_plus) / dt);
  return u;
}

/// One microgrid over a fixed horizon in stacked form:
/// aggregated demand z = A u + b, feasible controls D u <= d.
///
/// Controls are stacked system-major, step-minor, (u+, u-) per step, so
/// u has 2 * horizon * systems.size() entries. D holds 8 rows per system
/// per step: SoC upper/lower, discharge-rate pair, charge-rate pair, and
/// the combined-rate budget pair, in that order.
struct MicrogridModel {
  std::vector<ResidentialSystem> systems;
  int horizon = 0;
  double dt = 0.0;  ///< hours per step
  MatrixXd A;       ///< horizon x (2*horizon*I)
  VectorXd b;       ///< aggregated baseline demand (= sum of net consumption)
  std::vector<Eigen::SparseMatrix<double>> D_blocks;  ///< per-system constraints
  std::vector<VectorXd> d_blocks;

  int num_systems() const { return static_cast<int>(systems.size()); }
  int controls_per_system() const { return 2 * horizon; }
  int num_controls() const { return 2 * horizon * num_systems(); }
  int num_constraints() const { return 8 * horizon * num_systems(); }

  /// Dense stacked D (block-diagonal over systems). Intended for small
  /// instances; large solves work on the blocks directly.
  MatrixXd stacked_D() const
  {
    MatrixXd D = MatrixXd::Zero(num_constraints(), num_controls());
    for (int i = 0; i < num_systems(); ++i)
      D.block(8 * horizon * i, 2 * horizon * i, 8 * horizon, 2 * horizon) = MatrixXd(D_blocks[i]);
    return D;
  }

  VectorXd stacked_d() const
  {
    VectorXd d(num_constraints());
    for (int i = 0; i < num_systems(); ++i) d.segment(8 * horizon * i, 8 * horizon) = d_blocks[i];
    return d;
  }

  /// Residual of D u - d; max entry <= 0 means feasible.
  double constraint_violation(const VectorXd& u) const
  {
    double worst = 0.0;
    for (int i = 0; i < num_systems(); ++i) {
      VectorXd r = D_blocks[i] * u.segment(2 * horizon * i, 2 * horizon) - d_blocks[i];
      worst = std::max(worst, r.maxCoeff());
    }
    return worst;
  }
};

namespace detail {

/// Constraint block for one system. Degenerate bounds (u_max = 0, u_min = 0,
/// or capacity = 0) pin the corresponding control component to zero and drop
/// its term from the combined-rate budget row.
inline void build_system_block(const ResidentialSystem& sys, int N, double dt,
                               Eigen::SparseMatrix<double>& D, VectorXd& d,
                               MatrixXd& A)
{
  const BatteryParams& p = sys.params;
  const bool has_battery = p.capacity > 0.0;
  const double umax = has_battery ? p.u_max : 0.0;
  const double umin = has_battery ? p.u_min : 0.0;

  A = MatrixXd::Zero(N, 2 * N);
  d = VectorXd::Zero(8 * N);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(N) * (N + 6));

  // alpha_pow[m] = alpha^m
  std::vector<double> alpha_pow(static_cast<std::size_t>(N) + 1, 1.0);
  for (int m = 1; m <= N; ++m) alpha_pow[m] = alpha_pow[m - 1] * p.alpha;

  for (int n = 0; n < N; ++n) {
    A(n, 2 * n) = 1.0;
    A(n, 2 * n + 1) = p.gamma;

    const int row0 = 8 * n;
    // x(n+1) = alpha^{n+1} soc + T sum_j alpha^{n-j} (beta u+(j) + u-(j))
    const double free_soc = alpha_pow[n + 1] * sys.soc;
    for (int j = 0; j <= n; ++j) {
      const double c = dt * alpha_pow[n - j];
      trips.emplace_back(row0 + 0, 2 * j, c * p.beta);
      trips.emplace_back(row0 + 0, 2 * j + 1, c);
      trips.emplace_back(row0 + 1, 2 * j, -c * p.beta);
      trips.emplace_back(row0 + 1, 2 * j + 1, -c);
    }
    d(row0 + 0) = p.capacity - free_soc;  // x(n+1) <= C
    d(row0 + 1) = free_soc;               // x(n+1) >= 0

    trips.emplace_back(row0 + 2, 2 * n + 1, -1.0);  // u- >= umin
    d(row0 + 2) = -umin;
    trips.emplace_back(row0 + 3, 2 * n + 1, 1.0);   // u- <= 0
    d(row0 + 3) = 0.0;
    trips.emplace_back(row0 + 4, 2 * n, 1.0);       // u+ <= umax
    d(row0 + 4) = umax;
    trips.emplace_back(row0 + 5, 2 * n, -1.0);      // u+ >= 0
    d(row0 + 5) = 0.0;

    // 0 <= u-/umin + u+/umax <= 1, degenerate fractions dropped
    const double cm = umin < 0.0 ? 1.0 / umin : 0.0;
    const double cp = umax > 0.0 ? 1.0 / umax : 0.0;
    if (cm != 0.0) {
      trips.emplace_back(row0 + 6, 2 * n + 1, cm);
      trips.emplace_back(row0 + 7, 2 * n + 1, -cm);
    }
    if (cp != 0.0) {
      trips.emplace_back(row0 + 6, 2 * n, cp);
      trips.emplace_back(row0 + 7, 2 * n, -cp);
    }
    d(row0 + 6) = 1.0;
    d(row0 + 7) = 0.0;
  }

  D.resize(8 * N, 2 * N);
  D.setFromTriplets(trips.begin(), trips.end());
}

}  // namespace detail

/// Builds the stacked affine model for one microgrid at the current time.
/// Each system must carry its measured SoC and a predicted net-consumption
/// window of at least N steps (only the first N are used).
inline MicrogridModel build_microgrid_model(std::vector<ResidentialSystem> systems, int N, double dt)
{
  if (N < 2) throw std::invalid_argument("build_microgrid_model: horizon must be >= 2");
  if (!(dt > 0.0)) throw std::invalid_argument("build_microgrid_model: dt must be > 0");
  if (systems.empty()) throw std::invalid_argument("build_microgrid_model: no systems");

  for (std::size_t i = 0; i < systems.size(); ++i) {
    const auto& s = systems[i];
    s.params.validate();
    if (s.net_consumption.size() < N)
      throw std::invalid_argument("build_microgrid_model: net-consumption profile of system " +
                                  std::to_string(i) + " shorter than horizon");
    if (!(s.soc >= 0.0 && s.soc <= s.params.capacity))
      throw std::invalid_argument("build_microgrid_model: measured SoC of system " +
                                  std::to_string(i) + " outside [0, capacity]");
  }

  MicrogridModel mg;
  mg.horizon = N;
  mg.dt = dt;
  const int I = static_cast<int>(systems.size());
  mg.A = MatrixXd::Zero(N, 2 * N * I);
  mg.b = VectorXd::Zero(N);
  mg.D_blocks.resize(I);
  mg.d_blocks.resize(I);
  for (int i = 0; i < I; ++i) {
    MatrixXd Ai;
    detail::build_system_block(systems[i], N, dt, mg.D_blocks[i], mg.d_blocks[i], Ai);
    mg.A.block(0, 2 * N * i, N, 2 * N) = Ai;
    mg.b += systems[i].net_consumption.head(N);
  }
  mg.systems = std::move(systems);
  return mg;
}

/// Transmission-line limits and efficiencies between microgrids.
struct NetworkTopology {
  MatrixXd lambda;  ///< symmetric line limits, kW; 0 = no line
  MatrixXd eta;     ///< symmetric line efficiencies, (0,1] on lines
  std::vector<std::pair<int, int>> edges;  ///< (k, v) with k < v, lambda_kv > 0

  int num_mgs() const { return static_cast<int>(lambda.rows()); }
};

/// Checks symmetry and per-line efficiency ranges, returns the edge set.
inline NetworkTopology validate_topology(const MatrixXd& lambda, const MatrixXd& eta)
{
  if (lambda.rows() != lambda.cols() || eta.rows() != eta.cols() || lambda.rows() != eta.rows())
    throw std::invalid_argument("validate_topology: lambda and eta must be square of equal size");
  const int M = static_cast<int>(lambda.rows());
  NetworkTopology topo;
  topo.lambda = lambda;
  topo.eta = eta;
  for (int k = 0; k < M; ++k) {
    if (lambda(k, k) != 0.0)
      throw std::invalid_argument("validate_topology: lambda diagonal must be zero");
    for (int v = 0; v < M; ++v) {
      if (lambda(k, v) < 0.0)
        throw std::invalid_argument("validate_topology: negative line limit at (" +
                                    std::to_string(k) + "," + std::to_string(v) + ")");
      if (lambda(k, v) != lambda(v, k))
        throw std::invalid_argument("validate_topology: lambda not symmetric at (" +
                                    std::to_string(k) + "," + std::to_string(v) + ")");
      if (eta(k, v) != eta(v, k))
        throw std::invalid_argument("validate_topology: eta not symmetric at (" +
                                    std::to_string(k) + "," + std::to_string(v) + ")");
      if (v > k && lambda(k, v) > 0.0) {
        if (!(eta(k, v) > 0.0 && eta(k, v) <= 1.0))
          throw std::invalid_argument("validate_topology: efficiency outside (0,1] on line (" +
                                      std::to_string(k) + "," + std::to_string(v) + ")");
        topo.edges.emplace_back(k, v);
      }
    }
  }
  return topo;
}

}  // namespace mgls
