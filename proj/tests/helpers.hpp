#pragma once

#include "mgls/mgls.hpp"

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace mgls::testing {

/// The 4-MG chain instance: one battery-less household per MG, constant
/// demands (-10, 0, 0, 10), lossless chain lines with limit 10.
struct Example1 {
  std::vector<MicrogridModel> mgs;
  NetworkTopology topology;
  ExchangeGeometry geometry;
  std::vector<VectorXd> zeta;
  int horizon;

  explicit Example1(int N = 2)
  {
    horizon = N;
    const double demands[4] = {-10.0, 0.0, 0.0, 10.0};
    for (double w : demands) {
      ResidentialSystem sys;
      sys.params = BatteryParams{};  // capacity 0: no battery
      sys.soc = 0.0;
      sys.net_consumption = VectorXd::Constant(N, w);
      mgs.push_back(build_microgrid_model({sys}, N, 0.25));
    }
    MatrixXd lambda = MatrixXd::Zero(4, 4), eta = MatrixXd::Zero(4, 4);
    for (int k = 0; k < 3; ++k) {
      lambda(k, k + 1) = lambda(k + 1, k) = 10.0;
      eta(k, k + 1) = eta(k + 1, k) = 1.0;
    }
    topology = validate_topology(lambda, eta);
    geometry = build_exchange_vectors(topology);
    zeta.assign(4, VectorXd::Zero(N));
  }
};

/// Joint QP over all controls and exchange fractions; the centralized
/// route used as the global-optimality oracle.
struct JointProblem {
  qp::Problem qp;
  Eigen::MatrixXd L;  ///< residual map: r = L x + c, optimum value = ||r||^2
  VectorXd c;
  int num_controls = 0;  ///< total control variables before the delta block
};

inline JointProblem build_joint_problem(const std::vector<MicrogridModel>& mgs,
                                        const ExchangeGeometry& g,
                                        const std::vector<VectorXd>& zeta,
                                        double reg = 1e-8)
{
  const int M = static_cast<int>(mgs.size());
  const int N = mgs.front().horizon;
  const int nd = g.num_components();
  const int ne = static_cast<int>(g.edges.size());

  int nu = 0;
  std::vector<int> u_offset(M);
  for (int k = 0; k < M; ++k) {
    u_offset[k] = nu;
    nu += mgs[k].num_controls();
  }
  const int dim = nu + nd * N;

  JointProblem jp;
  jp.num_controls = nu;
  jp.L = Eigen::MatrixXd::Zero(M * N, dim);
  jp.c = VectorXd::Zero(M * N);
  for (int k = 0; k < M; ++k) {
    jp.L.block(N * k, u_offset[k], N, mgs[k].num_controls()) = mgs[k].A;
    for (int n = 0; n < N; ++n) {
      jp.c(N * k + n) = mgs[k].b(n) - zeta[k](n);
      jp.L.block(N * k + n, nu + nd * n, 1, nd) = g.a.row(k);
    }
  }

  int mrows = 0;
  for (int k = 0; k < M; ++k) mrows += mgs[k].num_constraints();
  mrows += (nd + ne) * N;
  jp.qp.G = Eigen::MatrixXd::Zero(mrows, dim);
  jp.qp.h = VectorXd::Zero(mrows);
  int row = 0;
  for (int k = 0; k < M; ++k) {
    jp.qp.G.block(row, u_offset[k], mgs[k].num_constraints(), mgs[k].num_controls()) =
        mgs[k].stacked_D();
    jp.qp.h.segment(row, mgs[k].num_constraints()) = mgs[k].stacked_d();
    row += mgs[k].num_constraints();
  }
  for (int n = 0; n < N; ++n) {
    for (int d = 0; d < nd; ++d) {
      jp.qp.G(row, nu + nd * n + d) = -1.0;
      ++row;
    }
    for (int e = 0; e < ne; ++e) {
      jp.qp.G(row, nu + nd * n + 2 * e) = 1.0;
      jp.qp.G(row, nu + nd * n + 2 * e + 1) = 1.0;
      jp.qp.h(row) = 1.0;
      ++row;
    }
  }

  jp.qp.P = 2.0 * jp.L.transpose() * jp.L +
            2.0 * reg * Eigen::MatrixXd::Identity(dim, dim);
  jp.qp.q = 2.0 * jp.L.transpose() * jp.c;
  return jp;
}

/// Residual-norm objective of the joint problem at a solution.
inline double joint_value(const JointProblem& jp, const VectorXd& x)
{
  return (jp.L * x + jp.c).squaredNorm();
}

/// Box-constrained QP oracle: coarse grid scan plus exact projected
/// coordinate descent. Independent of the operator-splitting solver.
inline VectorXd box_qp_oracle(const Eigen::MatrixXd& P, const VectorXd& q,
                              const VectorXd& lo, const VectorXd& hi,
                              int grid_points = 15)
{
  const int n = static_cast<int>(q.size());
  auto value = [&](const VectorXd& x) { return 0.5 * x.dot(P * x) + q.dot(x); };

  VectorXd best = lo;
  double best_val = value(best);
  std::vector<int> idx(n, 0);
  const long total = static_cast<long>(std::pow(grid_points, n));
  for (long it = 0; it < total; ++it) {
    VectorXd x(n);
    long rem = it;
    for (int i = 0; i < n; ++i) {
      x(i) = lo(i) + (hi(i) - lo(i)) * (rem % grid_points) / (grid_points - 1);
      rem /= grid_points;
    }
    const double v = value(x);
    if (v < best_val) {
      best_val = v;
      best = x;
    }
  }

  // exact coordinate minimization with clamping; box constraints are separable
  for (int sweep = 0; sweep < 100000; ++sweep) {
    double change = 0.0;
    for (int i = 0; i < n; ++i) {
      const double g = P.row(i).dot(best) + q(i);
      const double xi = std::clamp(best(i) - g / P(i, i), lo(i), hi(i));
      change = std::max(change, std::abs(xi - best(i)));
      best(i) = xi;
    }
    if (change < 1e-14) break;
  }
  return best;
}

/// A feasible (near-boundary) control for a microgrid model, produced by
/// tracking a random reference.
inline VectorXd random_feasible_control(const MicrogridModel& mg, std::uint64_t seed)
{
  Rng rng(seed);
  VectorXd zeta(mg.horizon);
  for (int n = 0; n < mg.horizon; ++n) zeta(n) = rng.normal(0.0, 3.0);
  return solve_local_central(mg, zeta).u;
}

}  // namespace mgls::testing
