#pragma once

#include "mgls/model.hpp"
#include "mgls/qp.hpp"
#include "mgls/util.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mgls {

/// Battery schedule for one microgrid against an effective reference.
struct LocalSolution {
  VectorXd u;          ///< stacked controls, 2 * N * I
  VectorXd z_bar;      ///< aggregated demand A u + b
  double objective = 0.0;  ///< || z_bar - zeta_eff ||^2
  qp::Status status = qp::Status::solved;
  int iterations = 0;
  VectorXd dual;       ///< multipliers of D u <= d, for warm starting
};

struct LowerWarmStart {
  VectorXd u;
  VectorXd dual;
};

struct LowerSettings {
  qp::Settings qp{};          ///< dense path and household subproblems
  int dense_threshold = 400;  ///< controls above which the block-structured path is used
  double tie_break = 1e-8;    ///< Tikhonov weight on ||u||^2
  // block-structured path; the tail of the dual refinement is cut off by
  // default, callers needing certified optimality should tighten these
  double eps_abs = 1e-5;
  double eps_rel = 1e-5;
  int max_iter = 2500;
  double rho = 1.0;
  double sigma = 1e-6;
  double alpha = 1.6;
  bool parallel = false;
};

inline VectorXd aggregate_demand(const std::vector<VectorXd>& demands)
{
  if (demands.empty()) throw std::invalid_argument("aggregate_demand: empty input");
  VectorXd sum = demands.front();
  for (std::size_t i = 1; i < demands.size(); ++i) {
    if (demands[i].size() != sum.size())
      throw std::invalid_argument("aggregate_demand: length mismatch");
    sum += demands[i];
  }
  return sum;
}

namespace detail {

/// Forward projection of a whole schedule into exact feasibility: per step,
/// clamp rates and budget, then cap against the simulated SoC. Moves the
/// controls by at most the solver tolerance.
inline void repair_schedule(const MicrogridModel& mg, VectorXd& u)
{
  const int N = mg.horizon;
  for (int i = 0; i < mg.num_systems(); ++i) {
    const BatteryParams& p = mg.systems[i].params;
    double x = mg.systems[i].soc;
    for (int n = 0; n < N; ++n) {
      ControlStep step{u(2 * N * i + 2 * n), u(2 * N * i + 2 * n + 1)};
      step = repair_control(step, x, p, mg.dt);
      u(2 * N * i + 2 * n) = step.u_plus;
      u(2 * N * i + 2 * n + 1) = step.u_minus;
      x = step_soc(x, step, p, mg.dt);
    }
  }
}

/// ADMM on min ||A u + b - zeta||^2 + tie ||u||^2 s.t. D u <= d for large
/// instances. D is block-diagonal per household and the objective couples
/// households only through the rank-N map A, so the KKT solve reduces to
/// per-household factorizations plus an N x N Woodbury correction.
inline LocalSolution solve_tracking_structured(const MicrogridModel& mg, const VectorXd& zeta,
                                               const LowerSettings& s, const LowerWarmStart* warm)
{
  const int N = mg.horizon;
  const int I = mg.num_systems();
  const int nc = 2 * N;          // controls per household
  const int mc = 8 * N;          // constraints per household
  const int n = mg.num_controls();
  const int m = mg.num_constraints();

  std::vector<MatrixXd> A_blocks(I);
  for (int i = 0; i < I; ++i) A_blocks[i] = mg.A.block(0, nc * i, N, nc);

  // row-equilibrated copies of the constraint blocks (unit inf-norm rows)
  std::vector<Eigen::SparseMatrix<double>> D(I);
  std::vector<VectorXd> d(I), rs(I);
  for (int i = 0; i < I; ++i) {
    VectorXd nrm = VectorXd::Zero(mc);
    for (int c = 0; c < mg.D_blocks[i].outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(mg.D_blocks[i], c); it; ++it)
        nrm(it.row()) = std::max(nrm(it.row()), std::abs(it.value()));
    rs[i] = VectorXd::Ones(mc);
    for (int r = 0; r < mc; ++r)
      if (nrm(r) > 0.0) rs[i](r) = 1.0 / std::clamp(nrm(r), 1e-10, 1e10);
    D[i] = rs[i].asDiagonal() * mg.D_blocks[i];
    d[i] = rs[i].cwiseProduct(mg.d_blocks[i]);
  }

  double rho = s.rho;
  std::vector<Eigen::LDLT<MatrixXd>> B(I);
  std::vector<MatrixXd> W(I);  // B_i^{-1} A_i^T
  Eigen::LDLT<MatrixXd> K;
  auto refactor = [&]() {
    MatrixXd S = MatrixXd::Zero(N, N);
    for (int i = 0; i < I; ++i) {
      MatrixXd Bi = MatrixXd(D[i].transpose() * D[i]) * rho;
      Bi.diagonal().array() += 2.0 * s.tie_break + s.sigma;
      B[i].compute(Bi);
      W[i] = B[i].solve(A_blocks[i].transpose());
      S += A_blocks[i] * W[i];
    }
    K.compute(0.5 * MatrixXd::Identity(N, N) + S);
  };
  refactor();

  VectorXd q(n);
  for (int i = 0; i < I; ++i)
    q.segment(nc * i, nc) = 2.0 * A_blocks[i].transpose() * (mg.b - zeta);

  LocalSolution sol;
  sol.u = (warm && warm->u.size() == n) ? warm->u : VectorXd::Zero(n);
  sol.dual = VectorXd::Zero(m);
  if (warm && warm->dual.size() == m)
    for (int i = 0; i < I; ++i)
      sol.dual.segment(mc * i, mc) =
          warm->dual.segment(mc * i, mc).cwiseMax(0.0).cwiseQuotient(rs[i]);
  VectorXd z(m);
  for (int i = 0; i < I; ++i)
    z.segment(mc * i, mc) = (D[i] * sol.u.segment(nc * i, nc)).cwiseMin(d[i]);

  VectorXd t(n), xt(n), zt(m);
  VectorXd Az = VectorXd::Zero(N);
  bool converged = false;
  int iter = 0;
  for (iter = 1; iter <= s.max_iter; ++iter) {
    Az.setZero();
    parallel_for(static_cast<std::size_t>(I), s.parallel, [&](std::size_t ui) {
      const int i = static_cast<int>(ui);
      VectorXd rhs = s.sigma * sol.u.segment(nc * i, nc) - q.segment(nc * i, nc) +
                     D[i].transpose() *
                         (rho * z.segment(mc * i, mc) - sol.dual.segment(mc * i, mc));
      t.segment(nc * i, nc) = B[i].solve(rhs);
    });
    for (int i = 0; i < I; ++i) Az += A_blocks[i] * t.segment(nc * i, nc);
    VectorXd v = K.solve(Az);
    parallel_for(static_cast<std::size_t>(I), s.parallel, [&](std::size_t ui) {
      const int i = static_cast<int>(ui);
      xt.segment(nc * i, nc) = t.segment(nc * i, nc) - W[i] * v;
      zt.segment(mc * i, mc) = D[i] * xt.segment(nc * i, nc);
    });

    sol.u = s.alpha * xt + (1.0 - s.alpha) * sol.u;
    VectorXd z_relaxed = s.alpha * zt + (1.0 - s.alpha) * z;
    VectorXd z_new(m);
    for (int i = 0; i < I; ++i)
      z_new.segment(mc * i, mc) =
          (z_relaxed.segment(mc * i, mc) + sol.dual.segment(mc * i, mc) / rho)
              .cwiseMin(d[i]);
    sol.dual += rho * (z_relaxed - z_new);
    z = z_new;

    if (iter % 25 == 0 || iter == s.max_iter) {
      VectorXd Du(m), Dty(n);
      VectorXd Au = VectorXd::Zero(N);
      for (int i = 0; i < I; ++i) {
        Du.segment(mc * i, mc) = D[i] * sol.u.segment(nc * i, nc);
        Dty.segment(nc * i, nc) = D[i].transpose() * sol.dual.segment(mc * i, mc);
        Au += A_blocks[i] * sol.u.segment(nc * i, nc);
      }
      VectorXd Pu(n);
      for (int i = 0; i < I; ++i)
        Pu.segment(nc * i, nc) = 2.0 * A_blocks[i].transpose() * Au +
                                 2.0 * s.tie_break * sol.u.segment(nc * i, nc);
      const double r_prim = (Du - z).cwiseAbs().maxCoeff();
      const double r_dual = (Pu + q + Dty).cwiseAbs().maxCoeff();
      const double eps_pri =
          s.eps_abs + s.eps_rel * std::max(Du.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff());
      const double eps_dua = s.eps_abs + s.eps_rel * std::max({Pu.cwiseAbs().maxCoeff(),
                                                               q.cwiseAbs().maxCoeff(),
                                                               Dty.cwiseAbs().maxCoeff()});
      if (r_prim <= eps_pri && r_dual <= eps_dua) {
        converged = true;
        break;
      }
      if (iter % 250 == 0) {
        const double pr = r_prim / std::max(eps_pri, 1e-300);
        const double dr = r_dual / std::max(eps_dua, 1e-300);
        if (pr > 10.0 * dr || dr > 10.0 * pr) {
          rho = std::clamp(rho * std::sqrt(pr / std::max(dr, 1e-300)), 1e-6, 1e6);
          refactor();
        }
      }
    }
  }

  sol.iterations = std::min(iter, s.max_iter);
  sol.status = converged ? qp::Status::solved : qp::Status::max_iterations;
  for (int i = 0; i < I; ++i)
    sol.dual.segment(mc * i, mc) = rs[i].cwiseProduct(sol.dual.segment(mc * i, mc));
  repair_schedule(mg, sol.u);
  sol.z_bar = mg.A * sol.u + mg.b;
  sol.objective = (sol.z_bar - zeta).squaredNorm();
  return sol;
}

}  // namespace detail

/// Solves the microgrid battery-scheduling problem
///   min || A u + b - zeta_eff ||^2  s.t.  D u <= d
/// as a single QP (dense for small instances, block-structured above
/// LowerSettings::dense_threshold controls).
inline LocalSolution solve_local_central(const MicrogridModel& mg, const VectorXd& zeta_eff,
                                         const LowerSettings& s = {},
                                         const LowerWarmStart* warm = nullptr)
{
  if (zeta_eff.size() != mg.horizon)
    throw std::invalid_argument("solve_local_central: reference length != horizon");

  if (mg.num_controls() > s.dense_threshold)
    return detail::solve_tracking_structured(mg, zeta_eff, s, warm);

  qp::Problem p;
  p.P = 2.0 * mg.A.transpose() * mg.A +
        2.0 * s.tie_break * MatrixXd::Identity(mg.num_controls(), mg.num_controls());
  p.q = 2.0 * mg.A.transpose() * (mg.b - zeta_eff);
  p.G = mg.stacked_D();
  p.h = mg.stacked_d();

  const VectorXd* x0 = (warm && warm->u.size() == mg.num_controls()) ? &warm->u : nullptr;
  const VectorXd* y0 = (warm && warm->dual.size() == mg.num_constraints()) ? &warm->dual : nullptr;
  qp::Solution qs = qp::solve(p, s.qp, x0, y0);
  if (qs.status == qp::Status::infeasible)
    throw std::runtime_error("solve_local_central: QP reported infeasible (u = 0 should be feasible)");

  LocalSolution sol;
  sol.u = qs.x;
  sol.dual = qs.y;
  detail::repair_schedule(mg, sol.u);
  sol.z_bar = mg.A * sol.u + mg.b;
  sol.objective = (sol.z_bar - zeta_eff).squaredNorm();
  sol.status = qs.status;
  sol.iterations = qs.iterations;
  return sol;
}

struct SplittingSettings {
  double rho = 1.0;
  int max_iter = 2000;
  double eps_abs = 1e-7;
  double eps_rel = 1e-7;
  bool adapt_rho = true;
  qp::Settings qp{};
  bool parallel = false;
  double tie_break = 1e-8;
};

/// Consensus (sharing) splitting of the same problem across households:
/// each household tracks its share of a common aggregate target, the
/// aggregate update has a closed form. Converges to the central optimum.
inline LocalSolution solve_local_distributed(const MicrogridModel& mg, const VectorXd& zeta_eff,
                                             const SplittingSettings& s = {},
                                             const LowerWarmStart* warm = nullptr)
{
  if (zeta_eff.size() != mg.horizon)
    throw std::invalid_argument("solve_local_distributed: reference length != horizon");

  const int N = mg.horizon;
  const int I = mg.num_systems();
  const int nc = 2 * N;
  const int mc = 8 * N;

  if (I == 1) {  // splitting over one agent is degenerate
    LowerSettings ls;
    ls.qp = s.qp;
    ls.tie_break = s.tie_break;
    return solve_local_central(mg, zeta_eff, ls, warm);
  }

  std::vector<MatrixXd> A_blocks(I), D_dense(I);
  std::vector<VectorXd> b_blocks(I);
  for (int i = 0; i < I; ++i) {
    A_blocks[i] = mg.A.block(0, nc * i, N, nc);
    D_dense[i] = MatrixXd(mg.D_blocks[i]);
    b_blocks[i] = mg.systems[i].net_consumption.head(N);
  }

  std::vector<VectorXd> u_i(I), y_i(I), x_i(I);
  for (int i = 0; i < I; ++i) {
    u_i[i] = (warm && warm->u.size() == mg.num_controls())
                 ? VectorXd(warm->u.segment(nc * i, nc))
                 : VectorXd::Zero(nc);
    y_i[i] = (warm && warm->dual.size() == mg.num_constraints())
                 ? VectorXd(warm->dual.segment(mc * i, mc).cwiseMax(0.0))
                 : VectorXd::Zero(mc);
    x_i[i] = A_blocks[i] * u_i[i] + b_blocks[i];
  }

  double rho = s.rho;
  VectorXd x_avg = VectorXd::Zero(N);
  for (int i = 0; i < I; ++i) x_avg += x_i[i];
  x_avg /= I;
  VectorXd zc = x_avg;               // consensus average demand
  VectorXd uhat = VectorXd::Zero(N); // scaled dual of the consensus constraint

  LocalSolution sol;
  sol.status = qp::Status::max_iterations;
  int iter = 0;
  for (iter = 1; iter <= s.max_iter; ++iter) {
    parallel_for(static_cast<std::size_t>(I), s.parallel, [&](std::size_t ui) {
      const int i = static_cast<int>(ui);
      VectorXd v = x_i[i] - x_avg + zc - uhat;
      qp::Problem p;
      p.P = rho * A_blocks[i].transpose() * A_blocks[i] +
            2.0 * s.tie_break * MatrixXd::Identity(nc, nc);
      p.q = rho * A_blocks[i].transpose() * (b_blocks[i] - v);
      p.G = D_dense[i];
      p.h = mg.d_blocks[i];
      qp::Solution qs = qp::solve(p, s.qp, &u_i[i], &y_i[i]);
      u_i[i] = qs.x;
      y_i[i] = qs.y;
      x_i[i] = A_blocks[i] * u_i[i] + b_blocks[i];
    });

    x_avg.setZero();
    for (int i = 0; i < I; ++i) x_avg += x_i[i];
    x_avg /= I;

    VectorXd zc_prev = zc;
    zc = (2.0 * zeta_eff + rho * (x_avg + uhat)) / (2.0 * I + rho);
    uhat += x_avg - zc;

    const double r_prim = (x_avg - zc).cwiseAbs().maxCoeff();
    const double r_dual = rho * (zc - zc_prev).cwiseAbs().maxCoeff();
    const double eps_pri =
        s.eps_abs + s.eps_rel * std::max(x_avg.cwiseAbs().maxCoeff(), zc.cwiseAbs().maxCoeff());
    const double eps_dua = s.eps_abs + s.eps_rel * rho * uhat.cwiseAbs().maxCoeff();
    if (r_prim <= eps_pri && r_dual <= eps_dua) {
      sol.status = qp::Status::solved;
      break;
    }
    if (s.adapt_rho && iter % 10 == 0) {
      if (r_prim > 10.0 * r_dual) {
        rho *= 2.0;
        uhat /= 2.0;
      } else if (r_dual > 10.0 * r_prim) {
        rho /= 2.0;
        uhat *= 2.0;
      }
    }
  }

  sol.iterations = std::min(iter, s.max_iter);
  sol.u.resize(mg.num_controls());
  sol.dual.resize(mg.num_constraints());
  for (int i = 0; i < I; ++i) {
    sol.u.segment(nc * i, nc) = u_i[i];
    sol.dual.segment(mc * i, mc) = y_i[i];
  }
  detail::repair_schedule(mg, sol.u);
  sol.z_bar = mg.A * sol.u + mg.b;
  sol.objective = (sol.z_bar - zeta_eff).squaredNorm();
  return sol;
}

}  // namespace mgls
