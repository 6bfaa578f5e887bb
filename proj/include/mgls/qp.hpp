#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mgls::qp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Status { solved, max_iterations, infeasible };

/// minimize 1/2 x'Px + q'x  s.t.  Gx <= h
struct Problem {
  MatrixXd P;
  VectorXd q;
  MatrixXd G;
  VectorXd h;
};

struct Settings {
  double eps_abs = 1e-9;
  double eps_rel = 1e-9;
  int max_iter = 50000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;   ///< over-relaxation
  bool polish = true;
  int check_interval = 25;
};

struct Solution {
  VectorXd x;
  VectorXd y;  ///< inequality multipliers, >= 0
  double value = 0.0;
  Status status = Status::max_iterations;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
};

namespace detail {

inline void check_problem(const Problem& p)
{
  const auto n = p.P.rows();
  if (p.P.cols() != n || p.q.size() != n)
    throw std::invalid_argument("qp: inconsistent P/q dimensions");
  if (p.G.rows() != p.h.size() || (p.G.rows() > 0 && p.G.cols() != n))
    throw std::invalid_argument("qp: inconsistent G/h dimensions");
  if (n > 0 && (p.P - p.P.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw std::invalid_argument("qp: P not symmetric");
  if (!p.P.allFinite() || !p.q.allFinite() || !p.G.allFinite() || !p.h.allFinite())
    throw std::invalid_argument("qp: non-finite data");
}

/// Active-set refinement of an ADMM iterate. Returns true when the refined
/// point is feasible and at least as good as the input.
inline bool polish(const Problem& p, const Settings& s, VectorXd& x, VectorXd& y)
{
  const auto n = p.P.rows();
  const auto m = p.G.rows();
  std::vector<Eigen::Index> active;
  VectorXd slack = p.h - p.G * x;
  for (Eigen::Index i = 0; i < m; ++i)
    if (y(i) > 1e-10 || slack(i) < 1e-7) active.push_back(i);
  const auto na = static_cast<Eigen::Index>(active.size());

  const double delta = 1e-9;
  MatrixXd K = MatrixXd::Zero(n + na, n + na);
  K.topLeftCorner(n, n) = p.P + delta * MatrixXd::Identity(n, n);
  for (Eigen::Index a = 0; a < na; ++a) {
    K.block(n + a, 0, 1, n) = p.G.row(active[a]);
    K.block(0, n + a, n, 1) = p.G.row(active[a]).transpose();
    K(n + a, n + a) = -delta;
  }
  VectorXd rhs(n + na);
  rhs.head(n) = -p.q;
  for (Eigen::Index a = 0; a < na; ++a) rhs(n + a) = p.h(active[a]);

  Eigen::PartialPivLU<MatrixXd> lu(K);
  VectorXd sol = lu.solve(rhs);
  // one step of iterative refinement against the unregularized KKT system
  VectorXd resid(n + na);
  resid.head(n) = -p.q - p.P * sol.head(n);
  for (Eigen::Index a = 0; a < na; ++a) {
    resid.head(n) -= p.G.row(active[a]).transpose() * sol(n + a);
    resid(n + a) = p.h(active[a]) - p.G.row(active[a]).dot(sol.head(n));
  }
  sol += lu.solve(resid);

  VectorXd xp = sol.head(n);
  VectorXd yp = VectorXd::Zero(m);
  for (Eigen::Index a = 0; a < na; ++a) yp(active[a]) = std::max(0.0, sol(n + a));
  if (!xp.allFinite()) return false;

  const double feas_tol = std::max(s.eps_abs, 1e-9);
  if (m > 0 && (p.G * xp - p.h).maxCoeff() > feas_tol) return false;
  auto obj = [&](const VectorXd& v) { return 0.5 * v.dot(p.P * v) + p.q.dot(v); };
  if (obj(xp) > obj(x) + 1e-12 * (1.0 + std::abs(obj(x)))) return false;
  x = xp;
  y = yp;
  return true;
}

}  // namespace detail

/// Operator-splitting (over-relaxed ADMM) solver for dense inequality QPs,
/// with optional warm start and an active-set polish step.
inline Solution solve(const Problem& prob_in, const Settings& s = {},
                      const VectorXd* x0 = nullptr, const VectorXd* y0 = nullptr)
{
  detail::check_problem(prob_in);
  Problem prob = prob_in;
  const auto n = prob.P.rows();
  const auto m = prob.G.rows();

  // stabilize semidefinite objectives
  if (n > 0 && n <= 512) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(prob.P, Eigen::EigenvaluesOnly);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < -1e-8) throw std::invalid_argument("qp: P not positive semidefinite");
    if (min_eig < 1e-12) prob.P += 1e-10 * MatrixXd::Identity(n, n);
  } else if (n > 512) {
    prob.P += 1e-10 * MatrixXd::Identity(n, n);
  }

  // row equilibration: unit inf-norm constraint rows condition the splitting
  // and make the residual thresholds scale-free
  VectorXd rowscale = VectorXd::Ones(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double nrm = prob.G.row(i).cwiseAbs().maxCoeff();
    if (nrm > 0.0) rowscale(i) = 1.0 / std::clamp(nrm, 1e-10, 1e10);
  }
  prob.G = rowscale.asDiagonal() * prob.G;
  prob.h = rowscale.cwiseProduct(prob.h);

  Solution sol;
  sol.x = (x0 && x0->size() == n) ? *x0 : VectorXd::Zero(n);
  sol.y = (y0 && y0->size() == m)
              ? VectorXd(y0->cwiseMax(0.0).cwiseQuotient(rowscale))
              : VectorXd(VectorXd::Zero(m));

  if (m == 0) {
    sol.x = (prob.P + 1e-12 * MatrixXd::Identity(n, n)).ldlt().solve(-prob.q);
    sol.value = 0.5 * sol.x.dot(prob.P * sol.x) + prob.q.dot(sol.x);
    sol.status = Status::solved;
    sol.dual_residual = (prob.P * sol.x + prob.q).cwiseAbs().maxCoeff();
    return sol;
  }

  double rho = s.rho;
  VectorXd z = prob.G * sol.x;
  z = z.cwiseMin(prob.h);

  Eigen::LDLT<MatrixXd> kkt;
  auto refactor = [&]() {
    kkt.compute(prob.P + s.sigma * MatrixXd::Identity(n, n) + rho * prob.G.transpose() * prob.G);
  };
  refactor();

  double stagnation_ref = std::numeric_limits<double>::infinity();
  int iter = 0;
  bool converged = false;
  for (iter = 1; iter <= s.max_iter; ++iter) {
    VectorXd rhs = s.sigma * sol.x - prob.q + prob.G.transpose() * (rho * z - sol.y);
    VectorXd xt = kkt.solve(rhs);
    VectorXd zt = prob.G * xt;
    sol.x = s.alpha * xt + (1.0 - s.alpha) * sol.x;
    VectorXd z_relaxed = s.alpha * zt + (1.0 - s.alpha) * z;
    VectorXd z_new = (z_relaxed + sol.y / rho).cwiseMin(prob.h);
    sol.y += rho * (z_relaxed - z_new);
    z = z_new;

    if (iter % s.check_interval == 0 || iter == s.max_iter) {
      VectorXd Gx = prob.G * sol.x;
      VectorXd Px = prob.P * sol.x;
      VectorXd Gty = prob.G.transpose() * sol.y;
      sol.primal_residual = (Gx - z).cwiseAbs().maxCoeff();
      sol.dual_residual = (Px + prob.q + Gty).cwiseAbs().maxCoeff();
      const double eps_pri = s.eps_abs + s.eps_rel * std::max(Gx.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff());
      const double eps_dua = s.eps_abs + s.eps_rel * std::max({Px.cwiseAbs().maxCoeff(),
                                                               prob.q.cwiseAbs().maxCoeff(),
                                                               Gty.cwiseAbs().maxCoeff()});
      if (sol.primal_residual <= eps_pri && sol.dual_residual <= eps_dua) {
        converged = true;
        break;
      }
      // primal residual stuck far above tolerance -> declare infeasible
      if (iter % 2000 == 0) {
        if (sol.primal_residual > 1e-2 &&
            sol.primal_residual > 0.999 * stagnation_ref) {
          sol.status = Status::infeasible;
          sol.iterations = iter;
          sol.value = 0.5 * sol.x.dot(prob.P * sol.x) + prob.q.dot(sol.x);
          sol.y = rowscale.cwiseProduct(sol.y);
          return sol;
        }
        stagnation_ref = sol.primal_residual;
      }
      // residual balancing
      if (iter % 200 == 0) {
        const double pr = sol.primal_residual / std::max(eps_pri, 1e-300);
        const double dr = sol.dual_residual / std::max(eps_dua, 1e-300);
        if (pr > 10.0 * dr || dr > 10.0 * pr) {
          rho = std::clamp(rho * std::sqrt(pr / std::max(dr, 1e-300)), 1e-6, 1e6);
          refactor();
        }
      }
    }
  }

  sol.iterations = std::min(iter, s.max_iter);
  if (s.polish) detail::polish(prob, s, sol.x, sol.y);
  {
    VectorXd Gx = prob.G * sol.x;
    sol.primal_residual = std::max(0.0, (Gx - prob.h).maxCoeff());
    sol.dual_residual = (prob.P * sol.x + prob.q + prob.G.transpose() * sol.y).cwiseAbs().maxCoeff();
  }
  sol.value = 0.5 * sol.x.dot(prob_in.P * sol.x) + prob_in.q.dot(sol.x);
  sol.status = converged || sol.primal_residual <= 10.0 * s.eps_abs ? Status::solved : Status::max_iterations;
  sol.y = rowscale.cwiseProduct(sol.y);
  return sol;
}

}  // namespace mgls::qp
