#pragma once

#include "mgls/lower_level.hpp"
#include "mgls/model.hpp"
#include "mgls/upper_level.hpp"
#include "mgls/util.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

namespace mgls {

enum class LowerMode { central, distributed };

struct BidirConfig {
  int ell_max = 40;
  double epsilon = 1e-6;        ///< absolute descent threshold on J
  bool relative_epsilon = false;  ///< interpret epsilon relative to current J
  LowerMode lower_mode = LowerMode::central;
  bool parallel = false;
  LowerSettings lower{};
  SplittingSettings splitting{};
  ExchangeSettings exchange{};
};

/// One iteration of the bidirectional scheme, as logged.
struct IterationRecord {
  double J_before_exchange = 0.0;  ///< J(z^l, delta^{l-1})
  double J_after_exchange = 0.0;   ///< J(z^l, delta^l)
  std::vector<VectorXd> z_bar;     ///< per MG
  std::vector<VectorXd> zeta_eff;  ///< shifted references used by the lower level
  MatrixXd net;                    ///< Delta per MG (rows) per step
  ExchangePlan delta;
  double sum_local_objectives = 0.0;  ///< sum_k g_k(u^l; zeta_k^l), equals J_after
};

struct BidirResult {
  double J0 = 0.0;  ///< battery-free, exchange-free baseline cost
  std::vector<IterationRecord> iterations;
  std::vector<LocalSolution> locals;  ///< final per-MG solutions
  ExchangePlan delta;                 ///< final plan
  std::vector<ExchangeStepResult> exchange_steps;  ///< final per-step solutions
  double final_cost = 0.0;
  bool converged = false;  ///< stopped on the descent threshold
};

/// Warm start for a whole bidirectional run (e.g. the previous MPC step's
/// solution, shifted by one step).
struct BidirWarmStart {
  std::vector<LowerWarmStart> lower;            ///< per MG
  std::vector<ExchangeStepResult> exchange;     ///< per step
};

/// J(z, delta) = sum_k || zeta_k - (z_k + Delta_k) ||^2.
inline double evaluate_overall_objective(const std::vector<VectorXd>& z_bar,
                                         const ExchangePlan& plan,
                                         const std::vector<VectorXd>& zeta,
                                         const ExchangeGeometry& g)
{
  const int M = g.num_mgs;
  if (static_cast<int>(z_bar.size()) != M || static_cast<int>(zeta.size()) != M)
    throw std::invalid_argument("evaluate_overall_objective: need one profile per MG");
  MatrixXd net = net_exchange(plan, g);
  double J = 0.0;
  for (int k = 0; k < M; ++k)
    J += (zeta[k] - z_bar[k] - net.row(k).transpose()).squaredNorm();
  return J;
}

namespace detail {

inline LocalSolution solve_lower(const MicrogridModel& mg, const VectorXd& zeta_eff,
                                 const BidirConfig& cfg, const LowerWarmStart* warm)
{
  if (cfg.lower_mode == LowerMode::distributed)
    return solve_local_distributed(mg, zeta_eff, cfg.splitting, warm);
  return solve_local_central(mg, zeta_eff, cfg.lower, warm);
}

}  // namespace detail

/// Iterative bidirectional scheme: alternate per-MG battery re-optimisation
/// against shifted references with the network exchange solve, until the
/// cost improvement drops below epsilon or ell_max iterations are logged.
///
/// Each lower/upper re-solve keeps the incumbent solution whenever the
/// numerical solver returns a worse objective, so the logged costs are
/// non-increasing by construction, matching the exact scheme.
inline BidirResult run_bidirectional(const std::vector<MicrogridModel>& mgs,
                                     const ExchangeGeometry& geometry,
                                     const std::vector<VectorXd>& zeta,
                                     const BidirConfig& cfg,
                                     const BidirWarmStart* warm = nullptr)
{
  const int M = static_cast<int>(mgs.size());
  if (M == 0) throw std::invalid_argument("run_bidirectional: no microgrids");
  if (geometry.num_mgs != M || static_cast<int>(zeta.size()) != M)
    throw std::invalid_argument("run_bidirectional: geometry/reference size mismatch");
  const int N = mgs.front().horizon;
  for (const auto& mg : mgs)
    if (mg.horizon != N) throw std::invalid_argument("run_bidirectional: mixed horizons");
  for (const auto& z : zeta)
    if (z.size() != N) throw std::invalid_argument("run_bidirectional: reference length != horizon");
  if (cfg.ell_max < 1 || !(cfg.epsilon >= 0.0))
    throw std::invalid_argument("run_bidirectional: need ell_max >= 1 and epsilon >= 0");

  BidirConfig c = cfg;
  c.lower.parallel = c.lower.parallel || c.parallel;
  c.splitting.parallel = c.splitting.parallel || c.parallel;
  c.exchange.parallel = c.exchange.parallel || c.parallel;

  BidirResult res;
  res.J0 = 0.0;
  for (int k = 0; k < M; ++k) res.J0 += (mgs[k].b - zeta[k]).squaredNorm();

  // lower level against the raw references
  res.locals.resize(M);
  std::vector<VectorXd> zeta_eff = zeta;
  parallel_for(static_cast<std::size_t>(M), c.parallel, [&](std::size_t k) {
    const LowerWarmStart* w =
        (warm && warm->lower.size() == static_cast<std::size_t>(M)) ? &warm->lower[k] : nullptr;
    res.locals[k] = detail::solve_lower(mgs[k], zeta_eff[k], c, w);
    const double at_rest = (mgs[k].b - zeta_eff[k]).squaredNorm();
    if (res.locals[k].objective > at_rest) {  // u = 0 beats the numerical argmin
      res.locals[k].u = VectorXd::Zero(mgs[k].num_controls());
      res.locals[k].dual = VectorXd::Zero(mgs[k].num_constraints());
      res.locals[k].z_bar = mgs[k].b;
      res.locals[k].objective = at_rest;
    }
  });

  auto z_profiles = [&]() {
    std::vector<VectorXd> z(M);
    for (int k = 0; k < M; ++k) z[k] = res.locals[k].z_bar;
    return z;
  };

  const int ne = static_cast<int>(geometry.edges.size());
  ExchangePlan plan_prev = ExchangePlan::zero(ne, N);

  // first exchange solve
  std::vector<VectorXd> z = z_profiles();
  double J_before = evaluate_overall_objective(z, plan_prev, zeta, geometry);
  ExchangeResult ex;
  if (ne > 0) {
    const std::vector<ExchangeStepResult>* we =
        (warm && warm->exchange.size() == static_cast<std::size_t>(N)) ? &warm->exchange : nullptr;
    ex = solve_exchange(z, zeta, geometry, c.exchange, we);
  } else {
    ex.plan = ExchangePlan::zero(0, N);
    ex.steps.assign(N, ExchangeStepResult{});
    ex.cost = J_before;
  }
  double J_after = evaluate_overall_objective(z, ex.plan, zeta, geometry);
  if (J_after > J_before) {  // keep the no-exchange incumbent
    ex.plan = plan_prev;
    J_after = J_before;
  }

  auto log_iteration = [&](double before, double after) {
    IterationRecord rec;
    rec.J_before_exchange = before;
    rec.J_after_exchange = after;
    rec.z_bar = z;
    rec.delta = ex.plan;
    rec.net = net_exchange(ex.plan, geometry);
    rec.zeta_eff = zeta_eff;
    rec.sum_local_objectives = 0.0;
    std::vector<VectorXd> zl(M);
    for (int k = 0; k < M; ++k) {
      zl[k] = zeta[k] - rec.net.row(k).transpose();
      rec.sum_local_objectives += (z[k] - zl[k]).squaredNorm();
    }
    res.iterations.push_back(std::move(rec));
  };
  log_iteration(J_before, J_after);

  double J_prev = res.J0;
  double J_curr = J_after;

  auto threshold = [&](double J) {
    return c.relative_epsilon ? c.epsilon * std::max(1.0, std::abs(J)) : c.epsilon;
  };

  // with no lines the references never shift; the scheme is done after one pass
  while (ne > 0 && static_cast<int>(res.iterations.size()) < c.ell_max &&
         J_prev - J_curr > threshold(J_prev)) {
    MatrixXd net = net_exchange(ex.plan, geometry);
    for (int k = 0; k < M; ++k) zeta_eff[k] = zeta[k] - net.row(k).transpose();

    parallel_for(static_cast<std::size_t>(M), c.parallel, [&](std::size_t k) {
      LowerWarmStart w{res.locals[k].u, res.locals[k].dual};
      LocalSolution cand = detail::solve_lower(mgs[k], zeta_eff[k], c, &w);
      const double incumbent = (res.locals[k].z_bar - zeta_eff[k]).squaredNorm();
      if (cand.objective <= incumbent)
        res.locals[k] = std::move(cand);
      else {  // numerical argmin worse than incumbent: keep incumbent
        res.locals[k].objective = incumbent;
      }
    });
    z = z_profiles();
    plan_prev = ex.plan;
    J_before = evaluate_overall_objective(z, plan_prev, zeta, geometry);

    ExchangeResult cand = solve_exchange(z, zeta, geometry, c.exchange, &ex.steps);
    double J_cand = evaluate_overall_objective(z, cand.plan, zeta, geometry);
    if (J_cand <= J_before) {
      ex = std::move(cand);
      J_after = J_cand;
    } else {
      J_after = J_before;
    }

    log_iteration(J_before, J_after);
    J_prev = J_curr;
    J_curr = J_after;
  }

  res.converged = !(J_prev - J_curr > threshold(J_prev)) || ne == 0;
  res.delta = ex.plan;
  res.exchange_steps = ex.steps;
  res.final_cost = J_curr;
  return res;
}

}  // namespace mgls
