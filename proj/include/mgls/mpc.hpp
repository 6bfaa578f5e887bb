#pragma once

#include "mgls/coordinator.hpp"
#include "mgls/data_io.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace mgls {

/// Household SoCs as the plant evolves.
struct PlantState {
  std::vector<std::vector<double>> soc;  ///< per MG per household, kWh
  int step = 0;
};

struct ClosedLoopStep {
  int k = 0;
  std::vector<VectorXd> applied_u;  ///< per MG: (u+, u-) per household
  VectorXd applied_delta;           ///< first exchange step, 2|E|
  VectorXd realized_demand;         ///< per MG, after exchange, actual consumption
  double stage_cost = 0.0;
  int inner_iterations = 0;
  bool feasible = true;
  double inner_baseline = 0.0;  ///< J0 of the inner bidirectional solve
};

struct ClosedLoopResult {
  std::vector<ClosedLoopStep> steps;
  std::vector<PlantState> states;  ///< state before each step, plus the final one
  BidirResult first_solve;         ///< the k = 0 inner solve
};

struct MpcConfig {
  BidirConfig bidir{};
  bool warm_start_shift = true;  ///< seed step k from step k-1's shifted plan
  bool repair_first_control = true;  ///< project the applied impulse into exact feasibility
};

namespace detail {

inline BidirWarmStart shift_warm_start(const BidirResult& prev, const std::vector<MicrogridModel>& mgs)
{
  BidirWarmStart warm;
  warm.lower.resize(mgs.size());
  for (std::size_t m = 0; m < mgs.size(); ++m) {
    const int N = mgs[m].horizon;
    const int I = mgs[m].num_systems();
    const VectorXd& u = prev.locals[m].u;
    const VectorXd& y = prev.locals[m].dual;
    VectorXd us = VectorXd::Zero(2 * N * I), ys = VectorXd::Zero(8 * N * I);
    if (u.size() == us.size() && y.size() == ys.size()) {
      for (int i = 0; i < I; ++i)
        for (int n = 0; n + 1 < N; ++n) {
          us.segment(2 * N * i + 2 * n, 2) = u.segment(2 * N * i + 2 * (n + 1), 2);
          ys.segment(8 * N * i + 8 * n, 8) = y.segment(8 * N * i + 8 * (n + 1), 8);
        }
    }
    warm.lower[m] = LowerWarmStart{std::move(us), std::move(ys)};
  }
  warm.exchange = prev.exchange_steps;
  if (!warm.exchange.empty()) {
    warm.exchange.erase(warm.exchange.begin());
    warm.exchange.push_back(warm.exchange.empty() ? ExchangeStepResult{} : warm.exchange.back());
  }
  return warm;
}

}  // namespace detail

/// Receding-horizon closed loop: per step measure SoCs, rebuild the models
/// from the predicted window, run the bidirectional scheme, apply only the
/// first control impulse and exchange step to the plant (which consumes the
/// ACTUAL net-consumption series), then shift.
inline ClosedLoopResult run_mpc(const Scenario& sc, int sim_steps, const MpcConfig& cfg = {})
{
  const int M = sc.num_mgs();
  const int N = sc.horizon;
  if (sim_steps < 1) throw std::invalid_argument("run_mpc: sim_steps must be >= 1");
  if (sim_steps - 1 + N > sc.series_length())
    throw std::invalid_argument("run_mpc: series do not cover sim_steps + horizon");

  const ExchangeGeometry geometry = build_exchange_vectors(sc.topology);

  ClosedLoopResult res;
  PlantState plant;
  plant.soc = sc.initial_soc;
  plant.step = 0;
  res.states.push_back(plant);

  BidirWarmStart warm;
  bool have_warm = false;

  for (int k = 0; k < sim_steps; ++k) {
    std::vector<MicrogridModel> mgs = models_at(sc, k, plant.soc);
    std::vector<VectorXd> zeta = reference_window(sc, k);

    BidirResult inner =
        run_bidirectional(mgs, geometry, zeta, cfg.bidir, have_warm ? &warm : nullptr);
    if (k == 0) res.first_solve = inner;

    ClosedLoopStep rec;
    rec.k = k;
    rec.inner_iterations = static_cast<int>(inner.iterations.size());
    rec.inner_baseline = inner.J0;
    rec.applied_delta = geometry.num_components() > 0
                            ? VectorXd(inner.delta.delta.col(0))
                            : VectorXd(0);
    rec.applied_u.resize(M);
    rec.realized_demand.resize(M);

    const VectorXd net0 = geometry.num_components() > 0
                              ? VectorXd(geometry.a * rec.applied_delta)
                              : VectorXd(VectorXd::Zero(M));

    double stage_cost = 0.0;
    for (int m = 0; m < M; ++m) {
      const int I = mgs[m].num_systems();
      rec.applied_u[m].resize(2 * I);
      double z_actual = 0.0;
      for (int i = 0; i < I; ++i) {
        ControlStep u{inner.locals[m].u(2 * N * i), inner.locals[m].u(2 * N * i + 1)};
        const BatteryParams& p = sc.batteries[m][i];
        if (cfg.repair_first_control) u = repair_control(u, plant.soc[m][i], p, sc.dt);
        rec.applied_u[m](2 * i) = u.u_plus;
        rec.applied_u[m](2 * i + 1) = u.u_minus;

        const double w_actual = sc.actual[m][i](k);
        z_actual += demand_step(w_actual, u, p.gamma);
        const double next_soc = step_soc(plant.soc[m][i], u, p, sc.dt);
        if (next_soc < -1e-12 || next_soc > p.capacity + 1e-12) rec.feasible = false;
        // measurement clamp: float rounding may leave the state a ulp outside
        plant.soc[m][i] = std::clamp(next_soc, 0.0, p.capacity);
      }
      const double z_after_exchange = z_actual + net0(m);
      rec.realized_demand(m) = z_after_exchange;
      const double ref = zeta[m](0);
      stage_cost += (ref - z_after_exchange) * (ref - z_after_exchange);
    }
    rec.stage_cost = stage_cost;
    res.steps.push_back(std::move(rec));

    plant.step = k + 1;
    res.states.push_back(plant);

    if (cfg.warm_start_shift) {
      warm = detail::shift_warm_start(inner, mgs);
      have_warm = true;
    }
  }
  return res;
}

}  // namespace mgls
