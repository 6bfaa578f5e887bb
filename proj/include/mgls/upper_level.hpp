#pragma once

#include "mgls/model.hpp"
#include "mgls/qp.hpp"
#include "mgls/util.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

namespace mgls {

/// Exchange fractions per directed line component per step. Column n holds
/// delta(n); rows follow the canonical directed-component order: edges
/// sorted by (k, v) with k < v, each contributing (delta_kv, delta_vk)
/// consecutively.
struct ExchangePlan {
  MatrixXd delta;  ///< 2|E| x N, entries in [0,1]

  int num_components() const { return static_cast<int>(delta.rows()); }
  int num_steps() const { return static_cast<int>(delta.cols()); }

  static ExchangePlan zero(int num_edges, int steps)
  {
    ExchangePlan p;
    p.delta = MatrixXd::Zero(2 * num_edges, steps);
    return p;
  }
};

/// Topology encoded as per-MG exchange vectors: a_k' delta(n) is the net
/// power MG k provides (positive) or receives (negative) at step n.
struct ExchangeGeometry {
  int num_mgs = 0;
  std::vector<std::pair<int, int>> edges;
  MatrixXd a;  ///< M x 2|E|, row k = a_k

  int num_components() const { return static_cast<int>(a.cols()); }
};

inline ExchangeGeometry build_exchange_vectors(const NetworkTopology& topo)
{
  ExchangeGeometry g;
  g.num_mgs = topo.num_mgs();
  g.edges = topo.edges;
  const int ne = static_cast<int>(g.edges.size());
  g.a = MatrixXd::Zero(g.num_mgs, 2 * ne);
  for (int e = 0; e < ne; ++e) {
    const auto [k, v] = g.edges[e];
    const double lam = topo.lambda(k, v);
    const double eff = topo.eta(k, v);
    // component 2e: delta_kv (k sends), 2e+1: delta_vk (v sends)
    g.a(k, 2 * e) = lam;
    g.a(v, 2 * e) = -eff * lam;
    g.a(v, 2 * e + 1) = lam;
    g.a(k, 2 * e + 1) = -eff * lam;
  }
  return g;
}

/// Net exchanged power per MG: Delta_k(n) = a_k' delta(n).
inline MatrixXd net_exchange(const ExchangePlan& plan, const ExchangeGeometry& g)
{
  if (plan.num_components() != g.num_components())
    throw std::invalid_argument("net_exchange: plan/geometry mismatch");
  return g.a * plan.delta;  // M x N
}

struct ExchangeStepResult {
  VectorXd delta;  ///< 2|E|
  VectorXd dual;   ///< multipliers, for warm starting
  double cost = 0.0;  ///< sum_k (y_k - a_k' delta)^2
  qp::Status status = qp::Status::solved;
};

struct ExchangeSettings {
  qp::Settings qp{};
  double tie_break = 1e-8;  ///< Tikhonov weight on ||delta||^2
  bool parallel = false;
};

/// Single-step exchange problem: minimize sum_k (y_k - a_k' delta)^2 over
/// delta >= 0, delta_kv + delta_vk <= 1 per edge.
inline ExchangeStepResult solve_exchange_step(const VectorXd& y, const ExchangeGeometry& g,
                                              const ExchangeSettings& s = {},
                                              const ExchangeStepResult* warm = nullptr)
{
  if (y.size() != g.num_mgs)
    throw std::invalid_argument("solve_exchange_step: y length != number of MGs");
  const int nd = g.num_components();
  const int ne = static_cast<int>(g.edges.size());

  ExchangeStepResult r;
  if (nd == 0) {
    r.delta.resize(0);
    r.dual.resize(0);
    r.cost = y.squaredNorm();
    return r;
  }

  qp::Problem p;
  p.P = 2.0 * g.a.transpose() * g.a + 2.0 * s.tie_break * MatrixXd::Identity(nd, nd);
  p.q = -2.0 * g.a.transpose() * y;
  p.G = MatrixXd::Zero(nd + ne, nd);
  p.h = VectorXd::Zero(nd + ne);
  p.G.topRows(nd) = -MatrixXd::Identity(nd, nd);
  for (int e = 0; e < ne; ++e) {
    p.G(nd + e, 2 * e) = 1.0;
    p.G(nd + e, 2 * e + 1) = 1.0;
    p.h(nd + e) = 1.0;
  }

  const VectorXd* x0 = (warm && warm->delta.size() == nd) ? &warm->delta : nullptr;
  const VectorXd* y0 = (warm && warm->dual.size() == nd + ne) ? &warm->dual : nullptr;
  qp::Solution qs = qp::solve(p, s.qp, x0, y0);

  r.delta = qs.x.cwiseMax(0.0);  // strip solver-tolerance negatives
  for (int e = 0; e < ne; ++e) {
    const double sum = r.delta(2 * e) + r.delta(2 * e + 1);
    if (sum > 1.0) r.delta.segment(2 * e, 2) /= sum;
  }
  r.dual = qs.y;
  r.cost = (y - g.a * r.delta).squaredNorm();
  r.status = qs.status;
  return r;
}

struct ExchangeResult {
  ExchangePlan plan;
  double cost = 0.0;  ///< sum over steps of the per-step cost
  std::vector<ExchangeStepResult> steps;
};

/// Full exchange problem over the horizon. Objective and constraints are
/// separable across steps, so this solves N independent small QPs.
inline ExchangeResult solve_exchange(const std::vector<VectorXd>& z_bar,
                                     const std::vector<VectorXd>& zeta,
                                     const ExchangeGeometry& g,
                                     const ExchangeSettings& s = {},
                                     const std::vector<ExchangeStepResult>* warm = nullptr)
{
  const int M = g.num_mgs;
  if (static_cast<int>(z_bar.size()) != M || static_cast<int>(zeta.size()) != M)
    throw std::invalid_argument("solve_exchange: need one profile per MG");
  const int N = static_cast<int>(z_bar.front().size());
  for (int k = 0; k < M; ++k)
    if (z_bar[k].size() != N || zeta[k].size() != N)
      throw std::invalid_argument("solve_exchange: profile length mismatch");

  ExchangeResult res;
  res.plan.delta.resize(g.num_components(), N);
  res.steps.resize(N);
  parallel_for(static_cast<std::size_t>(N), s.parallel, [&](std::size_t n) {
    VectorXd y(M);
    for (int k = 0; k < M; ++k) y(k) = zeta[k](static_cast<int>(n)) - z_bar[k](static_cast<int>(n));
    const ExchangeStepResult* w =
        (warm && warm->size() == static_cast<std::size_t>(N)) ? &(*warm)[n] : nullptr;
    res.steps[n] = solve_exchange_step(y, g, s, w);
    res.plan.delta.col(static_cast<int>(n)) = res.steps[n].delta;
  });
  res.cost = 0.0;
  for (const auto& st : res.steps) res.cost += st.cost;
  return res;
}

}  // namespace mgls
