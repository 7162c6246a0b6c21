/**
 * @brief Constrained l1 minimization (Dantzig-selector form)
 *
 *     minimize |beta|_1  subject to  |S beta - d|_inf <= lambda
 *
 * solved as a linear program by a Mehrotra predictor-corrector primal-dual
 * interior-point method. The LP keeps beta free and bounds it by an auxiliary
 * vector u:
 *
 *     minimize 1'u  s.t.  beta - u <= 0,  -beta - u <= 0,
 *                         S beta <= lambda + d,  -S beta <= lambda - d.
 *
 * After eliminating the slack, multiplier and u blocks, each Newton step needs
 * one p x p SPD solve with H = diag(4 w1 w2 / (w1 + w2)) + S diag(w3 + w4) S.
 * When S is supplied with a low-rank factor (S = F'F, F r x p, r << p) the
 * system is solved by conjugate gradients preconditioned with the diagonal
 * part; H is a diagonal plus a rank-r term, so each solve costs O(r^2 p).
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "linalg.hpp"

namespace sparsa {

struct L1Problem {
  SymMatrix gram; ///< S_n, p x p
  Vec target;     ///< d = xbar1 - xbar2
  double lambda = 0.0;
  /// Optional F with F'F == gram. Enables the low-rank Newton solve.
  std::optional<Matrix> gram_factor;

  void validate() const {
    if (gram.dim() != target.size()) {
      throw InvalidInput("L1Problem: gram and target dimensions differ");
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
      throw InvalidInput("L1Problem: lambda must be finite and nonnegative");
    }
    if (gram_factor && gram_factor->cols() != gram.dim()) {
      throw InvalidInput("L1Problem: gram factor has wrong column count");
    }
  }
};

enum class SolveStatus { Optimal, IterationLimit, Infeasible };

inline const char* to_string(SolveStatus s) {
  switch (s) {
  case SolveStatus::Optimal:
    return "optimal";
  case SolveStatus::IterationLimit:
    return "iteration_limit";
  case SolveStatus::Infeasible:
    return "infeasible";
  }
  return "unknown";
}

struct L1Solution {
  Vec beta;
  double objective = 0.0;      ///< |beta|_1
  double infeasibility = 0.0;  ///< max(0, |S beta - d|_inf - lambda)
  double duality_gap = 0.0;    ///< objective minus a certified dual lower bound
  Vec dual;                    ///< multiplier v on S beta - d (dual feasible, |S v|_inf <= 1)
  int iterations = 0;
  SolveStatus status = SolveStatus::Optimal;
};

struct SolverOptions {
  double gap_tolerance = 1e-6;         ///< relative to 1 + objective
  double feasibility_tolerance = 1e-8; ///< relative to 1 + |d|_inf
  int max_iterations = 200;
  /// Use the low-rank path when a factor with rows < ratio * p is available.
  double low_rank_ratio = 0.5;
};

struct KktDiagnostics {
  double primal_infeasibility = 0.0;
  double complementarity_residual = 0.0;
  double stationarity_residual = 0.0;

  bool certifies(double tol = 1e-6) const {
    return primal_infeasibility <= tol && complementarity_residual <= tol &&
           stationarity_residual <= tol;
  }
};

namespace detail {

/// Primal-dual interior-point state; kept between solves for warm starts.
struct IpmIterate {
  Vec beta, u; // p each
  Vec s, y;    // 4p each, blocks [abs+, abs-, upper, lower]
};

/// Applies S and solves the reduced Newton system.
class GramOperator {
public:
  GramOperator(const L1Problem& problem, const SolverOptions& options) : s_(problem.gram.matrix()) {
    const Index p = problem.gram.dim();
    if (problem.gram_factor &&
        static_cast<double>(problem.gram_factor->rows()) < options.low_rank_ratio * static_cast<double>(p)) {
      factor_ = &*problem.gram_factor;
    }
  }

  bool low_rank() const { return factor_ != nullptr; }

  Vec apply(const Vec& v) const {
    if (factor_) {
      return factor_->transpose() * (*factor_ * v);
    }
    return s_ * v;
  }

  /// Prepares H = diag(dg) + S diag(dw) S.
  void factorize(const Vec& dg, const Vec& dw) {
    dg_ = dg;
    dw_ = dw;
    if (factor_) {
      factorize_low_rank();
    } else {
      factorize_dense();
    }
  }

  Vec solve(const Vec& rhs) const {
    if (!factor_) {
      return dense_.solve(rhs);
    }
    return conjugate_gradient(rhs);
  }

private:
  void factorize_dense() {
    const Index p = s_.rows();
    Matrix t = s_ * dw_.cwiseSqrt().asDiagonal();
    Matrix h = Matrix::Zero(p, p);
    h.selfadjointView<Eigen::Lower>().rankUpdate(t);
    h.diagonal() += dg_;
    dense_.compute(h);
    double jitter = 1e-14 * std::max(1.0, h.diagonal().maxCoeff());
    while (dense_.info() != Eigen::Success && jitter < 1e6) {
      h.diagonal().array() += jitter;
      dense_.compute(h);
      jitter *= 100.0;
    }
  }

  /// Preconditioning with diag(dg) leaves identity plus a rank-r term.
  void factorize_low_rank() {
    precond_ = dg_.cwiseInverse();
  }

  /// H = diag + rank-r term, so preconditioned CG needs about r + 1 steps.
  Vec conjugate_gradient(const Vec& rhs) const {
    const Index p = rhs.size();
    const Index limit = 4 * (factor_->rows() + 1) + 20;
    const double target = 1e-14 * rhs.norm();
    Vec x = Vec::Zero(p);
    Vec r = rhs;
    Vec z = precond_.cwiseProduct(r);
    Vec d = z;
    double rz = r.dot(z);
    for (Index k = 0; k < limit && r.norm() > target; ++k) {
      const Vec hd = apply_h(d);
      const double dhd = d.dot(hd);
      if (!(dhd > 0.0)) {
        break;
      }
      const double alpha = rz / dhd;
      x += alpha * d;
      r -= alpha * hd;
      z = precond_.cwiseProduct(r);
      const double rz_next = r.dot(z);
      d = z + (rz_next / rz) * d;
      rz = rz_next;
    }
    return x;
  }

  Vec apply_h(const Vec& x) const { return dg_.cwiseProduct(x) + apply(dw_.cwiseProduct(apply(x))); }

  const Matrix& s_;
  const Matrix* factor_ = nullptr;
  Vec dg_, dw_;
  Eigen::LLT<Matrix> dense_;
  Vec precond_;
};

/// Largest alpha in (0, 1] keeping v + alpha dv >= 0.
inline double max_step(const Vec& v, const Vec& dv) {
  double alpha = 1.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (dv(i) < 0.0) {
      alpha = std::min(alpha, -v(i) / dv(i));
    }
  }
  return alpha;
}

inline double inf_norm(const Vec& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

/// Dual lower bound -d'v - lambda |v|_1 after scaling v into |S v|_inf <= 1.
inline double dual_bound(const GramOperator& op, const Vec& target, double lambda, Vec& v) {
  const double sv = inf_norm(op.apply(v));
  if (sv > 1.0) {
    v /= sv;
  }
  return -target.dot(v) - lambda * v.lpNorm<1>();
}

/**
 * Snaps an interior-point answer to the LP vertex it approaches: solves
 * S_{T,J} beta_J = d_T + lambda sign(r_T) over the support J and the rows T
 * carrying dual weight. Kept only when square, sign-consistent, feasible and
 * no worse in objective.
 */
inline void polish(const L1Problem& problem, const GramOperator& op, const SolverOptions& options, L1Solution& sol) {
  const Index p = sol.beta.size();
  const double bmax = inf_norm(sol.beta);
  const double vmax = inf_norm(sol.dual);
  if (bmax == 0.0 || vmax == 0.0) return;
  const Vec r = op.apply(sol.beta) - problem.target;
  IndexSet support, rows;
  for (Index j = 0; j < p; ++j) {
    if (std::abs(sol.beta(j)) > 1e-6 * bmax) support.push_back(j);
    if (std::abs(sol.dual(j)) > 1e-6 * vmax) rows.push_back(j);
  }
  if (support.size() != rows.size() || support.empty()) return;
  const auto k = static_cast<Index>(support.size());
  const Matrix& s = problem.gram.matrix();
  Matrix a(k, k);
  Vec rhs(k);
  for (Index i = 0; i < k; ++i) {
    const Index t = rows[static_cast<std::size_t>(i)];
    rhs(i) = problem.target(t) + problem.lambda * (r(t) > 0.0 ? 1.0 : -1.0);
    for (Index j = 0; j < k; ++j) a(i, j) = s(t, support[static_cast<std::size_t>(j)]);
  }
  const Eigen::FullPivLU<Matrix> lu(a);
  if (!lu.isInvertible()) return;
  const Vec bj = lu.solve(rhs);
  Vec beta = Vec::Zero(p);
  for (Index j = 0; j < k; ++j) {
    const Index c = support[static_cast<std::size_t>(j)];
    if (bj(j) * sol.beta(c) <= 0.0) return;
    beta(c) = bj(j);
  }
  const double scale = 1.0 + inf_norm(problem.target);
  const double infeasibility = std::max(0.0, inf_norm(op.apply(beta) - problem.target) - problem.lambda);
  const double objective = beta.lpNorm<1>();
  if (infeasibility > 1e-12 * scale || objective > sol.objective + options.gap_tolerance * (1.0 + sol.objective)) {
    return;
  }
  sol.beta = std::move(beta);
  sol.objective = objective;
  sol.infeasibility = infeasibility;
  Vec v = sol.dual;
  sol.duality_gap = std::max(0.0, objective - dual_bound(op, problem.target, problem.lambda, v));
}

inline IpmIterate cold_start(const L1Problem& problem) {
  const Index p = problem.target.size();
  const double dmax = inf_norm(problem.target);
  const double meandiag = std::max(problem.gram.matrix().diagonal().mean(), 1e-300);
  const double u0 = dmax / meandiag;
  const double floor = 0.1 * (dmax + problem.lambda);
  IpmIterate it;
  it.beta = Vec::Zero(p);
  it.u = Vec::Constant(p, u0);
  it.s.resize(4 * p);
  it.y.resize(4 * p);
  it.s.segment(0, p).setConstant(u0);
  it.s.segment(p, p).setConstant(u0);
  it.s.segment(2 * p, p) = (problem.lambda + problem.target.array()).max(floor).matrix();
  it.s.segment(3 * p, p) = (problem.lambda - problem.target.array()).max(floor).matrix();
  // Dual feasible start: y1 = y2 = 1/2 and y3 = y4 give c + G'y = 0.
  it.y.segment(0, 2 * p).setConstant(0.5);
  it.y.segment(2 * p, 2 * p).setConstant(1.0 / meandiag);
  return it;
}

/// Re-centers a previous iterate for a new lambda: slacks are recomputed from
/// the new right-hand side and both slacks and multipliers are floored.
inline IpmIterate warm_start(const L1Problem& problem, const GramOperator& op, IpmIterate it) {
  const Index p = problem.target.size();
  const double dmax = inf_norm(problem.target);
  const double meandiag = std::max(problem.gram.matrix().diagonal().mean(), 1e-300);
  const Vec sb = op.apply(it.beta);
  const double sfloor = 1e-2 * (dmax + problem.lambda);
  const double ufloor = 1e-2 * dmax / meandiag;
  it.u = it.u.cwiseMax(it.beta.cwiseAbs() + Vec::Constant(p, ufloor));
  it.s.segment(0, p) = it.u - it.beta;
  it.s.segment(p, p) = it.u + it.beta;
  it.s.segment(2 * p, p) = (problem.lambda + problem.target.array() - sb.array()).max(sfloor).matrix();
  it.s.segment(3 * p, p) = (problem.lambda - problem.target.array() + sb.array()).max(sfloor).matrix();
  it.y.segment(0, 2 * p) = it.y.segment(0, 2 * p).cwiseMax(1e-2);
  it.y.segment(2 * p, 2 * p) = it.y.segment(2 * p, 2 * p).cwiseMax(1e-2 / meandiag);
  return it;
}

inline L1Solution zero_solution(const L1Problem& problem) {
  L1Solution sol;
  const Index p = problem.target.size();
  sol.beta = Vec::Zero(p);
  sol.dual = Vec::Zero(p);
  sol.infeasibility = std::max(0.0, inf_norm(problem.target) - problem.lambda);
  sol.status = SolveStatus::Optimal;
  return sol;
}

inline std::pair<L1Solution, IpmIterate> solve_ipm(const L1Problem& problem, const SolverOptions& options,
                                                   const IpmIterate* warm) {
  problem.validate();
  const Index p = problem.target.size();
  const Index m = 4 * p;
  const double dmax = inf_norm(problem.target);
  const double lambda = problem.lambda;

  if (lambda >= dmax) {
    IpmIterate it;
    it.beta = Vec::Zero(p);
    return {zero_solution(problem), it};
  }

  GramOperator op(problem, options);
  IpmIterate it = warm ? warm_start(problem, op, *warm) : cold_start(problem);
  Vec& beta = it.beta;
  Vec& u = it.u;
  Vec& s = it.s;
  Vec& y = it.y;

  const double hnorm = lambda + dmax;
  Vec rp(m), rc(m), g(m), gdz(m), ds(m), dy(m), w(m);
  Vec rd_beta(p), rd_u(p);
  const double meandiag = std::max(problem.gram.matrix().diagonal().mean(), 1e-300);
  int iter = 0;
  bool infeasible = false;

  auto residuals = [&]() {
    const Vec sb = op.apply(beta);
    rp.segment(0, p) = beta - u + s.segment(0, p);
    rp.segment(p, p) = -beta - u + s.segment(p, p);
    rp.segment(2 * p, p) = sb + s.segment(2 * p, p) - (Vec::Constant(p, lambda) + problem.target);
    rp.segment(3 * p, p) = -sb + s.segment(3 * p, p) - (Vec::Constant(p, lambda) - problem.target);
    const Vec v = y.segment(2 * p, p) - y.segment(3 * p, p);
    rd_beta = y.segment(0, p) - y.segment(p, p) + op.apply(v);
    rd_u = Vec::Ones(p) - y.segment(0, p) - y.segment(p, p);
  };

  // Solves the Newton system for the current factorization and right-hand
  // side (rp, rd, rc), filling (dbeta, du, ds, dy).
  Vec dbeta(p), du(p), a(p), bdiff(p);
  auto newton = [&]() {
    g = (y.cwiseProduct(rp) - rc).cwiseQuotient(s);
    const Vec g1 = g.segment(0, p), g2 = g.segment(p, p);
    const Vec g34 = g.segment(2 * p, p) - g.segment(3 * p, p);
    const Vec rbeta = -rd_beta - (g1 - g2 + op.apply(g34));
    const Vec ru = -rd_u + g1 + g2;
    dbeta = op.solve(rbeta - bdiff.cwiseProduct(ru).cwiseQuotient(a));
    du = (ru - bdiff.cwiseProduct(dbeta)).cwiseQuotient(a);
    const Vec sdb = op.apply(dbeta);
    gdz.segment(0, p) = dbeta - du;
    gdz.segment(p, p) = -dbeta - du;
    gdz.segment(2 * p, p) = sdb;
    gdz.segment(3 * p, p) = -sdb;
    ds = -rp - gdz;
    dy = w.cwiseProduct(gdz) + g;
  };

  for (; iter < options.max_iterations; ++iter) {
    residuals();
    const double mu = s.dot(y) / static_cast<double>(m);
    const double pobj = u.sum();
    const double dobj = -(lambda * (y.segment(2 * p, p) + y.segment(3 * p, p)).sum() +
                          problem.target.dot(y.segment(2 * p, p) - y.segment(3 * p, p)));
    const bool pfeas = inf_norm(rp) <= options.feasibility_tolerance * (1.0 + hnorm);
    const bool dfeas = std::max(inf_norm(rd_beta), inf_norm(rd_u)) <= options.feasibility_tolerance * 2.0;
    const bool gap_ok = std::abs(pobj - dobj) <= 0.1 * options.gap_tolerance * (1.0 + std::abs(pobj));
    if (pfeas && dfeas && gap_ok) {
      break;
    }
    // Farkas ray: S v ~ 0 with -d'v - lambda |v|_1 > 0 proves the constraint
    // set empty (possible when S is singular and d leaves its range).
    {
      const Vec v = y.segment(2 * p, p) - y.segment(3 * p, p);
      const double vnorm = v.lpNorm<1>();
      if (vnorm > 1e6 / meandiag) {
        const double ray = (-problem.target.dot(v) - lambda * vnorm) / vnorm;
        const double sv = inf_norm(op.apply(v)) / vnorm;
        if (ray > 1e-9 * (1.0 + dmax) && sv * u.lpNorm<Eigen::Infinity>() < 1e-3 * ray) {
          infeasible = true;
          break;
        }
      }
    }

    w = y.cwiseQuotient(s);
    const Vec w1 = w.segment(0, p), w2 = w.segment(p, p);
    a = w1 + w2;
    bdiff = w2 - w1;
    const Vec dg = 4.0 * w1.cwiseProduct(w2).cwiseQuotient(a);
    const Vec dw = w.segment(2 * p, p) + w.segment(3 * p, p);
    op.factorize(dg, dw);

    // Predictor.
    rc = s.cwiseProduct(y);
    newton();
    const double ap_aff = max_step(s, ds);
    const double ad_aff = max_step(y, dy);
    const double mu_aff = (s + ap_aff * ds).dot(y + ad_aff * dy) / static_cast<double>(m);
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    // Corrector.
    rc = s.cwiseProduct(y) + ds.cwiseProduct(dy) - Vec::Constant(m, sigma * mu);
    newton();
    const double eta = std::max(0.9, 1.0 - mu);
    const double ap = std::min(1.0, eta * max_step(s, ds));
    const double ad = std::min(1.0, eta * max_step(y, dy));
    beta += ap * dbeta;
    u += ap * du;
    s += ap * ds;
    y += ad * dy;
  }

  L1Solution sol;
  sol.beta = beta;
  sol.iterations = iter;
  sol.objective = beta.lpNorm<1>();
  sol.infeasibility = std::max(0.0, inf_norm(op.apply(beta) - problem.target) - lambda);
  sol.dual = y.segment(2 * p, p) - y.segment(3 * p, p);
  sol.duality_gap = sol.objective - dual_bound(op, problem.target, lambda, sol.dual);
  const bool certified = sol.infeasibility <= options.feasibility_tolerance * (1.0 + dmax) &&
                         sol.duality_gap <= options.gap_tolerance * (1.0 + sol.objective);
  sol.status = certified    ? SolveStatus::Optimal
               : infeasible ? SolveStatus::Infeasible
                            : SolveStatus::IterationLimit;
  if (sol.status == SolveStatus::Optimal) {
    polish(problem, op, options, sol);
  }
  return {std::move(sol), std::move(it)};
}

} // namespace detail

/// Solves one l1 program from a cold start. Deterministic.
inline L1Solution solve(const L1Problem& problem, const SolverOptions& options = {}) {
  return detail::solve_ipm(problem, options, nullptr).first;
}

/**
 * @brief Solves along a strictly descending lambda grid, warm-starting each
 * solve from the previous iterate. A warm solve that fails to certify is
 * redone from a cold start.
 */
inline std::vector<L1Solution> solve_path(const SymMatrix& gram, const Vec& target,
                                          const std::vector<double>& lambdas,
                                          const SolverOptions& options = {},
                                          const std::optional<Matrix>& gram_factor = std::nullopt) {
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    if (!(lambdas[k] >= 0.0)) {
      throw InvalidInput("solve_path: lambdas must be nonnegative");
    }
    if (k > 0 && !(lambdas[k] < lambdas[k - 1])) {
      throw InvalidInput("solve_path: lambdas must be strictly descending");
    }
  }
  std::vector<L1Solution> out;
  out.reserve(lambdas.size());
  L1Problem problem{gram, target, 0.0, gram_factor};
  std::optional<detail::IpmIterate> previous;
  for (double lambda : lambdas) {
    problem.lambda = lambda;
    const bool can_warm = previous && previous->s.size() > 0;
    auto [sol, it] = detail::solve_ipm(problem, options, can_warm ? &*previous : nullptr);
    if (can_warm && sol.status != SolveStatus::Optimal) {
      auto cold = detail::solve_ipm(problem, options, nullptr);
      cold.first.iterations += sol.iterations;
      sol = std::move(cold.first);
      it = std::move(cold.second);
    }
    out.push_back(std::move(sol));
    previous = std::move(it);
  }
  return out;
}

/**
 * @brief Optimality certificate for a candidate beta.
 *
 * Rebuilds the constraint multiplier v from beta alone: v is supported on the
 * active rows (|S beta - d|_i == lambda) and solves S_{J,A} v_A = -sign(beta_J)
 * on the support J in the least-squares sense. Stationarity also requires
 * |S v|_inf <= 1 off the support; complementarity requires v_i to carry the
 * sign of the active residual.
 */
inline KktDiagnostics check_kkt(const L1Problem& problem, const Vec& beta) {
  problem.validate();
  if (beta.size() != problem.target.size()) {
    throw InvalidInput("check_kkt: beta has wrong dimension");
  }
  const Index p = beta.size();
  const double lambda = problem.lambda;
  const Matrix& s = problem.gram.matrix();
  const Vec r = s * beta - problem.target;

  KktDiagnostics out;
  out.primal_infeasibility = std::max(0.0, detail::inf_norm(r) - lambda);

  const double bmax = detail::inf_norm(beta);
  const double support_tol = 1e-7 * std::max(1.0, bmax);
  const double active_tol = 1e-6 * (1.0 + lambda);
  IndexSet support, off_support, active;
  for (Index j = 0; j < p; ++j) {
    (std::abs(beta(j)) > support_tol ? support : off_support).push_back(j);
    if (std::abs(r(j)) >= lambda - active_tol) {
      active.push_back(j);
    }
  }
  if (support.empty()) {
    // v = 0 satisfies every condition once beta = 0 is feasible.
    return out;
  }
  if (active.empty()) {
    out.stationarity_residual = 1.0;
    return out;
  }

  const auto ns = static_cast<Index>(support.size());
  const auto na = static_cast<Index>(active.size());
  Matrix sja(ns, na);
  Vec sign(ns);
  for (Index a = 0; a < ns; ++a) {
    sign(a) = beta(support[static_cast<std::size_t>(a)]) > 0.0 ? 1.0 : -1.0;
    for (Index b = 0; b < na; ++b) {
      sja(a, b) = s(support[static_cast<std::size_t>(a)], active[static_cast<std::size_t>(b)]);
    }
  }
  const Vec va = sja.completeOrthogonalDecomposition().solve(-sign);
  Vec v = Vec::Zero(p);
  for (Index b = 0; b < na; ++b) {
    v(active[static_cast<std::size_t>(b)]) = va(b);
  }
  const Vec sv = s * v;

  double stat = detail::inf_norm(sja * va + sign);
  for (Index j : off_support) {
    stat = std::max(stat, std::abs(sv(j)) - 1.0);
  }
  out.stationarity_residual = std::max(0.0, stat);

  double comp = 0.0;
  for (Index i : active) {
    const double rs = r(i) > 0.0 ? 1.0 : -1.0;
    comp = std::max(comp, std::max(0.0, -v(i) * rs));
    comp = std::max(comp, std::abs(v(i)) * std::max(0.0, lambda - std::abs(r(i))));
  }
  out.complementarity_residual = comp;
  return out;
}

} // namespace sparsa
