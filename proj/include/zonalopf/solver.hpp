#pragma once

// Primal-dual interior-point solver for the per-timestep NLP: log barrier on
// bounds and inequality slacks, damped Newton on the perturbed KKT system via
// a sparse symmetric indefinite factorization with inertia correction, and an
// l1 exact-penalty merit line search with second-order corrections. Curvature
// comes from the problem's exact constraint Hessian when supplied (plus the
// exact diagonal of the objective), with a multiplier-weighted Gauss-Newton
// surrogate as the fallback.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "zonalopf/problem.hpp"

namespace zonalopf {

struct SolverOptions {
  double kkt_tol = 1e-6;
  int max_iter = 200;
  double mu0 = 0.1;        // initial barrier parameter (cold start)
  double mu_warm = 1e-4;   // restarted barrier parameter (dual warm start)
  double tau = 0.995;      // fraction-to-boundary factor
  double delta_min = 1e-8; // first nonzero Hessian regularization
  bool verbose = false;
  std::function<void(const std::string&)> log;  // defaults to stderr
};

enum class SolveStatus {
  kConverged,
  kIterationLimit,
  kInfeasibleDetected,
  kNumericalFailure
};

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kConverged: return "converged";
    case SolveStatus::kIterationLimit: return "iteration-limit";
    case SolveStatus::kInfeasibleDetected: return "infeasible-detected";
    case SolveStatus::kNumericalFailure: return "numerical-failure";
  }
  return "?";
}

struct IterationRecord {
  int iter = 0;
  double mu = 0.0;
  double f = 0.0;
  double eq_inf = 0.0;    // ||g||_inf
  double ineq_viol = 0.0; // max(0, max h)
  double alpha = 0.0;     // accepted primal step
};

struct SolveOutcome {
  SolveStatus status = SolveStatus::kNumericalFailure;
  Eigen::VectorXd x;
  Eigen::VectorXd lambda_eq;   // equality-row duals
  Eigen::VectorXd dual_ineq;   // inequality duals (>= 0)
  Eigen::VectorXd dual_lb, dual_ub;  // bound duals (>= 0, 0 where absent)
  int iterations = 0;
  double kkt_residual = 0.0;   // scaled KKT error at the final point
  std::vector<IterationRecord> trace;
};

// Default cold-start point: flat voltage profile, mid-range injections.
inline Eigen::VectorXd flat_start(const NlpProblem& p) {
  Eigen::VectorXd x(p.num_vars);
  for (int i = 0; i < p.num_vars; ++i) {
    bool has_lb = p.lb[i] > -kUnbounded;
    bool has_ub = p.ub[i] < kUnbounded;
    if (has_lb && has_ub)
      x[i] = 0.5 * (p.lb[i] + p.ub[i]);
    else if (has_lb)
      x[i] = p.lb[i] + 1.0;
    else if (has_ub)
      x[i] = p.ub[i] - 1.0;
    else
      x[i] = 0.0;
  }
  if (p.data && p.layout.n == p.num_vars) {
    const auto& L = p.layout;
    auto set_clamped = [&](int idx, double v) {
      x[idx] = std::clamp(v, p.lb[idx], p.ub[idx]);
    };
    for (int i = 0; i < L.num_ac; ++i) {
      set_clamped(L.theta(i), 0.0);
      set_clamped(L.vm(i), 1.0);
    }
    for (int i = 0; i < L.num_dc; ++i) set_clamped(L.vdc(i), 1.0);
    for (int i = 0; i < L.num_ren; ++i) set_clamped(L.gamma(i), 1.0);
    for (int i = 0; i < L.num_conv; ++i) {
      set_clamped(L.conv_p(i), 0.0);
      set_clamped(L.conv_q(i), 0.0);
      set_clamped(L.conv_pdc(i), 0.0);
    }
    if (L.zonal)
      for (int z = 0; z < L.num_zone; ++z) {
        set_clamped(L.zone_pg(z), 0.0);
        set_clamped(L.zone_pn(z), 0.0);
      }
  }
  // Push anything resting on a bound one percent inside so the first barrier
  // iteration is not glued to it.
  for (int i = 0; i < p.num_vars; ++i) {
    bool has_lb = p.lb[i] > -kUnbounded;
    bool has_ub = p.ub[i] < kUnbounded;
    if (has_lb && has_ub) {
      double m = 0.01 * (p.ub[i] - p.lb[i]);
      if (p.lb[i] + m < p.ub[i] - m)
        x[i] = std::clamp(x[i], p.lb[i] + m, p.ub[i] - m);
    } else if (has_lb) {
      x[i] = std::max(x[i], p.lb[i] + 0.01 * std::max(1.0, std::fabs(p.lb[i])));
    } else if (has_ub) {
      x[i] = std::min(x[i], p.ub[i] - 0.01 * std::max(1.0, std::fabs(p.ub[i])));
    }
  }
  return x;
}

// Reuse the previous timestep's point when the layout still matches, pushed
// strictly inside the bounds; otherwise fall back to a flat start.
inline Eigen::VectorXd warm_start(const SolveOutcome& prev, const NlpProblem& p) {
  if (prev.x.size() != p.num_vars) return flat_start(p);
  Eigen::VectorXd x = prev.x;
  for (int i = 0; i < p.num_vars; ++i) {
    bool has_lb = p.lb[i] > -kUnbounded;
    bool has_ub = p.ub[i] < kUnbounded;
    if (has_lb && has_ub) {
      double range = p.ub[i] - p.lb[i];
      double m = 1e-4 * range;
      if (p.lb[i] + m > p.ub[i] - m)
        x[i] = 0.5 * (p.lb[i] + p.ub[i]);
      else
        x[i] = std::clamp(x[i], p.lb[i] + m, p.ub[i] - m);
    } else if (has_lb) {
      x[i] = std::max(x[i], p.lb[i] + 1e-4 * std::max(1.0, std::fabs(p.lb[i])));
    } else if (has_ub) {
      x[i] = std::min(x[i], p.ub[i] - 1e-4 * std::max(1.0, std::fabs(p.ub[i])));
    }
  }
  return x;
}

namespace detail {

// Dense Jacobian from a sparse pattern + value filler, duplicates summed.
inline Eigen::MatrixXd dense_jacobian(
    int rows, int cols, const std::vector<std::pair<int, int>>& pattern,
    const std::function<void(const Eigen::VectorXd&, double*)>& values,
    const Eigen::VectorXd& x) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(rows, cols);
  if (pattern.empty()) return J;
  std::vector<double> v(pattern.size());
  values(x, v.data());
  for (size_t k = 0; k < pattern.size(); ++k)
    J(pattern[k].first, pattern[k].second) += v[k];
  return J;
}

}  // namespace detail

// Worst relative error between analytic derivatives and central differences
// over the dense objective gradient and both constraint Jacobians.
inline double check_derivatives(const NlpProblem& p, const Eigen::VectorXd& x,
                                double eps = 1e-6) {
  double worst = 0.0;
  auto rel = [](double a, double b) {
    return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
  };

  Eigen::VectorXd grad = p.objective_gradient(x);
  for (int j = 0; j < p.num_vars; ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += eps;
    xm[j] -= eps;
    double fd = (p.objective(xp) - p.objective(xm)) / (2.0 * eps);
    worst = std::max(worst, rel(grad[j], fd));
  }

  struct Block {
    int rows;
    const std::vector<std::pair<int, int>>* pattern;
    const std::function<void(const Eigen::VectorXd&, double*)>* values;
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>* eval;
  };
  std::vector<Block> blocks;
  if (p.num_eq > 0)
    blocks.push_back({p.num_eq, &p.eq_jacobian_pattern, &p.eq_jacobian_values,
                      &p.equalities});
  if (p.num_ineq > 0)
    blocks.push_back({p.num_ineq, &p.ineq_jacobian_pattern,
                      &p.ineq_jacobian_values, &p.inequalities});
  for (const auto& blk : blocks) {
    Eigen::MatrixXd J =
        detail::dense_jacobian(blk.rows, p.num_vars, *blk.pattern, *blk.values, x);
    for (int j = 0; j < p.num_vars; ++j) {
      Eigen::VectorXd xp = x, xm = x;
      xp[j] += eps;
      xm[j] -= eps;
      Eigen::VectorXd col = ((*blk.eval)(xp) - (*blk.eval)(xm)) / (2.0 * eps);
      for (int r = 0; r < blk.rows; ++r)
        worst = std::max(worst, rel(J(r, j), col[r]));
    }
  }
  return worst;
}

inline SolveOutcome solve(const NlpProblem& p, const Eigen::VectorXd& x0,
                          const SolverOptions& opts = {},
                          const SolveOutcome* warm = nullptr) {
  using Eigen::VectorXd;
  const int n = p.num_vars;
  const int me_user = p.num_eq;
  const int mi = p.num_ineq;

  auto logline = [&](const std::string& s) {
    if (opts.log)
      opts.log(s);
    else if (opts.verbose)
      std::fprintf(stderr, "%s\n", s.c_str());
  };

  // Bound bookkeeping; variables with lb == ub become internal equalities.
  std::vector<char> has_lb(n), has_ub(n), fixed(n);
  std::vector<int> fixed_vars;
  for (int i = 0; i < n; ++i) {
    bool bl = p.lb[i] > -kUnbounded;
    bool bu = p.ub[i] < kUnbounded;
    if (bl && bu && p.ub[i] - p.lb[i] <= 1e-12) {
      fixed[i] = 1;
      fixed_vars.push_back(i);
      bl = bu = false;
    }
    has_lb[i] = bl;
    has_ub[i] = bu;
  }
  const int me = me_user + static_cast<int>(fixed_vars.size());

  // Strictly interior start.
  VectorXd x = x0;
  for (int i = 0; i < n; ++i) {
    if (fixed[i]) {
      x[i] = 0.5 * (p.lb[i] + p.ub[i]);
      continue;
    }
    if (has_lb[i] && has_ub[i]) {
      double m = std::min(1e-4 * (p.ub[i] - p.lb[i]), 0.25 * (p.ub[i] - p.lb[i]));
      m = std::max(m, 1e-12);
      x[i] = std::clamp(x[i], p.lb[i] + m, p.ub[i] - m);
    } else if (has_lb[i]) {
      x[i] = std::max(x[i], p.lb[i] + 1e-4 * std::max(1.0, std::fabs(p.lb[i])));
    } else if (has_ub[i]) {
      x[i] = std::min(x[i], p.ub[i] - 1e-4 * std::max(1.0, std::fabs(p.ub[i])));
    }
  }

  auto eval_g_all = [&](const VectorXd& xx) {
    VectorXd g(me);
    if (me_user > 0) g.head(me_user) = p.equalities(xx);
    for (size_t k = 0; k < fixed_vars.size(); ++k)
      g[me_user + (int)k] =
          xx[fixed_vars[k]] - 0.5 * (p.lb[fixed_vars[k]] + p.ub[fixed_vars[k]]);
    return g;
  };

  SolveOutcome out;
  out.x = x;
  out.status = SolveStatus::kIterationLimit;  // overwritten on any break

  // Slacks and duals: s covers -h, duals start at 1.
  VectorXd h = mi > 0 ? p.inequalities(x) : VectorXd(0);
  VectorXd g = eval_g_all(x);
  double f = p.objective(x);
  if (!std::isfinite(f) || !g.allFinite() || (mi > 0 && !h.allFinite())) {
    out.status = SolveStatus::kNumericalFailure;
    return out;
  }
  VectorXd s(mi);
  for (int i = 0; i < mi; ++i) s[i] = std::max(-h[i], 1e-4);
  VectorXd y = VectorXd::Ones(me);
  VectorXd w = VectorXd::Ones(mi);
  VectorXd zl = VectorXd::Zero(n), zu = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (has_lb[i]) zl[i] = 1.0;
    if (has_ub[i]) zu[i] = 1.0;
  }

  double mu = opts.mu0;
  const double mu_floor = 0.1 * opts.kkt_tol;
  // Dual warm start: restart the barrier low and reuse the multipliers of a
  // previous, structurally identical solve. The equality duals carry the
  // economics and transfer as-is. Bound and slack duals are clamped so every
  // complementarity product starts within a fixed band of the restarted mu:
  // the interior re-entry margin on the primal otherwise turns the previous
  // active set into huge off-center products the line search must bleed off
  // one crumb at a time, while a cold restart at mu0 would instead shove
  // that active set violently off its bounds.
  if (warm && warm->lambda_eq.size() == me_user &&
      warm->dual_ineq.size() == mi && warm->dual_lb.size() == n &&
      warm->dual_ub.size() == n) {
    mu = std::max(opts.mu_warm, 100.0 * mu_floor);
    const double band = 100.0;
    auto centered = [&](double dual, double dist) {
      return std::clamp(dual, mu / (band * dist), band * mu / dist);
    };
    y.head(me_user) = warm->lambda_eq;
    for (int i = 0; i < mi; ++i) w[i] = centered(warm->dual_ineq[i], s[i]);
    for (int i = 0; i < n; ++i) {
      if (has_lb[i]) zl[i] = centered(warm->dual_lb[i], x[i] - p.lb[i]);
      if (has_ub[i]) zu[i] = centered(warm->dual_ub[i], p.ub[i] - x[i]);
    }
  }
  double nu = 1.0;          // merit penalty weight
  double last_delta = 0.0;  // Hessian regularization that last worked
  const double delta_c = 1e-11;
  int ls_failures = 0;
  int stall_count = 0;
  double best_primal_inf = kInfinity;
  int stalled_above_tol = 0;

  std::vector<double> jac_eq_vals(p.eq_jacobian_pattern.size());
  std::vector<double> jac_ineq_vals(p.ineq_jacobian_pattern.size());

  // Natural ordering is deliberate: it eliminates the primal block (positive
  // diagonal) before the constraint rows, so the trailing pivots are the
  // well-scaled negative Schur complement. Fill-reducing orderings may pivot
  // on the tiny -delta_c constraint diagonal first, which this unpivoted
  // factorization cannot survive numerically.
  const int N = n + me + mi;
  Eigen::SparseMatrix<double> K(N, N);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower,
                        Eigen::NaturalOrdering<int>>
      ldlt;
  bool pattern_analyzed = false;
  std::vector<Eigen::Triplet<double>> trips;

  VectorXd gf(n);
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    // Fresh evaluation at the current iterate.
    f = p.objective(x);
    gf = p.objective_gradient(x);
    g = eval_g_all(x);
    if (mi > 0) h = p.inequalities(x);
    if (p.eq_jacobian_values && !p.eq_jacobian_pattern.empty())
      p.eq_jacobian_values(x, jac_eq_vals.data());
    if (p.ineq_jacobian_values && !p.ineq_jacobian_pattern.empty())
      p.ineq_jacobian_values(x, jac_ineq_vals.data());
    if (!std::isfinite(f) || !gf.allFinite() || !g.allFinite() ||
        (mi > 0 && !h.allFinite())) {
      out.status = SolveStatus::kNumericalFailure;
      break;
    }

    // Scaled KKT errors (Ipopt-style dual scaling).
    VectorXd r_stat = gf;
    for (size_t k = 0; k < p.eq_jacobian_pattern.size(); ++k)
      r_stat[p.eq_jacobian_pattern[k].second] +=
          jac_eq_vals[k] * y[p.eq_jacobian_pattern[k].first];
    for (size_t k = 0; k < fixed_vars.size(); ++k)
      r_stat[fixed_vars[k]] += y[me_user + (int)k];
    for (size_t k = 0; k < p.ineq_jacobian_pattern.size(); ++k)
      r_stat[p.ineq_jacobian_pattern[k].second] +=
          jac_ineq_vals[k] * w[p.ineq_jacobian_pattern[k].first];
    r_stat -= zl;
    r_stat += zu;

    double dual_l1 = y.lpNorm<1>() + w.lpNorm<1>();
    int dual_count = me + mi;
    double comp_l1 = w.lpNorm<1>();
    int comp_count = mi;
    for (int i = 0; i < n; ++i) {
      if (has_lb[i]) { dual_l1 += zl[i]; comp_l1 += zl[i]; ++dual_count; ++comp_count; }
      if (has_ub[i]) { dual_l1 += zu[i]; comp_l1 += zu[i]; ++dual_count; ++comp_count; }
    }
    double s_d = dual_count > 0
                     ? std::max(100.0, dual_l1 / dual_count) / 100.0
                     : 1.0;
    double s_c = comp_count > 0
                     ? std::max(100.0, comp_l1 / comp_count) / 100.0
                     : 1.0;

    double feas_inf = g.size() > 0 ? g.lpNorm<Eigen::Infinity>() : 0.0;
    for (int i = 0; i < mi; ++i)
      feas_inf = std::max(feas_inf, std::fabs(h[i] + s[i]));
    double h_viol = 0.0;
    for (int i = 0; i < mi; ++i) h_viol = std::max(h_viol, h[i]);

    auto comp_inf = [&](double mu_val) {
      double c = 0.0;
      for (int i = 0; i < mi; ++i) c = std::max(c, std::fabs(s[i] * w[i] - mu_val));
      for (int i = 0; i < n; ++i) {
        if (has_lb[i]) c = std::max(c, std::fabs((x[i] - p.lb[i]) * zl[i] - mu_val));
        if (has_ub[i]) c = std::max(c, std::fabs((p.ub[i] - x[i]) * zu[i] - mu_val));
      }
      return c;
    };
    double stat_scaled = r_stat.lpNorm<Eigen::Infinity>() / s_d;
    double e0 = std::max({stat_scaled, feas_inf, comp_inf(0.0) / s_c});
    out.kkt_residual = e0;

    if (e0 <= opts.kkt_tol) {
      out.status = SolveStatus::kConverged;
      break;
    }

    // Monotone barrier reduction, cascading while the mu-residual allows.
    // The barrier sub-problem only needs solving to a multiple of mu;
    // demanding more forces vanishing steps against the active bounds.
    while (mu > mu_floor &&
           std::max({stat_scaled, feas_inf, comp_inf(mu) / s_c}) <= 10.0 * mu)
      mu = std::max(mu_floor, 0.2 * mu);

    // Infeasibility heuristic: primal residual refuses to fall while the
    // barrier is already tiny.
    double primal_inf = feas_inf;
    if (primal_inf < best_primal_inf * 0.999) {
      best_primal_inf = primal_inf;
      stall_count = 0;
    } else {
      ++stall_count;
    }
    // Declare infeasibility when the primal residual refuses to fall: either
    // with the barrier already tiny, or after a long flat stretch at any mu.
    if (mu < 1e-6 && primal_inf > 1e-4)
      ++stalled_above_tol;
    else
      stalled_above_tol = 0;
    if (stalled_above_tol >= 30 ||
        (stall_count >= 50 && primal_inf > 1e-4)) {
      out.status = SolveStatus::kInfeasibleDetected;
      break;
    }

    // Assemble the KKT matrix. Hessian of the Lagrangian: objective diagonal
    // + barrier terms + constraint curvature (exact when the problem supplies
    // it, Gauss-Newton surrogate otherwise) + delta.
    trips.clear();
    VectorXd hdiag = VectorXd::Zero(n);
    if (p.objective_hessian_diag.size() == n) hdiag = p.objective_hessian_diag;
    for (int i = 0; i < n; ++i) {
      if (has_lb[i]) hdiag[i] += zl[i] / (x[i] - p.lb[i]);
      if (has_ub[i]) hdiag[i] += zu[i] / (p.ub[i] - x[i]);
    }

    if (p.constraint_hessian) {
      // Exact constraint curvature contracted with the current multipliers.
      // Internal fixed-variable rows are linear and contribute nothing.
      VectorXd y_user = y.head(me_user);
      p.constraint_hessian(x, y_user, w, trips);
    } else {
      // Gauss-Newton surrogate from the Jacobians. Weight each row by
      // multiplier over row norm: for power-flow rows the gradient and
      // curvature share the same scale (both ~ susceptance), so
      // |y_r|/||grad c_r|| * (grad c_r)(grad c_r)^T reproduces the size of
      // the y_r * hess(c_r) term the model would otherwise miss entirely.
      VectorXd row_norm2 = VectorXd::Zero(me);
      for (size_t k = 0; k < p.eq_jacobian_pattern.size(); ++k)
        row_norm2[p.eq_jacobian_pattern[k].first] +=
            jac_eq_vals[k] * jac_eq_vals[k];
      std::vector<std::vector<int>> row_entries(me);
      for (size_t k = 0; k < p.eq_jacobian_pattern.size(); ++k)
        row_entries[p.eq_jacobian_pattern[k].first].push_back((int)k);
      for (int r = 0; r < me; ++r) {
        if (row_entries[r].empty()) continue;
        double wgt =
            (std::fabs(y[r]) + 1.0) / std::max(1.0, std::sqrt(row_norm2[r]));
        for (int ka : row_entries[r])
          for (int kb : row_entries[r]) {
            int ia = p.eq_jacobian_pattern[ka].second;
            int ib = p.eq_jacobian_pattern[kb].second;
            if (ia <= ib)
              trips.emplace_back(ia, ib,
                                 wgt * jac_eq_vals[ka] * jac_eq_vals[kb]);
          }
      }
      // Inequality rows get the same treatment, weighted by the slack
      // multiplier so curvature shows up as a limit becomes active.
      VectorXd irow_norm2 = VectorXd::Zero(mi);
      for (size_t k = 0; k < p.ineq_jacobian_pattern.size(); ++k)
        irow_norm2[p.ineq_jacobian_pattern[k].first] +=
            jac_ineq_vals[k] * jac_ineq_vals[k];
      std::vector<std::vector<int>> irow_entries(mi);
      for (size_t k = 0; k < p.ineq_jacobian_pattern.size(); ++k)
        irow_entries[p.ineq_jacobian_pattern[k].first].push_back((int)k);
      for (int r = 0; r < mi; ++r) {
        if (irow_entries[r].empty()) continue;
        double wgt = w[r] / std::max(1.0, std::sqrt(irow_norm2[r]));
        for (int ka : irow_entries[r])
          for (int kb : irow_entries[r]) {
            int ia = p.ineq_jacobian_pattern[ka].second;
            int ib = p.ineq_jacobian_pattern[kb].second;
            if (ia <= ib)
              trips.emplace_back(ia, ib,
                                 wgt * jac_ineq_vals[ka] * jac_ineq_vals[kb]);
          }
      }
    }
    // A unit diagonal on pinned variables keeps their KKT block well posed.
    for (size_t k = 0; k < fixed_vars.size(); ++k)
      trips.emplace_back(fixed_vars[k], fixed_vars[k], 1.0);
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, hdiag[i]);
    for (size_t k = 0; k < p.eq_jacobian_pattern.size(); ++k) {
      int r = n + p.eq_jacobian_pattern[k].first;
      int c = p.eq_jacobian_pattern[k].second;
      trips.emplace_back(c, r, jac_eq_vals[k]);
    }
    for (size_t k = 0; k < fixed_vars.size(); ++k)
      trips.emplace_back(fixed_vars[k], n + me_user + (int)k, 1.0);
    for (int r = 0; r < me; ++r) trips.emplace_back(n + r, n + r, -delta_c);
    for (size_t k = 0; k < p.ineq_jacobian_pattern.size(); ++k) {
      int r = n + me + p.ineq_jacobian_pattern[k].first;
      int c = p.ineq_jacobian_pattern[k].second;
      trips.emplace_back(c, r, jac_ineq_vals[k]);
    }
    for (int i = 0; i < mi; ++i)
      trips.emplace_back(n + me + i, n + me + i, -(s[i] / w[i] + delta_c));

    // Right-hand side.
    VectorXd rhs(N);
    {
      VectorXd rx = -gf;
      for (size_t k = 0; k < p.eq_jacobian_pattern.size(); ++k)
        rx[p.eq_jacobian_pattern[k].second] -=
            jac_eq_vals[k] * y[p.eq_jacobian_pattern[k].first];
      for (size_t k = 0; k < fixed_vars.size(); ++k)
        rx[fixed_vars[k]] -= y[me_user + (int)k];
      for (size_t k = 0; k < p.ineq_jacobian_pattern.size(); ++k)
        rx[p.ineq_jacobian_pattern[k].second] -=
            jac_ineq_vals[k] * w[p.ineq_jacobian_pattern[k].first];
      for (int i = 0; i < n; ++i) {
        if (has_lb[i]) rx[i] += mu / (x[i] - p.lb[i]);
        if (has_ub[i]) rx[i] -= mu / (p.ub[i] - x[i]);
      }
      rhs.head(n) = rx;
      rhs.segment(n, me) = -g;
      for (int i = 0; i < mi; ++i) rhs[n + me + i] = -h[i] - mu / w[i];
    }

    // Factor with escalating primal regularization until inertia is right.
    // Successful deltas decay between iterations so regularization can
    // retreat once the region is benign again.
    VectorXd step;
    bool factored = false;
    double kkt_lin_res = 0.0;
    double delta_try =
        last_delta / 4.0 >= opts.delta_min ? last_delta / 4.0 : 0.0;
    for (int attempt = 0; attempt < 24; ++attempt) {
      std::vector<Eigen::Triplet<double>> all = trips;
      if (delta_try > 0.0)
        for (int i = 0; i < n; ++i) all.emplace_back(i, i, delta_try);
      K.setZero();
      K.setFromTriplets(all.begin(), all.end());
      Eigen::SparseMatrix<double> Ksym = K.selfadjointView<Eigen::Upper>();
      if (!pattern_analyzed) {
        ldlt.analyzePattern(Ksym);
        pattern_analyzed = true;
      }
      ldlt.factorize(Ksym);
      bool ok = ldlt.info() == Eigen::Success;
      int pos = 0, neg = 0, zero = 0;
      if (ok) {
        const auto& D = ldlt.vectorD();
        for (int i = 0; i < D.size(); ++i) {
          double dv = D[i];
          if (!std::isfinite(dv) || std::fabs(dv) < 1e-300)
            ++zero;
          else if (dv > 0)
            ++pos;
          else
            ++neg;
        }
        ok = zero == 0 && pos == n && neg == me + mi;
      }
      if (ok) {
        step = ldlt.solve(rhs);
        ok = step.allFinite();
        if (ok) {
          // One round of iterative refinement keeps the step accurate when
          // the system is poorly scaled.
          VectorXd resid = rhs - Ksym * step;
          double rnorm = resid.lpNorm<Eigen::Infinity>();
          if (rnorm > 1e-10 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>())) {
            VectorXd corr = ldlt.solve(resid);
            if (corr.allFinite()) step += corr;
          }
          kkt_lin_res = (rhs - Ksym * step).lpNorm<Eigen::Infinity>();
        }
      }
      if (ok) {
        factored = true;
        last_delta = delta_try;
        break;
      }
      if (delta_try == 0.0)
        delta_try = opts.delta_min;
      else
        delta_try *= 10.0;
      if (delta_try > 1e12) break;
    }
    if (!factored) {
      out.status = SolveStatus::kNumericalFailure;
      break;
    }

    VectorXd dx = step.head(n);
    VectorXd dy = step.segment(n, me);
    VectorXd dw = step.tail(mi);
    VectorXd ds(mi), dzl = VectorXd::Zero(n), dzu = VectorXd::Zero(n);
    // Slack step recovered from the linearized complementarity rows.
    for (int i = 0; i < mi; ++i)
      ds[i] = mu / w[i] - s[i] - (s[i] / w[i]) * dw[i];
    for (int i = 0; i < n; ++i) {
      if (has_lb[i])
        dzl[i] = mu / (x[i] - p.lb[i]) - zl[i] - (zl[i] / (x[i] - p.lb[i])) * dx[i];
      if (has_ub[i])
        dzu[i] = mu / (p.ub[i] - x[i]) - zu[i] + (zu[i] / (p.ub[i] - x[i])) * dx[i];
    }

    // Fraction-to-boundary step limits.
    double tau_k = std::max(opts.tau, 1.0 - mu);
    double a_primal = 1.0, a_dual = 1.0;
    int cap_ix = -1;        // debug: coordinate binding the primal cap
    double cap_dist = 0.0;  // debug: its distance to the bound
    auto cap_primal = [&](double cand, int ix, double dist) {
      if (cand < a_primal) {
        a_primal = cand;
        cap_ix = ix;
        cap_dist = dist;
      }
    };
    for (int i = 0; i < mi; ++i) {
      if (ds[i] < 0.0) cap_primal(-tau_k * s[i] / ds[i], n + i, s[i]);
      if (dw[i] < 0.0) a_dual = std::min(a_dual, -tau_k * w[i] / dw[i]);
    }
    for (int i = 0; i < n; ++i) {
      if (has_lb[i] && dx[i] < 0.0)
        cap_primal(-tau_k * (x[i] - p.lb[i]) / dx[i], i, x[i] - p.lb[i]);
      if (has_ub[i] && dx[i] > 0.0)
        cap_primal(tau_k * (p.ub[i] - x[i]) / dx[i], i, p.ub[i] - x[i]);
      if (has_lb[i] && dzl[i] < 0.0) a_dual = std::min(a_dual, -tau_k * zl[i] / dzl[i]);
      if (has_ub[i] && dzu[i] < 0.0) a_dual = std::min(a_dual, -tau_k * zu[i] / dzu[i]);
    }

    // l1 merit line search along the primal direction.
    auto barrier_value = [&](const VectorXd& xx, const VectorXd& ss,
                             double& fval) {
      fval = p.objective(xx);
      double b = fval;
      for (int i = 0; i < n; ++i) {
        if (has_lb[i]) b -= mu * std::log(xx[i] - p.lb[i]);
        if (has_ub[i]) b -= mu * std::log(p.ub[i] - xx[i]);
      }
      for (int i = 0; i < mi; ++i) b -= mu * std::log(ss[i]);
      return b;
    };
    auto constraint_l1 = [&](const VectorXd& gg, const VectorXd& hh,
                             const VectorXd& ss) {
      double c = gg.size() > 0 ? gg.lpNorm<1>() : 0.0;
      for (int i = 0; i < mi; ++i) c += std::fabs(hh[i] + ss[i]);
      return c;
    };

    double f0v;
    double phi0_barrier = barrier_value(x, s, f0v);
    double c0 = constraint_l1(g, h, s);

    double barrier_slope = gf.dot(dx);
    for (int i = 0; i < n; ++i) {
      if (has_lb[i]) barrier_slope -= mu * dx[i] / (x[i] - p.lb[i]);
      if (has_ub[i]) barrier_slope += mu * dx[i] / (p.ub[i] - x[i]);
    }
    for (int i = 0; i < mi; ++i) barrier_slope -= mu * ds[i] / s[i];

    // The l1 weight must dominate the multiplier norms for the penalty to be
    // exact, and is recomputed fresh each iteration: a ratchet here lets
    // transient dual spikes freeze the line search long after the spike has
    // passed.
    double dual_inf_norm = 0.0;
    for (int i = 0; i < me; ++i)
      dual_inf_norm = std::max(dual_inf_norm, std::fabs(y[i] + dy[i]));
    for (int i = 0; i < mi; ++i)
      dual_inf_norm = std::max(dual_inf_norm, std::fabs(w[i] + dw[i]));
    double nu_req = c0 > 1e-12 && barrier_slope > 0.0
                        ? barrier_slope / (0.5 * c0)
                        : 0.0;
    nu = std::max(1.2 * dual_inf_norm + 0.1, 1.2 * nu_req);

    double dphi = barrier_slope - nu * c0;
    double alpha = a_primal;
    bool accepted = false;
    bool tried_soc = false;
    std::string ls_log;
    VectorXd x_new, s_new, g_new, h_new;
    for (int bt = 0; bt < 30; ++bt) {
      x_new = x + alpha * dx;
      s_new = s + alpha * ds;
      double f_new;
      double phi_new_barrier;
      bool finite = true;
      for (int i = 0; i < mi; ++i)
        if (!(s_new[i] > 0.0)) finite = false;
      if (finite) {
        g_new = eval_g_all(x_new);
        h_new = mi > 0 ? p.inequalities(x_new) : VectorXd(0);
        phi_new_barrier = barrier_value(x_new, s_new, f_new);
        finite = std::isfinite(phi_new_barrier) && g_new.allFinite() &&
                 (mi == 0 || h_new.allFinite());
      }
      if (finite) {
        double c_new = constraint_l1(g_new, h_new, s_new);
        double phi_new = phi_new_barrier + nu * c_new;
        double phi_old = phi0_barrier + nu * c0;
        // Rounding slack: near the optimum the required decrease falls below
        // the cancellation noise of evaluating the merit function itself.
        double fp_slack =
            10.0 * std::numeric_limits<double>::epsilon() * std::fabs(phi_old);
        if (bt < 6 && log_level_enabled(LogLevel::kDebug))
          ls_log += strprintf("    ls bt%d a %.2e dbar %.3e dc %.3e need %.3e\n",
                              bt, alpha, phi_new_barrier - phi0_barrier,
                              c_new - c0, 1e-4 * alpha * dphi);
        if (phi_new <= phi_old + 1e-4 * alpha * dphi + fp_slack) {
          accepted = true;
          break;
        }
        // Second-order correction: the quadratic tail of the constraints can
        // reject an otherwise good step (Maratos effect). Re-solve with the
        // constraint overshoot as the right-hand side, reusing the
        // factorization; repeat while each round keeps shrinking the
        // violation, testing the corrected point under the same rule.
        if (bt == 0 && !tried_soc && c_new > c0) {
          tried_soc = true;
          VectorXd x_try = x_new, s_try = s_new, g_try = g_new, h_try = h_new;
          double c_try = c_new;
          for (int round = 0; round < 3; ++round) {
            VectorXd rhs_soc = VectorXd::Zero(N);
            for (int i = 0; i < me; ++i)
              rhs_soc[n + i] = -(g_try[i] - (1.0 - alpha) * g[i]);
            for (int i = 0; i < mi; ++i)
              rhs_soc[n + me + i] =
                  -((h_try[i] + s_try[i]) - (1.0 - alpha) * (h[i] + s[i]));
            VectorXd cor = ldlt.solve(rhs_soc);
            if (!cor.allFinite()) break;
            x_try += cor.head(n);
            for (int i = 0; i < mi; ++i)
              s_try[i] -= (s[i] / w[i]) * cor[n + me + i];
            bool interior = true;
            for (int i = 0; i < n && interior; ++i) {
              if (has_lb[i] && !(x_try[i] > p.lb[i])) interior = false;
              if (has_ub[i] && !(x_try[i] < p.ub[i])) interior = false;
            }
            for (int i = 0; i < mi && interior; ++i)
              if (!(s_try[i] > 0.0)) interior = false;
            if (!interior) break;
            VectorXd g_soc = eval_g_all(x_try);
            VectorXd h_soc = mi > 0 ? p.inequalities(x_try) : VectorXd(0);
            double f_soc;
            double phib_soc = barrier_value(x_try, s_try, f_soc);
            double c_soc = constraint_l1(g_soc, h_soc, s_try);
            bool soc_finite = std::isfinite(phib_soc) && g_soc.allFinite() &&
                              (mi == 0 || h_soc.allFinite());
            if (log_level_enabled(LogLevel::kDebug))
              ls_log += strprintf("    ls soc%d a %.2e dbar %.3e dc %.3e\n",
                                  round, alpha,
                                  soc_finite ? phib_soc - phi0_barrier : 0.0,
                                  soc_finite ? c_soc - c0 : 0.0);
            if (!soc_finite) break;
            if (phib_soc + nu * c_soc <=
                phi_old + 1e-4 * alpha * dphi + fp_slack) {
              x_new = x_try;
              s_new = s_try;
              g_new = g_soc;
              h_new = h_soc;
              accepted = true;
              break;
            }
            if (c_soc > 0.5 * c_try) break;  // correction no longer helping
            g_try = g_soc;
            h_try = h_soc;
            c_try = c_soc;
          }
          if (accepted) break;
        }
      } else if (bt < 6 && log_level_enabled(LogLevel::kDebug)) {
        ls_log += strprintf("    ls bt%d a %.2e not finite\n", bt, alpha);
      }
      alpha *= 0.5;
    }

    if (!accepted) {
      ++ls_failures;
      if (ls_failures >= 5) {
        out.status = SolveStatus::kNumericalFailure;
        break;
      }
      // Convexify harder and retry from the same iterate.
      last_delta = std::max(opts.delta_min, last_delta * 10.0);
      out.trace.push_back({iter, mu, f, feas_inf, h_viol, 0.0});
      continue;
    }
    ls_failures = 0;
    // Crumb step: backtracking collapsed the step by 100x or more below what
    // the fraction-to-boundary rule allowed, so the quadratic model is not
    // valid at the scale it proposes (typically astride a converter-loss
    // kink, where the constraint curvature changes over 1e-4 pu). Convexify
    // the next system instead of decaying the regularization and re-proposing
    // the same leap: x40 nets x10 after the usual /4 decay, and the unit base
    // matters because an inertia-clean system carries no regularization to
    // scale up.
    if (alpha < 0.01 * a_primal)
      last_delta = std::max(1.0, last_delta * 40.0);

    x = x_new;
    s = s_new;
    // Equality multipliers move with the primal step; only the bound and
    // slack duals take the separate dual step length.
    y += alpha * dy;
    w += a_dual * dw;
    for (int i = 0; i < n; ++i) {
      if (has_lb[i]) zl[i] += a_dual * dzl[i];
      if (has_ub[i]) zu[i] += a_dual * dzu[i];
    }
    // Keep bound duals within Ipopt-style safeguards around mu.
    for (int i = 0; i < n; ++i) {
      if (has_lb[i]) {
        double prim = mu / (x[i] - p.lb[i]);
        zl[i] = std::clamp(zl[i], prim / 1e10, prim * 1e10);
      }
      if (has_ub[i]) {
        double prim = mu / (p.ub[i] - x[i]);
        zu[i] = std::clamp(zu[i], prim / 1e10, prim * 1e10);
      }
    }

    out.trace.push_back({iter, mu, f, feas_inf, h_viol, alpha});
    if (opts.verbose || opts.log)
      logline(strprintf("iter %3d  mu %.3e  f %.8e  ||g|| %.3e  ||h_viol|| %.3e  alpha %.3e",
                        iter, mu, f, feas_inf, h_viol, alpha));
    if (log_level_enabled(LogLevel::kDebug)) {
      int ix = 0, iy = 0;
      dx.cwiseAbs().maxCoeff(&ix);
      if (dy.size()) dy.cwiseAbs().maxCoeff(&iy);
      log_debug(strprintf(
          "  dir |dx| %.3e @%d  a_pri %.3e  a_dual %.3e  nu %.3e  c0 %.3e  "
          "slope %.3e  delta %.3e  |dy| %.3e @%d  linres %.3e  cap@%d d %.2e",
          dx.lpNorm<Eigen::Infinity>(), ix, a_primal, a_dual, nu, c0,
          barrier_slope, last_delta,
          dy.size() ? dy.lpNorm<Eigen::Infinity>() : 0.0, iy, kkt_lin_res,
          cap_ix, cap_dist));
      if (!ls_log.empty()) log_debug("line search:\n" + ls_log);
      {
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + std::min(8, n), idx.end(),
                          [&](int a, int b) {
                            return std::fabs(dx[a]) > std::fabs(dx[b]);
                          });
        std::string top = "top |dx|:";
        for (int k = 0; k < std::min(8, n); ++k)
          top += strprintf(" [%d]=%.2e", idx[k], dx[idx[k]]);
        log_debug(top);
      }
    }
  }

  out.x = x;
  out.lambda_eq = y.head(me_user);
  out.dual_ineq = w;
  out.dual_lb = zl;
  out.dual_ub = zu;
  out.iterations = iter;
  return out;
}

// Convenience wrapper honoring the "non-converged status propagates" rule.
inline DispatchResult extract_solution(const NlpProblem& p,
                                       const SolveOutcome& outcome) {
  if (outcome.status != SolveStatus::kConverged)
    throw SolveError(std::string("cannot extract a dispatch from a solve with status ") +
                     to_string(outcome.status));
  return extract_solution(p, outcome.x, outcome.lambda_eq);
}

}  // namespace zonalopf
