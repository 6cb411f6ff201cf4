#include <catch2/catch_amalgamated.hpp>

#include "support/fixtures.hpp"
#include "zonalopf/problem.hpp"
#include "zonalopf/solver.hpp"

#include <Eigen/Sparse>

#include <cmath>
#include <random>

using namespace zonalopf;
using testfix::desk_step;
using testfix::two_bus_model;
using testfix::two_zone_link;

namespace {

// Gradient of y' g(x) + w' h(x), assembled from the sparse Jacobian oracles.
Eigen::VectorXd constraint_gradient(const NlpProblem& p,
                                    const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& w) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(p.num_vars);
  std::vector<double> ve(p.eq_jacobian_pattern.size());
  p.eq_jacobian_values(x, ve.data());
  for (size_t k = 0; k < ve.size(); ++k)
    g[p.eq_jacobian_pattern[k].second] +=
        y[p.eq_jacobian_pattern[k].first] * ve[k];
  std::vector<double> vi(p.ineq_jacobian_pattern.size());
  p.ineq_jacobian_values(x, vi.data());
  for (size_t k = 0; k < vi.size(); ++k)
    g[p.ineq_jacobian_pattern[k].second] +=
        w[p.ineq_jacobian_pattern[k].first] * vi[k];
  return g;
}

}  // namespace

TEST_CASE("fixed-price problems carry no zonal variables", "[problem]") {
  NetworkModel m = two_bus_model();
  StepInputs step{{150.0}, {}};
  auto costs = std::map<std::string, ZoneCostModel>{
      {"Z1", testfix::quad_cost(0.01, 50.0)}};
  NlpProblem p = build_problem(m, costs, step, ScenarioKind::kSI);
  // theta, vm per AC node plus generator P and Q.
  REQUIRE(p.layout.zonal == false);
  REQUIRE(p.num_vars == 2 + 2 + 1 + 1);
  // AC P and Q balance per node plus the island angle reference.
  REQUIRE(p.num_eq == 2 + 2 + 1);
  // Both apparent-power ends of the single branch.
  REQUIRE(p.num_ineq == 2);
}

TEST_CASE("zonal problems add two equalities and one bounded net position",
          "[problem]") {
  NetworkModel m = two_bus_model();
  StepInputs step{{150.0}, {}};
  auto costs = std::map<std::string, ZoneCostModel>{
      {"Z1", testfix::quad_cost(0.01, 50.0)}};
  NlpProblem si = build_problem(m, costs, step, ScenarioKind::kSI);
  NlpProblem sii = build_problem(m, costs, step, ScenarioKind::kSII);
  REQUIRE(sii.layout.zonal == true);
  REQUIRE(sii.num_vars == si.num_vars + 2);  // zone P_G and P_N
  REQUIRE(sii.num_eq == si.num_eq + 2);      // aggregation and net position
  REQUIRE(sii.num_ineq == si.num_ineq);

  const double S = m.base_mva;
  int pn = sii.layout.zone_pn(0);
  REQUIRE(sii.lb[pn] == Catch::Approx(costs.at("Z1").pn_min / S));
  REQUIRE(sii.ub[pn] == Catch::Approx(costs.at("Z1").pn_max / S));

  // The fixed-price build leaves the market bounds out entirely.
  for (int i = 0; i < si.num_vars; ++i) {
    (void)i;  // no zonal columns exist to carry them
  }
  REQUIRE(si.layout.num_zone == 1);
}

TEST_CASE("curtailment factors are boxed to the unit interval", "[problem]") {
  NetworkModel m = testfix::hub_and_shore_model(3000.0, 2000.0);
  StepInputs step{{1000.0}, {2900.0}};
  std::map<std::string, ZoneCostModel> costs{
      {"A", testfix::quad_cost(0.01, 50.0)},
      {"H", offshore_cost_model(3000.0)}};
  NlpProblem p = build_problem(m, costs, step, ScenarioKind::kSII);
  int g = p.layout.gamma(0);
  REQUIRE(p.lb[g] == 0.0);
  REQUIRE(p.ub[g] == 1.0);
}

TEST_CASE("smoothed magnitude stays above the true magnitude", "[problem]") {
  using detail::smooth_abs;
  using detail::smooth_abs_d;
  using detail::smooth_abs_dd;
  REQUIRE(smooth_abs(0.0) == Catch::Approx(1e-4).epsilon(1e-12));
  for (double v : {-2.0, -3e-4, -1e-5, 1e-5, 5e-4, 1.7}) {
    REQUIRE(smooth_abs(v) >= std::fabs(v));
    REQUIRE(smooth_abs(v) == smooth_abs(-v));
    REQUIRE(std::fabs(smooth_abs_d(v)) < 1.0);
    REQUIRE(smooth_abs_d(v) == -smooth_abs_d(-v));
  }
  REQUIRE(smooth_abs(1.0) - 1.0 < 1e-8);  // negligible away from the kink

  // First and second derivatives against central differences.
  for (double v : {-4e-4, -1e-4, 0.0, 7e-5, 3e-3, 0.4}) {
    double h = 1e-6;
    double fd1 = (smooth_abs(v + h) - smooth_abs(v - h)) / (2.0 * h);
    double fd2 =
        (smooth_abs(v + h) - 2.0 * smooth_abs(v) + smooth_abs(v - h)) /
        (h * h);
    REQUIRE(fd1 == Catch::Approx(smooth_abs_d(v)).margin(1e-5));
    REQUIRE(fd2 == Catch::Approx(smooth_abs_dd(v)).epsilon(1e-3).margin(1e-4));
  }
}

TEST_CASE("branch flow matches the hand-derived lossless transfer",
          "[problem]") {
  detail::BranchData br;
  br.from = 0;
  br.to = 1;
  // r = 0, x = 0.1: series admittance g = 0, b = -10; no shunt.
  br.g = 0.0;
  br.b = -10.0;
  br.bsh2 = 0.0;
  br.s2 = 1.0;
  detail::FlowEnd f = detail::ac_flow_end(1.0, 1.0, 0.1, 0.0, br);
  REQUIRE(f.p == Catch::Approx(10.0 * std::sin(0.1)).epsilon(1e-12));
  detail::FlowEnd flat = detail::ac_flow_end(1.0, 1.0, 0.0, 0.0, br);
  REQUIRE(flat.p == 0.0);
  REQUIRE(flat.q == 0.0);

  // A charging branch injects reactive power at the flat point.
  br.bsh2 = 0.02;
  detail::FlowEnd sh = detail::ac_flow_end(1.0, 1.0, 0.0, 0.0, br);
  REQUIRE(sh.q == Catch::Approx(-0.02).epsilon(1e-12));
}

TEST_CASE("branch flow partial derivatives match finite differences",
          "[problem]") {
  detail::BranchData br;
  br.from = 0;
  br.to = 1;
  double r = 0.01, x = 0.05;
  double z2 = r * r + x * x;
  br.g = r / z2;
  br.b = -x / z2;
  br.bsh2 = 0.01;
  br.s2 = 16.0;

  const double vf = 1.03, vt = 0.97, tf = 0.12, tt = -0.04, h = 1e-7;
  detail::FlowEnd f = detail::ac_flow_end(vf, vt, tf, tt, br);
  auto p_of = [&](double a, double b, double c, double d) {
    return detail::ac_flow_end(a, b, c, d, br).p;
  };
  auto q_of = [&](double a, double b, double c, double d) {
    return detail::ac_flow_end(a, b, c, d, br).q;
  };
  auto fd = [&](auto fn, int arg) {
    double args[4] = {vf, vt, tf, tt};
    args[arg] += h;
    double up = fn(args[0], args[1], args[2], args[3]);
    args[arg] -= 2.0 * h;
    double dn = fn(args[0], args[1], args[2], args[3]);
    return (up - dn) / (2.0 * h);
  };
  REQUIRE(fd(p_of, 0) == Catch::Approx(f.dp_dvf).epsilon(1e-6));
  REQUIRE(fd(p_of, 1) == Catch::Approx(f.dp_dvt).epsilon(1e-6));
  REQUIRE(fd(p_of, 2) == Catch::Approx(f.dp_dtf).epsilon(1e-6));
  REQUIRE(fd(p_of, 3) == Catch::Approx(f.dp_dtt).epsilon(1e-6));
  REQUIRE(fd(q_of, 0) == Catch::Approx(f.dq_dvf).epsilon(1e-6));
  REQUIRE(fd(q_of, 1) == Catch::Approx(f.dq_dvt).epsilon(1e-6));
  REQUIRE(fd(q_of, 2) == Catch::Approx(f.dq_dtf).epsilon(1e-6));
  REQUIRE(fd(q_of, 3) == Catch::Approx(f.dq_dtt).epsilon(1e-6));
}

TEST_CASE("DC line end flows differ by a nonnegative loss", "[problem]") {
  const double r = 0.003;
  for (auto [vi, vj] : {std::pair{1.02, 0.98}, {0.97, 1.01}, {1.0, 1.0}}) {
    double p_from = vi * (vi - vj) / r;
    double p_to = vj * (vj - vi) / r;
    double loss = p_from + p_to;
    REQUIRE(loss == Catch::Approx((vi - vj) * (vi - vj) / r).margin(1e-12));
    REQUIRE(loss >= 0.0);
  }
}

TEST_CASE("converter loss curve is nonnegative", "[problem]") {
  const double a = 0.005, b = 0.004, c = 1.5e-4;
  for (double p = -3.0; p <= 3.0; p += 0.1) {
    double loss = a + b * detail::smooth_abs(p) + c * p * p;
    REQUIRE(loss >= 0.0);
    REQUIRE(loss >= a);  // no-load losses never vanish
  }
}

TEST_CASE("derivative oracles agree with finite differences on the desk model",
          "[problem]") {
  testfix::DeskStep d = desk_step(5750);
  for (auto scenario : {ScenarioKind::kSI, ScenarioKind::kSII}) {
    NlpProblem p = build_problem(d.model, d.costs, d.step, scenario);
    Eigen::VectorXd x = flat_start(p);
    REQUIRE(check_derivatives(p, x) < 1e-5);

    // And at a second, non-flat interior point.
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(-0.04, 0.04);
    for (int i = 0; i < p.num_vars; ++i) {
      double lo = p.lb[i] > -kUnbounded ? p.lb[i] : x[i] - 0.3;
      double hi = p.ub[i] < kUnbounded ? p.ub[i] : x[i] + 0.3;
      double margin = 1e-3 * (hi - lo);
      x[i] = std::clamp(x[i] + u(rng), lo + margin, hi - margin);
    }
    REQUIRE(check_derivatives(p, x) < 1e-5);
  }
}

TEST_CASE("constraint curvature matches differentiated constraint gradients",
          "[problem]") {
  testfix::DeskStep d = desk_step(5750);
  NlpProblem p = build_problem(d.model, d.costs, d.step, ScenarioKind::kSII);
  REQUIRE(p.constraint_hessian);

  std::mt19937 rng(42);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd x = flat_start(p);
  for (int i = 0; i < p.num_vars; ++i) x[i] += 0.02 * u(rng);
  Eigen::VectorXd y(p.num_eq), w(p.num_ineq);
  for (int i = 0; i < p.num_eq; ++i) y[i] = 2.0 * u(rng);
  for (int i = 0; i < p.num_ineq; ++i) w[i] = 1.0 + u(rng);

  std::vector<Eigen::Triplet<double>> trips;
  p.constraint_hessian(x, y, w, trips);

  // Apply the symmetrized upper-triangle Hessian to random directions and
  // compare against central differences of the constraint gradient.
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::VectorXd v(p.num_vars);
    for (int i = 0; i < p.num_vars; ++i) v[i] = u(rng);
    Eigen::VectorXd hv = Eigen::VectorXd::Zero(p.num_vars);
    for (const auto& t : trips) {
      hv[t.row()] += t.value() * v[t.col()];
      if (t.row() != t.col()) hv[t.col()] += t.value() * v[t.row()];
    }
    const double h = 1e-6;
    Eigen::VectorXd fd = (constraint_gradient(p, x + h * v, y, w) -
                          constraint_gradient(p, x - h * v, y, w)) /
                         (2.0 * h);
    double scale = std::max(1.0, hv.cwiseAbs().maxCoeff());
    REQUIRE((fd - hv).cwiseAbs().maxCoeff() / scale < 1e-6);
  }
}

TEST_CASE("solved dispatch reports prices on the fitted marginal curve",
          "[problem]") {
  auto toy = two_zone_link(0.01, 55.0, 0.02, 35.0);
  StepInputs step{{1000.0, 800.0}, {}};
  NlpProblem p;
  SolveOutcome out =
      testfix::solve_step(toy.model, toy.costs, step, ScenarioKind::kSII, &p);
  REQUIRE(out.status == SolveStatus::kConverged);
  DispatchResult d = extract_solution(p, out);

  for (size_t z = 0; z < toy.model.zones.size(); ++z) {
    const auto& cost = toy.costs.at(toy.model.zones[z].id);
    REQUIRE(d.zone_price[z] ==
            Catch::Approx(price_at(cost, d.zone_pn_mw[z])).epsilon(1e-12));
    // KKT stationarity ties the balance dual to the marginal price.
    REQUIRE(d.zone_balance_dual[z] ==
            Catch::Approx(d.zone_price[z])
                .epsilon(1e-4)
                .margin(1e-4 * std::max(1.0, std::fabs(d.zone_price[z]))));
  }
  for (size_t r = 0; r < d.curtailment.size(); ++r)
    REQUIRE(d.curtailment[r] == 1.0 - d.ren_gamma[r]);

  // Feasibility of the reported state.
  Eigen::VectorXd g = p.equalities(out.x);
  REQUIRE(g.cwiseAbs().maxCoeff() < 1e-6);
  Eigen::VectorXd hc = p.inequalities(out.x);
  REQUIRE(hc.maxCoeff() < 1e-6);
}

TEST_CASE("extraction refuses non-converged outcomes", "[problem]") {
  auto toy = two_zone_link(0.01, 55.0, 0.02, 35.0);
  StepInputs step{{1000.0, 800.0}, {}};
  NlpProblem p;
  SolverOptions opts;
  opts.max_iter = 1;
  SolveOutcome out = testfix::solve_step(toy.model, toy.costs, step,
                                         ScenarioKind::kSII, &p, opts);
  REQUIRE(out.status != SolveStatus::kConverged);
  REQUIRE_THROWS_AS(extract_solution(p, out), SolveError);
}

TEST_CASE("zero-wind third scenario equals the second with zero availability",
          "[problem]") {
  NetworkModel m = testfix::hub_and_shore_model(3000.0, 2000.0);
  std::map<std::string, ZoneCostModel> costs{
      {"A", testfix::quad_cost(0.01, 50.0)},
      {"H", offshore_cost_model(3000.0)}};
  StepInputs windy{{1000.0}, {2400.0}};
  StepInputs calm{{1000.0}, {0.0}};

  NlpProblem siii = build_problem(m, costs, windy, ScenarioKind::kSIII);
  NlpProblem sii0 = build_problem(m, costs, calm, ScenarioKind::kSII);

  REQUIRE(siii.num_vars == sii0.num_vars);
  REQUIRE(siii.num_eq == sii0.num_eq);
  REQUIRE(siii.num_ineq == sii0.num_ineq);
  REQUIRE((siii.lb - sii0.lb).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((siii.ub - sii0.ub).cwiseAbs().maxCoeff() == 0.0);

  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Eigen::VectorXd x = flat_start(siii);
  for (int i = 0; i < x.size(); ++i) x[i] += 0.1 * u(rng);
  REQUIRE((siii.equalities(x) - sii0.equalities(x)).cwiseAbs().maxCoeff() ==
          0.0);
  REQUIRE((siii.inequalities(x) - sii0.inequalities(x))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  REQUIRE(siii.objective(x) == sii0.objective(x));
}

TEST_CASE("malformed step inputs are rejected", "[problem]") {
  NetworkModel m = two_bus_model();
  std::map<std::string, ZoneCostModel> costs{
      {"Z1", testfix::quad_cost(0.01, 50.0)}};
  REQUIRE_THROWS_AS(
      build_problem(m, costs, StepInputs{{-5.0}, {}}, ScenarioKind::kSII),
      DataError);
  REQUIRE_THROWS_AS(
      build_problem(m, costs, StepInputs{{}, {}}, ScenarioKind::kSII),
      DataError);
  REQUIRE_THROWS_AS(build_problem(m, {}, StepInputs{{150.0}, {}},
                                  ScenarioKind::kSII),
                    DataError);

  NetworkModel hub = testfix::hub_and_shore_model(3000.0, 2000.0);
  std::map<std::string, ZoneCostModel> hub_costs{
      {"A", testfix::quad_cost(0.01, 50.0)},
      {"H", offshore_cost_model(3000.0)}};
  REQUIRE_THROWS_AS(build_problem(hub, hub_costs,
                                  StepInputs{{1000.0}, {-1.0}},
                                  ScenarioKind::kSII),
                    DataError);
}
