#include <catch2/catch_amalgamated.hpp>

#include "support/fixtures.hpp"
#include "zonalopf/problem.hpp"
#include "zonalopf/solver.hpp"

#include <cmath>
#include <string>
#include <vector>

using namespace zonalopf;
using testfix::desk_step;

namespace {

// Minimal hand-built problem scaffold with no constraints.
NlpProblem box_problem(int n) {
  NlpProblem p;
  p.num_vars = n;
  p.num_eq = 0;
  p.num_ineq = 0;
  p.lb = Eigen::VectorXd::Constant(n, -2.0 * kUnbounded);
  p.ub = Eigen::VectorXd::Constant(n, 2.0 * kUnbounded);
  p.objective_hessian_diag = Eigen::VectorXd::Zero(n);
  p.equalities = [](const Eigen::VectorXd&) { return Eigen::VectorXd(0); };
  p.inequalities = [](const Eigen::VectorXd&) { return Eigen::VectorXd(0); };
  p.eq_jacobian_values = [](const Eigen::VectorXd&, double*) {};
  p.ineq_jacobian_values = [](const Eigen::VectorXd&, double*) {};
  return p;
}

}  // namespace

TEST_CASE("interior quadratic minimum is found on a box", "[solver]") {
  NlpProblem p = box_problem(1);
  p.lb[0] = 1.0;
  p.ub[0] = 5.0;
  p.objective = [](const Eigen::VectorXd& x) {
    return (x[0] - 3.0) * (x[0] - 3.0);
  };
  p.objective_gradient = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Constant(1, 2.0 * (x[0] - 3.0));
  };
  p.objective_hessian_diag[0] = 2.0;

  Eigen::VectorXd x0(1);
  x0 << 1.2;
  SolveOutcome out = solve(p, x0);
  REQUIRE(out.status == SolveStatus::kConverged);
  REQUIRE(out.x[0] == Catch::Approx(3.0).margin(1e-6));
  REQUIRE(std::fabs(p.objective(out.x)) <= 1e-6);
}

TEST_CASE("equality projection lands on the symmetric point", "[solver]") {
  NlpProblem p = box_problem(2);
  p.num_eq = 1;
  p.objective = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  p.objective_gradient = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(2.0 * x);
  };
  p.objective_hessian_diag = Eigen::VectorXd::Constant(2, 2.0);
  p.equalities = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Constant(1, x[0] + x[1] - 2.0);
  };
  p.eq_jacobian_pattern = {{0, 0}, {0, 1}};
  p.eq_jacobian_values = [](const Eigen::VectorXd&, double* v) {
    v[0] = 1.0;
    v[1] = 1.0;
  };

  Eigen::VectorXd x0(2);
  x0 << 4.0, -3.0;
  SolveOutcome out = solve(p, x0);
  REQUIRE(out.status == SolveStatus::kConverged);
  REQUIRE(out.x[0] == Catch::Approx(1.0).margin(1e-6));
  REQUIRE(out.x[1] == Catch::Approx(1.0).margin(1e-6));
  // f* = 2 with multiplier -2 on the balance row.
  REQUIRE(std::fabs(p.objective(out.x) - 2.0) <= 1e-6 * 3.0);
  REQUIRE(out.lambda_eq[0] == Catch::Approx(-2.0).margin(1e-5));
}

TEST_CASE("active inequality carries its multiplier", "[solver]") {
  NlpProblem p = box_problem(1);
  p.num_ineq = 1;
  p.objective = [](const Eigen::VectorXd& x) { return x[0]; };
  p.objective_gradient = [](const Eigen::VectorXd&) {
    return Eigen::VectorXd::Constant(1, 1.0);
  };
  p.inequalities = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Constant(1, 1.0 - x[0]);  // x >= 1
  };
  p.ineq_jacobian_pattern = {{0, 0}};
  p.ineq_jacobian_values = [](const Eigen::VectorXd&, double* v) {
    v[0] = -1.0;
  };

  Eigen::VectorXd x0(1);
  x0 << 4.0;
  SolveOutcome out = solve(p, x0);
  REQUIRE(out.status == SolveStatus::kConverged);
  REQUIRE(out.x[0] == Catch::Approx(1.0).margin(1e-5));
  REQUIRE(out.dual_ineq[0] == Catch::Approx(1.0).margin(1e-5));
}

TEST_CASE("fixed variables pass through the solve untouched", "[solver]") {
  NlpProblem p = box_problem(2);
  p.lb[1] = 2.0;
  p.ub[1] = 2.0;
  p.objective = [](const Eigen::VectorXd& x) {
    return (x[0] - 1.0) * (x[0] - 1.0) + x[1] * x[1];
  };
  p.objective_gradient = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd g(2);
    g << 2.0 * (x[0] - 1.0), 2.0 * x[1];
    return g;
  };
  p.objective_hessian_diag = Eigen::VectorXd::Constant(2, 2.0);

  SolveOutcome out = solve(p, flat_start(p));
  REQUIRE(out.status == SolveStatus::kConverged);
  REQUIRE(out.x[0] == Catch::Approx(1.0).margin(1e-6));
  REQUIRE(out.x[1] == Catch::Approx(2.0).margin(1e-9));
}

TEST_CASE("contradictory constraints are flagged as infeasible", "[solver]") {
  NlpProblem p = box_problem(2);
  p.num_eq = 1;
  p.lb[0] = 1.5;  // x >= 1.5 and y <= 0.4 cannot satisfy x + y = 2, x = y
  p.ub[1] = 0.4;
  p.objective = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  p.objective_gradient = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(2.0 * x);
  };
  p.objective_hessian_diag = Eigen::VectorXd::Constant(2, 2.0);
  p.equalities = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Constant(1, x[0] - x[1]);
  };
  p.eq_jacobian_pattern = {{0, 0}, {0, 1}};
  p.eq_jacobian_values = [](const Eigen::VectorXd&, double* v) {
    v[0] = 1.0;
    v[1] = -1.0;
  };

  SolveOutcome out = solve(p, flat_start(p));
  REQUIRE(out.status == SolveStatus::kInfeasibleDetected);
}

TEST_CASE("corrupted derivatives are caught by the checker", "[solver]") {
  NlpProblem p = box_problem(2);
  p.num_eq = 1;
  p.objective = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  p.objective_gradient = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd g = 2.0 * x;
    g[1] += 0.05;  // deliberate fault
    return g;
  };
  p.objective_hessian_diag = Eigen::VectorXd::Constant(2, 2.0);
  p.equalities = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Constant(1, x[0] + x[1] - 2.0);
  };
  p.eq_jacobian_pattern = {{0, 0}, {0, 1}};
  p.eq_jacobian_values = [](const Eigen::VectorXd&, double* v) {
    v[0] = 1.0;
    v[1] = 1.0;
  };
  Eigen::VectorXd x(2);
  x << 0.3, -0.7;
  REQUIRE(check_derivatives(p, x) > 1e-2);
}

TEST_CASE("linear objectives check out exactly", "[solver]") {
  NlpProblem p = box_problem(2);
  p.objective = [](const Eigen::VectorXd& x) { return 3.0 * x[0] - x[1]; };
  p.objective_gradient = [](const Eigen::VectorXd&) {
    Eigen::VectorXd g(2);
    g << 3.0, -1.0;
    return g;
  };
  Eigen::VectorXd x(2);
  x << 0.4, 1.1;
  REQUIRE(check_derivatives(p, x) <= 1e-9);
}

TEST_CASE("identical solves produce bit-identical iterate traces", "[solver]") {
  testfix::DeskStep d = desk_step(5750);
  NlpProblem p = build_problem(d.model, d.costs, d.step, ScenarioKind::kSII);
  SolveOutcome a = solve(p, flat_start(p));
  SolveOutcome b = solve(p, flat_start(p));
  REQUIRE(a.status == SolveStatus::kConverged);
  REQUIRE(a.iterations == b.iterations);
  REQUIRE((a.x - b.x).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.trace.size() == b.trace.size());
  for (size_t i = 0; i < a.trace.size(); ++i) {
    REQUIRE(a.trace[i].f == b.trace[i].f);
    REQUIRE(a.trace[i].mu == b.trace[i].mu);
    REQUIRE(a.trace[i].alpha == b.trace[i].alpha);
  }
}

TEST_CASE("barrier parameter never increases along a solve", "[solver]") {
  testfix::DeskStep d = desk_step(5750);
  NlpProblem p = build_problem(d.model, d.costs, d.step, ScenarioKind::kSII);
  SolveOutcome out = solve(p, flat_start(p));
  REQUIRE(out.status == SolveStatus::kConverged);
  for (size_t i = 1; i < out.trace.size(); ++i)
    REQUIRE(out.trace[i].mu <= out.trace[i - 1].mu);
}

TEST_CASE("solutions stay strictly inside their bounds", "[solver]") {
  testfix::DeskStep d = desk_step(5750);
  NlpProblem p = build_problem(d.model, d.costs, d.step, ScenarioKind::kSII);
  SolveOutcome out = solve(p, flat_start(p));
  REQUIRE(out.status == SolveStatus::kConverged);
  for (int i = 0; i < p.num_vars; ++i) {
    if (p.lb[i] > -kUnbounded && p.ub[i] > p.lb[i]) REQUIRE(out.x[i] > p.lb[i]);
    if (p.ub[i] < kUnbounded && p.ub[i] > p.lb[i]) REQUIRE(out.x[i] < p.ub[i]);
  }
}

TEST_CASE("warm starts push boundary iterates back inside", "[solver]") {
  NlpProblem p = box_problem(2);
  p.lb << 0.0, -1.0;
  p.ub << 1.0, 1.0;
  SolveOutcome prev;
  prev.x = Eigen::VectorXd(2);
  prev.x << 0.0, 1.0;  // parked exactly on the bounds
  Eigen::VectorXd x = warm_start(prev, p);
  REQUIRE(x[0] == Catch::Approx(1e-4).epsilon(1e-12));
  REQUIRE(x[1] == Catch::Approx(1.0 - 2e-4).epsilon(1e-9));
}

TEST_CASE("layout mismatches fall back to the flat start", "[solver]") {
  testfix::DeskStep d = desk_step(5750);
  NlpProblem p = build_problem(d.model, d.costs, d.step, ScenarioKind::kSII);
  SolveOutcome stale;
  stale.x = Eigen::VectorXd::Constant(3, 0.5);  // wrong dimension entirely
  Eigen::VectorXd x = warm_start(stale, p);
  REQUIRE((x - flat_start(p)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("warm-started repeats converge in at most half the iterations",
          "[solver]") {
  testfix::DeskStep d = desk_step(5750);
  NlpProblem p = build_problem(d.model, d.costs, d.step, ScenarioKind::kSII);
  SolveOutcome cold = solve(p, flat_start(p));
  REQUIRE(cold.status == SolveStatus::kConverged);
  SolveOutcome warm = solve(p, warm_start(cold, p), {}, &cold);
  REQUIRE(warm.status == SolveStatus::kConverged);
  REQUIRE(warm.iterations * 2 <= cold.iterations);
}

TEST_CASE("verbose mode logs one line per iteration", "[solver]") {
  testfix::DeskStep d = desk_step(5750);
  NlpProblem p = build_problem(d.model, d.costs, d.step, ScenarioKind::kSI);
  std::vector<std::string> lines;
  SolverOptions opts;
  opts.verbose = true;
  opts.log = [&lines](const std::string& s) { lines.push_back(s); };
  SolveOutcome out = solve(p, flat_start(p), opts);
  REQUIRE(out.status == SolveStatus::kConverged);
  size_t iter_lines = 0;
  for (const auto& l : lines)
    if (l.rfind("iter", 0) == 0) {
      ++iter_lines;
      REQUIRE(l.find("mu") != std::string::npos);
      REQUIRE(l.find("||g||") != std::string::npos);
      REQUIRE(l.find("alpha") != std::string::npos);
    }
  REQUIRE(iter_lines == static_cast<size_t>(out.iterations));
}

TEST_CASE("converged solves satisfy the advertised tolerance", "[solver]") {
  testfix::DeskStep d = desk_step(5750);
  for (auto scenario :
       {ScenarioKind::kSI, ScenarioKind::kSII, ScenarioKind::kSIII}) {
    NlpProblem p = build_problem(d.model, d.costs, d.step, scenario);
    SolveOutcome out = solve(p, flat_start(p));
    REQUIRE(out.status == SolveStatus::kConverged);
    REQUIRE(out.kkt_residual <= 1e-6);
    REQUIRE(p.equalities(out.x).cwiseAbs().maxCoeff() < 1e-6);
    REQUIRE(p.inequalities(out.x).maxCoeff() < 1e-6);
  }
}
