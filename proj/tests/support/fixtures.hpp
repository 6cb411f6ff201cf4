#pragma once

// Small hand-sized networks and cost models shared across the test suite.
// Everything here is deliberately tiny enough to reason about on paper.

#include <cmath>
#include <map>
#include <string>
#include <utility>

#include "zonalopf/cases.hpp"
#include "zonalopf/io.hpp"
#include "zonalopf/problem.hpp"
#include "zonalopf/runner.hpp"
#include "zonalopf/solver.hpp"

namespace zonalopf::testfix {

// Single onshore zone: slack bus with one generator feeding a load bus.
inline NetworkModel two_bus_model() {
  NetworkModel m;
  m.base_mva = 100.0;
  m.zones.push_back({"Z1", ZoneKind::kOnshore});
  m.ac_nodes.push_back({"n1", "Z1", AcNodeKind::kSlack, 0.9, 1.1, 380.0});
  m.ac_nodes.push_back({"n2", "Z1", AcNodeKind::kLoadOnly, 0.9, 1.1, 380.0});
  m.ac_branches.push_back({"n1", "n2", 0.01, 0.05, 0.02, 400.0});
  m.generators.push_back({"n1", "Z1", 0.0, 400.0, -130.0, 130.0});
  m.loads.push_back({"n2", "Z1", "load_Z1", 0.95});
  return m;
}

// Quadratic zone cost model with the closed-form net-position bounds.
inline ZoneCostModel quad_cost(double alpha, double beta, double delta = 50.0) {
  ZoneCostModel m;
  m.alpha = alpha;
  m.beta = beta;
  m.rho_eq = beta;
  m.delta_rho_inc = delta;
  m.pn_min = beta > 0.0 ? -beta / (2.0 * alpha) : 0.0;
  m.pn_max = delta / (2.0 * alpha);
  return m;
}

struct TwoZoneLink {
  NetworkModel model;
  std::map<std::string, ZoneCostModel> costs;
};

// Two single-bus onshore zones joined by one DC line. Generator and load sit
// on the same bus (no AC branches) and the loads have unit power factor, so a
// lossless build exchanges power with zero system losses.
inline TwoZoneLink two_zone_link(double alpha_a, double beta_a, double alpha_b,
                                 double beta_b, bool lossless = true,
                                 double line_rating_mw = 4000.0) {
  NetworkModel m;
  m.base_mva = 100.0;
  m.zones.push_back({"A", ZoneKind::kOnshore});
  m.zones.push_back({"B", ZoneKind::kOnshore});
  m.ac_nodes.push_back({"a1", "A", AcNodeKind::kSlack, 0.9, 1.1, 380.0});
  m.ac_nodes.push_back({"b1", "B", AcNodeKind::kSlack, 0.9, 1.1, 380.0});
  m.dc_nodes.push_back({"dca", "A", 0.9, 1.1, 525.0});
  m.dc_nodes.push_back({"dcb", "B", 0.9, 1.1, 525.0});
  m.dc_lines.push_back(
      {"dca", "dcb", lossless ? 0.0 : 0.004, line_rating_mw});
  const double la = lossless ? 0.0 : 0.5;
  const double lb = lossless ? 0.0 : 0.004;
  const double lc = lossless ? 0.0 : 1.5e-6;
  m.converters.push_back({"a1", "dca", 1.2 * line_rating_mw, la, lb, lc});
  m.converters.push_back({"b1", "dcb", 1.2 * line_rating_mw, la, lb, lc});
  m.generators.push_back({"a1", "A", 0.0, 6000.0, -2000.0, 2000.0});
  m.generators.push_back({"b1", "B", 0.0, 6000.0, -2000.0, 2000.0});
  m.loads.push_back({"a1", "A", "load_A", 1.0});
  m.loads.push_back({"b1", "B", "load_B", 1.0});

  TwoZoneLink out;
  out.model = std::move(m);
  out.costs["A"] = quad_cost(alpha_a, beta_a);
  out.costs["B"] = quad_cost(alpha_b, beta_b);
  return out;
}

// Offshore hub zone H (wind on a DC node) exporting into onshore zone A.
inline NetworkModel hub_and_shore_model(double wind_cap_mw,
                                        double link_rating_mw,
                                        bool lossless = true) {
  NetworkModel m;
  m.base_mva = 100.0;
  m.zones.push_back({"A", ZoneKind::kOnshore});
  m.zones.push_back({"H", ZoneKind::kOffshore});
  m.ac_nodes.push_back({"a1", "A", AcNodeKind::kSlack, 0.9, 1.1, 380.0});
  m.dc_nodes.push_back({"hub", "H", 0.9, 1.1, 525.0});
  m.dc_nodes.push_back({"dca", "A", 0.9, 1.1, 525.0});
  m.dc_lines.push_back({"hub", "dca", lossless ? 0.0 : 0.003, link_rating_mw});
  const double la = lossless ? 0.0 : 0.5;
  const double lb = lossless ? 0.0 : 0.004;
  const double lc = lossless ? 0.0 : 1.5e-6;
  m.converters.push_back({"a1", "dca", 1.2 * link_rating_mw, la, lb, lc});
  m.renewables.push_back({"hub", "H", wind_cap_mw, "wind_H"});
  m.generators.push_back({"a1", "A", 0.0, 8000.0, -2500.0, 2500.0});
  m.loads.push_back({"a1", "A", "load_A", 1.0});
  return m;
}

// Convenience: assemble and solve one step, optionally exposing the problem.
inline SolveOutcome solve_step(const NetworkModel& model,
                               const std::map<std::string, ZoneCostModel>& costs,
                               const StepInputs& step, ScenarioKind scenario,
                               NlpProblem* problem_out = nullptr,
                               SolverOptions opts = {}) {
  NlpProblem p = build_problem(model, costs, step, scenario);
  SolveOutcome out = solve(p, flat_start(p), opts);
  if (problem_out) *problem_out = std::move(p);
  return out;
}

// In-memory profile/curve inputs for multi-step runs over the two-zone link:
// load_A ramps while load_B stays flat, and the synthetic curves intersect at
// exactly (load, beta) so the fitted models are known in closed form.
struct TwoZoneRun {
  NetworkModel model;
  ProfileTable profiles;
  CurveArchive curves;
};

inline TwoZoneRun two_zone_run_fixture(int t_from, int t_to,
                                       bool lossless = true,
                                       double alpha_a = 0.01,
                                       double alpha_b = 0.02,
                                       double beta_a = 55.0,
                                       double beta_b = 35.0) {
  TwoZoneRun out;
  out.model = two_zone_link(alpha_a, beta_a, alpha_b, beta_b, lossless).model;
  for (int t = t_from; t < t_to; ++t) {
    double load_a = 1000.0 + 40.0 * (t - t_from);
    double load_b = 800.0;
    out.profiles.set("load_A", t, load_a);
    out.profiles.set("load_B", t, load_b);
    CurvePair pair_a = linear_market_curves(alpha_a, beta_a, load_a, 50.0);
    CurvePair pair_b = linear_market_curves(alpha_b, beta_b, load_b, 50.0);
    out.curves.entries[{"A", t}] = {pair_a.supply, pair_a.demand};
    out.curves.entries[{"B", t}] = {pair_b.supply, pair_b.demand};
  }
  return out;
}

// One desk-model timestep with fitted onshore and capacity-bounded offshore
// cost models — the same preparation the range runner performs per step.
struct DeskStep {
  NetworkModel model;
  std::map<std::string, ZoneCostModel> costs;
  StepInputs step;
};

inline DeskStep desk_step(int t, double delta_rho_inc = 50.0) {
  DeskStep d;
  d.model = north_sea_model();
  ProfileTable profiles = north_sea_profiles(t, t + 1);
  CurveArchive curves = north_sea_curves(t, t + 1, delta_rho_inc);
  NetworkIndex ix = NetworkIndex::build(d.model);
  for (size_t z = 0; z < d.model.zones.size(); ++z) {
    const auto& zone = d.model.zones[z];
    if (zone.kind == ZoneKind::kOnshore) {
      const auto& zh = curves.at(zone.id, t);
      d.costs[zone.id] = fit_cost_model(zh.supply, zh.demand, delta_rho_inc);
    } else {
      double cap = 0.0;
      for (int r : ix.zone_rens[z]) cap += d.model.renewables[r].capacity;
      d.costs[zone.id] = offshore_cost_model(cap);
    }
  }
  for (const auto& l : d.model.loads)
    d.step.load_mw.push_back(profiles.at(l.profile, t));
  for (const auto& r : d.model.renewables)
    d.step.ren_avail_mw.push_back(profiles.at(r.profile, t));
  return d;
}

inline double total_losses_mw(const DispatchResult& d) {
  double sum = 0.0;
  for (const auto& f : d.ac_flows) sum += f.loss_mw;
  for (const auto& f : d.dc_flows) sum += f.loss_mw;
  for (double l : d.conv_loss_mw) sum += l;
  return sum;
}

}  // namespace zonalopf::testfix
