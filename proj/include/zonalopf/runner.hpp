#pragma once

// Drives a range of market timesteps: fits zone cost models per hour, builds
// and solves the per-step NLP (warm-starting along the chain), and aggregates
// run-level indicators.

#include <algorithm>
#include <map>
#include <optional>
#include <thread>
#include <vector>

#include "zonalopf/market.hpp"
#include "zonalopf/problem.hpp"
#include "zonalopf/profiles.hpp"
#include "zonalopf/solver.hpp"

namespace zonalopf {

struct RunConfig {
  ScenarioKind scenario = ScenarioKind::kSII;
  int t_from = 0;
  int t_to = 0;  // exclusive
  double delta_rho_inc = 50.0;  // EUR/MWh fit window half-width
  SolverOptions solver;
  int chunks = 1;

  // Populated when the run is file-driven; echoed into summary output.
  std::string network_path, profiles_path, curves_path, out_dir;
};

struct TimestepResult {
  int timestep = 0;
  SolveStatus status = SolveStatus::kNumericalFailure;
  bool converged = false;
  double wall_seconds = 0.0;
  int iterations = 0;
  double objective_eur = 0.0;
  DispatchResult dispatch;               // valid only when converged
  std::vector<double> pn_min_mw, pn_max_mw;  // per zone, model order
};

struct ZoneIndicators {
  std::vector<double> price_duration;  // converged-step prices, descending
  int pn_min_binding = 0;
  int pn_max_binding = 0;
};

struct RenewableIndicators {
  double mean_curtailment_pct = 0.0;
  double max_curtailment_pct = 0.0;
};

struct RunAggregates {
  int steps_total = 0;
  int steps_converged = 0;
  std::map<std::string, int> status_counts;
  std::vector<ZoneIndicators> zones;       // model order
  std::vector<RenewableIndicators> renewables;
  int mtdc_binding_steps = 0;
  double mean_wall_seconds = 0.0;
  double median_wall_seconds = 0.0;
  double max_wall_seconds = 0.0;
  long total_iterations = 0;
  double mean_iterations = 0.0;
};

struct RunSummary {
  RunConfig config;
  std::vector<std::string> zone_ids;    // model order
  std::vector<std::string> ren_labels;  // unique display names, model order
  std::vector<std::string> ac_branch_labels, dc_line_labels, conv_labels;
  std::vector<double> dc_line_rating_mw, conv_rating_mva;  // for binding checks
  std::vector<TimestepResult> steps;
  bool has_aggregates = false;
  RunAggregates aggregates;

  int converged_steps() const {
    int c = 0;
    for (const auto& s : steps) c += s.converged ? 1 : 0;
    return c;
  }
};

// Run-level indicators; requires at least one converged step.
inline RunAggregates compute_indicators(const RunSummary& summary) {
  const auto& steps = summary.steps;
  RunAggregates agg;
  agg.steps_total = static_cast<int>(steps.size());
  for (const auto& st : steps) {
    agg.status_counts[to_string(st.status)] += 1;
    if (st.converged) ++agg.steps_converged;
  }
  if (agg.steps_converged == 0)
    throw DataError("compute_indicators: no converged steps in the run");

  size_t nz = summary.zone_ids.size();
  size_t nr = summary.ren_labels.size();
  agg.zones.resize(nz);
  agg.renewables.resize(nr);

  std::vector<double> walls;
  for (const auto& st : steps) {
    if (!st.converged) continue;
    walls.push_back(st.wall_seconds);
    agg.total_iterations += st.iterations;
    for (size_t z = 0; z < nz; ++z) {
      agg.zones[z].price_duration.push_back(st.dispatch.zone_price[z]);
      double pn = st.dispatch.zone_pn_mw[z];
      double lo = st.pn_min_mw[z], hi = st.pn_max_mw[z];
      if (std::fabs(pn - lo) <= 1e-3 * std::max(std::fabs(lo), 1.0))
        ++agg.zones[z].pn_min_binding;
      if (std::fabs(pn - hi) <= 1e-3 * std::max(std::fabs(hi), 1.0))
        ++agg.zones[z].pn_max_binding;
    }
    for (size_t r = 0; r < nr; ++r) {
      double pct = 100.0 * st.dispatch.curtailment[r];
      agg.renewables[r].mean_curtailment_pct += pct;
      agg.renewables[r].max_curtailment_pct =
          std::max(agg.renewables[r].max_curtailment_pct, pct);
    }
    // A step is MTDC-binding when any DC line or converter sits within
    // 1e-3 of its rating.
    bool mtdc_binding = false;
    for (size_t k = 0; k < st.dispatch.dc_flows.size(); ++k) {
      double cap = summary.dc_line_rating_mw[k];
      double flow = std::max(std::fabs(st.dispatch.dc_flows[k].p_from_mw),
                             std::fabs(st.dispatch.dc_flows[k].p_to_mw));
      if (flow >= (1.0 - 1e-3) * cap) mtdc_binding = true;
    }
    for (size_t c = 0; c < st.dispatch.conv_p_ac_mw.size(); ++c) {
      double s = std::hypot(st.dispatch.conv_p_ac_mw[c],
                            st.dispatch.conv_q_ac_mvar[c]);
      if (s >= (1.0 - 1e-3) * summary.conv_rating_mva[c]) mtdc_binding = true;
    }
    if (mtdc_binding) ++agg.mtdc_binding_steps;
  }
  for (auto& z : agg.zones) std::sort(z.price_duration.rbegin(), z.price_duration.rend());
  for (auto& r : agg.renewables) r.mean_curtailment_pct /= agg.steps_converged;

  std::sort(walls.begin(), walls.end());
  agg.mean_wall_seconds = 0.0;
  for (double wv : walls) agg.mean_wall_seconds += wv;
  agg.mean_wall_seconds /= walls.size();
  agg.median_wall_seconds = walls[walls.size() / 2];
  agg.max_wall_seconds = walls.back();
  agg.mean_iterations =
      static_cast<double>(agg.total_iterations) / agg.steps_converged;
  return agg;
}

namespace detail {

inline std::vector<std::string> renewable_labels(const NetworkModel& m) {
  std::vector<std::string> labels;
  std::map<std::string, int> seen;
  for (const auto& r : m.renewables) {
    int k = seen[r.node]++;
    labels.push_back(k == 0 ? r.node : r.node + "#" + std::to_string(k));
  }
  return labels;
}

}  // namespace detail

// Core range driver over in-memory inputs.
inline RunSummary run_range(const NetworkModel& model,
                            const ProfileTable& profiles,
                            const CurveArchive& curves, const RunConfig& config) {
  if (config.t_from >= config.t_to)
    throw DataError("run range is empty: --from must be below --to");
  NetworkIndex index = NetworkIndex::build(model);

  RunSummary summary;
  summary.config = config;
  for (const auto& z : model.zones) summary.zone_ids.push_back(z.id);
  summary.ren_labels = detail::renewable_labels(model);
  {
    std::map<std::string, int> seen;
    auto label = [&seen](const std::string& base) {
      int k = seen[base]++;
      return k == 0 ? base : base + "#" + std::to_string(k);
    };
    for (const auto& br : model.ac_branches)
      summary.ac_branch_labels.push_back(label("ac:" + br.from + "-" + br.to));
    for (const auto& ln : model.dc_lines) {
      summary.dc_line_labels.push_back(label("dc:" + ln.from + "-" + ln.to));
      summary.dc_line_rating_mw.push_back(ln.p_rating);
    }
    for (const auto& cv : model.converters) {
      summary.conv_labels.push_back(label("cv:" + cv.ac_node + "-" + cv.dc_node));
      summary.conv_rating_mva.push_back(cv.s_rating);
    }
  }

  // Fail fast on missing inputs anywhere in the window.
  for (const auto& l : model.loads)
    for (int t = config.t_from; t < config.t_to; ++t)
      if (!profiles.has(l.profile, t))
        throw DataError(strprintf("profile '%s' has no value at timestep %d",
                                  l.profile.c_str(), t));
  for (const auto& r : model.renewables)
    for (int t = config.t_from; t < config.t_to; ++t)
      if (!profiles.has(r.profile, t))
        throw DataError(strprintf("profile '%s' has no value at timestep %d",
                                  r.profile.c_str(), t));
  for (size_t z = 0; z < model.zones.size(); ++z) {
    if (model.zones[z].kind != ZoneKind::kOnshore) continue;
    for (int t = config.t_from; t < config.t_to; ++t)
      if (!curves.has(model.zones[z].id, t))
        throw DataError(strprintf("no bid curves for zone '%s' at timestep %d",
                                  model.zones[z].id.c_str(), t));
  }

  // Installed capacity per offshore zone for the synthetic hub cost models.
  std::vector<double> zone_ren_capacity(model.zones.size(), 0.0);
  for (size_t z = 0; z < model.zones.size(); ++z)
    for (int r : index.zone_rens[z])
      zone_ren_capacity[z] += model.renewables[r].capacity;

  const int steps_total = config.t_to - config.t_from;
  summary.steps.resize(steps_total);

  int chunks = std::clamp(config.chunks, 1, steps_total);
  std::vector<std::pair<int, int>> ranges;  // [begin, end) timesteps
  int base = steps_total / chunks, rem = steps_total % chunks;
  int t0 = config.t_from;
  for (int c = 0; c < chunks; ++c) {
    int len = base + (c < rem ? 1 : 0);
    ranges.emplace_back(t0, t0 + len);
    t0 += len;
  }

  auto solve_chunk = [&](int begin, int end) {
    std::optional<SolveOutcome> prev;
    for (int t = begin; t < end; ++t) {
      TimestepResult& res = summary.steps[t - config.t_from];
      res.timestep = t;

      StepInputs step;
      step.load_mw.reserve(model.loads.size());
      for (const auto& l : model.loads) step.load_mw.push_back(profiles.at(l.profile, t));
      step.ren_avail_mw.reserve(model.renewables.size());
      for (const auto& r : model.renewables)
        step.ren_avail_mw.push_back(profiles.at(r.profile, t));

      std::map<std::string, ZoneCostModel> costs;
      for (size_t z = 0; z < model.zones.size(); ++z) {
        const auto& pz = model.zones[z];
        if (pz.kind == ZoneKind::kOnshore) {
          const auto& zh = curves.at(pz.id, t);
          costs[pz.id] = fit_cost_model(zh.supply, zh.demand, config.delta_rho_inc);
        } else {
          costs[pz.id] = offshore_cost_model(zone_ren_capacity[z]);
        }
        res.pn_min_mw.push_back(costs[pz.id].pn_min);
        res.pn_max_mw.push_back(costs[pz.id].pn_max);
      }

      NlpProblem problem = build_problem(model, costs, step, config.scenario);
      Eigen::VectorXd x0 =
          prev ? warm_start(*prev, problem) : flat_start(problem);

      Stopwatch timer;
      SolveOutcome outcome =
          solve(problem, x0, config.solver, prev ? &*prev : nullptr);
      if (outcome.status != SolveStatus::kConverged && prev) {
        // A warm start can mislead the solver when the operating point moves
        // far between steps; retry the step once from scratch.
        log_warn(strprintf(
            "timestep %d: warm-started solve ended with status %s; "
            "retrying from a flat start",
            t, to_string(outcome.status)));
        outcome = solve(problem, flat_start(problem), config.solver);
      }
      res.wall_seconds = timer.seconds();
      res.iterations = outcome.iterations;
      res.status = outcome.status;
      res.converged = outcome.status == SolveStatus::kConverged;
      if (res.converged) {
        res.dispatch = extract_solution(problem, outcome.x, outcome.lambda_eq);
        res.objective_eur = problem.objective_report
                                ? problem.objective_report(outcome.x)
                                : problem.objective(outcome.x);
        prev = std::move(outcome);
      } else {
        log_warn(strprintf("timestep %d: solve ended with status %s", t,
                           to_string(outcome.status)));
        prev.reset();  // next step falls back to a flat start
      }
    }
  };

  if (chunks == 1) {
    solve_chunk(ranges[0].first, ranges[0].second);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(ranges.size());
    for (size_t c = 0; c < ranges.size(); ++c)
      workers.emplace_back([&, c] {
        try {
          solve_chunk(ranges[c].first, ranges[c].second);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    for (auto& th : workers) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  if (summary.converged_steps() > 0) {
    summary.aggregates = compute_indicators(summary);
    summary.has_aggregates = true;
  }
  return summary;
}

}  // namespace zonalopf
