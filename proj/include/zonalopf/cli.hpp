#pragma once

// Command-line front end: `zonal-opf <run|fit-curves|validate|solve-one>`.
// Exit codes: 0 success, 2 usage error, 3 data/validation error,
// 4 no step converged.

#include <CLI11.hpp>

#include <cstdio>
#include <ctime>
#include <string>
#include <vector>

#include "zonalopf/cases.hpp"
#include "zonalopf/io.hpp"

namespace zonalopf {

struct CliInvocation {
  std::string subcommand;  // run | fit-curves | validate | solve-one
  RunConfig config;        // paths, range, scenario, tolerances, chunks
  bool verbose = false;
};

// Thrown by parse_cli when the user asked for --help.
struct CliHelpRequested {
  std::string text;
};

inline CliInvocation parse_cli(const std::vector<std::string>& args) {
  CLI::App app{"zonal market-coupled AC/DC optimal power flow", "zonal-opf"};
  app.require_subcommand(1);

  CliInvocation inv;
  std::string scenario_str;

  auto add_common = [&inv](CLI::App* cmd) {
    cmd->add_flag("--verbose", inv.verbose, "verbose solver/log output");
  };
  auto add_market = [&inv](CLI::App* cmd) {
    cmd->add_option("--delta-rho-inc", inv.config.delta_rho_inc,
                    "tolerated price increase defining the fit window and "
                    "export bound (EUR/MWh)")
        ->check(CLI::PositiveNumber);
  };

  CLI::App* run = app.add_subcommand("run", "simulate a timestep range");
  run->add_option("--network", inv.config.network_path, "network JSON file")
      ->required();
  run->add_option("--profiles", inv.config.profiles_path,
                  "load/wind profile CSV")
      ->required();
  run->add_option("--curves", inv.config.curves_path,
                  "bid-curve CSV file or directory")
      ->required();
  run->add_option("--scenario", scenario_str, "SI, SII or SIII")->required();
  run->add_option("--from", inv.config.t_from, "first timestep (inclusive)")
      ->required();
  run->add_option("--to", inv.config.t_to, "last timestep (exclusive)")
      ->required();
  run->add_option("--out", inv.config.out_dir, "output directory")->required();
  run->add_option("--kkt-tol", inv.config.solver.kkt_tol,
                  "solver convergence tolerance")
      ->check(CLI::PositiveNumber);
  run->add_option("--chunks", inv.config.chunks,
                  "number of concurrently solved contiguous chunks")
      ->check(CLI::PositiveNumber);
  add_market(run);
  add_common(run);

  CLI::App* fit = app.add_subcommand(
      "fit-curves", "fit per-zone-hour cost models from bid curves");
  fit->add_option("--curves", inv.config.curves_path,
                  "bid-curve CSV file or directory")
      ->required();
  fit->add_option("--out", inv.config.out_dir, "output directory")->required();
  fit->add_option("--from", inv.config.t_from, "first timestep (inclusive)");
  fit->add_option("--to", inv.config.t_to, "last timestep (exclusive)");
  add_market(fit);
  add_common(fit);

  CLI::App* val =
      app.add_subcommand("validate", "check network and data files");
  val->add_option("--network", inv.config.network_path, "network JSON file")
      ->required();
  val->add_option("--profiles", inv.config.profiles_path,
                  "load/wind profile CSV");
  val->add_option("--curves", inv.config.curves_path,
                  "bid-curve CSV file or directory");
  add_common(val);

  CLI::App* one = app.add_subcommand(
      "solve-one", "solve a single timestep with per-iteration logging");
  one->add_option("--network", inv.config.network_path, "network JSON file")
      ->required();
  one->add_option("--profiles", inv.config.profiles_path,
                  "load/wind profile CSV")
      ->required();
  one->add_option("--curves", inv.config.curves_path,
                  "bid-curve CSV file or directory")
      ->required();
  one->add_option("--scenario", scenario_str, "SI, SII or SIII")->required();
  one->add_option("--from", inv.config.t_from, "the timestep to solve")
      ->required();
  one->add_option("--out", inv.config.out_dir,
                  "optional output directory for result files");
  one->add_option("--kkt-tol", inv.config.solver.kkt_tol,
                  "solver convergence tolerance")
      ->check(CLI::PositiveNumber);
  add_market(one);
  add_common(one);

  std::vector<const char*> argv;
  argv.push_back("zonal-opf");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    throw CliHelpRequested{app.help()};
  } catch (const CLI::CallForAllHelp&) {
    throw CliHelpRequested{app.help("", CLI::AppFormatMode::All)};
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  if (run->parsed())
    inv.subcommand = "run";
  else if (fit->parsed())
    inv.subcommand = "fit-curves";
  else if (val->parsed())
    inv.subcommand = "validate";
  else
    inv.subcommand = "solve-one";
  if (!scenario_str.empty())
    inv.config.scenario = scenario_from_string(scenario_str);
  if (inv.subcommand == "fit-curves") {
    // Range is optional here; -1 means "everything in the archive".
    if (fit->count("--from") == 0) inv.config.t_from = -1;
    if (fit->count("--to") == 0) inv.config.t_to = -1;
  }
  return inv;
}

namespace detail {

inline std::string now_iso8601_utc() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline int cli_run(const CliInvocation& inv) {
  RunSummary summary = run_range(inv.config);
  auto written =
      emit_results(summary, inv.config.out_dir, now_iso8601_utc());
  int converged = summary.converged_steps();
  std::printf("run complete: %zu steps, %d converged (%s)\n",
              summary.steps.size(), converged,
              to_string(inv.config.scenario));
  if (summary.has_aggregates)
    std::printf("median wall time %.4g s/step, mean iterations %.1f\n",
                summary.aggregates.median_wall_seconds,
                summary.aggregates.mean_iterations);
  std::printf("wrote:\n");
  for (const auto& p : written) std::printf("  %s\n", p.string().c_str());
  return converged == 0 ? 4 : 0;
}

inline int cli_fit_curves(const CliInvocation& inv) {
  CurveArchive archive = parse_bid_curves(inv.config.curves_path);
  std::vector<std::tuple<std::string, int, ZoneCostModel>> rows;
  for (const auto& [key, entry] : archive.entries) {
    if (inv.config.t_from >= 0 && key.second < inv.config.t_from) continue;
    if (inv.config.t_to >= 0 && key.second >= inv.config.t_to) continue;
    rows.emplace_back(key.first, key.second,
                      fit_cost_model(entry.supply, entry.demand,
                                     inv.config.delta_rho_inc));
  }
  std::error_code ec;
  std::filesystem::create_directories(inv.config.out_dir, ec);
  if (ec)
    throw DataError("cannot create output directory " + inv.config.out_dir +
                    ": " + ec.message());
  std::filesystem::path out =
      std::filesystem::path(inv.config.out_dir) / "fitted_models.csv";
  save_fitted_models(rows, out);
  std::printf("fitted %zu zone-hour models\nwrote:\n  %s\n", rows.size(),
              out.string().c_str());
  return 0;
}

inline int cli_validate(const CliInvocation& inv) {
  NetworkModel model = load_network(inv.config.network_path);
  ValidationReport report = validate_network(model);
  if (!report.ok()) {
    std::fprintf(stderr, "network validation failed:\n%s",
                 report.to_string().c_str());
    return 3;
  }
  std::printf(
      "network OK: %zu AC nodes, %zu AC branches, %zu DC nodes, %zu DC "
      "lines, %zu converters, %zu generators, %zu renewables, %zu loads, "
      "%zu zones\n",
      model.ac_nodes.size(), model.ac_branches.size(), model.dc_nodes.size(),
      model.dc_lines.size(), model.converters.size(),
      model.generators.size(), model.renewables.size(), model.loads.size(),
      model.zones.size());
  if (!inv.config.profiles_path.empty()) {
    ProfileTable profiles = load_profiles(inv.config.profiles_path);
    std::printf("profiles OK: %zu entries\n", profiles.values.size());
  }
  if (!inv.config.curves_path.empty()) {
    CurveArchive curves = parse_bid_curves(inv.config.curves_path);
    std::printf("curves OK: %zu zone-hour entries\n", curves.entries.size());
  }
  return 0;
}

inline int cli_solve_one(const CliInvocation& inv) {
  RunConfig config = inv.config;
  config.t_to = config.t_from + 1;
  config.chunks = 1;
  config.solver.verbose = true;
  RunSummary summary = run_range(config);
  const TimestepResult& step = summary.steps.at(0);
  std::printf("timestep %d: %s in %d iterations (%.4g s)\n", step.timestep,
              to_string(step.status), step.iterations, step.wall_seconds);
  if (!step.converged) return 4;
  std::printf("objective %.6g EUR/h\n", step.objective_eur);
  std::printf("%-8s %12s %12s %12s %12s\n", "zone", "price", "P_N [MW]",
              "P_G [MW]", "P_D [MW]");
  for (size_t z = 0; z < summary.zone_ids.size(); ++z)
    std::printf("%-8s %12.4f %12.2f %12.2f %12.2f\n",
                summary.zone_ids[z].c_str(), step.dispatch.zone_price[z],
                step.dispatch.zone_pn_mw[z], step.dispatch.zone_pg_mw[z],
                step.dispatch.zone_pd_mw[z]);
  for (size_t r = 0; r < summary.ren_labels.size(); ++r)
    std::printf("curtailment %s: %.3f %%\n", summary.ren_labels[r].c_str(),
                100.0 * step.dispatch.curtailment[r]);
  if (!config.out_dir.empty())
    for (const auto& p :
         emit_results(summary, config.out_dir, now_iso8601_utc()))
      std::printf("wrote %s\n", p.string().c_str());
  return 0;
}

}  // namespace detail

inline int dispatch_cli(const CliInvocation& inv) {
  if (inv.verbose) set_log_level(LogLevel::kDebug);
  if (inv.subcommand == "run") return detail::cli_run(inv);
  if (inv.subcommand == "fit-curves") return detail::cli_fit_curves(inv);
  if (inv.subcommand == "validate") return detail::cli_validate(inv);
  if (inv.subcommand == "solve-one") return detail::cli_solve_one(inv);
  throw UsageError("unknown subcommand '" + inv.subcommand + "'");
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch_cli(parse_cli(args));
  } catch (const CliHelpRequested& h) {
    std::fputs(h.text.c_str(), stdout);
    return 0;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const SolveError& e) {
    std::fprintf(stderr, "solver error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace zonalopf
