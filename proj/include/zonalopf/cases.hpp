#pragma once

// Bundled desk-scale North Sea case: six onshore market zones (BE, DE, DK,
// GB, NL, NO) tied together by a meshed multi-terminal DC grid that collects
// five offshore wind hubs (PEI, NLH, GOC, DKEI, NOH). GB joins the mesh
// through two interconnectors (1.4 GW + 2 GW); the NO hub is a radial
// two-terminal island. Profiles and bid curves are synthetic but
// deterministic, so the generated dataset is reproducible bit-for-bit.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "zonalopf/io.hpp"
#include "zonalopf/profiles.hpp"

namespace zonalopf {

struct NorthSeaZoneSpec {
  const char* id;        // onshore zone id
  const char* hub;       // offshore hub zone id ("" = none)
  double hub_cap_mw;     // installed hub wind capacity
  double gen_cap_mw;     // conventional generation capacity
  double load_base_mw;   // peak-ish zonal load
  double alpha;          // supply-curve quadratic coefficient
  double beta0;          // base equilibrium price level
};

inline const std::vector<NorthSeaZoneSpec>& north_sea_zone_specs() {
  static const std::vector<NorthSeaZoneSpec> specs = {
      {"BE", "PEI", 3500.0, 9340.0, 3900.0, 0.009, 52.0},
      {"DE", "GOC", 4000.0, 18680.0, 10000.0, 0.003, 63.0},
      {"DK", "DKEI", 3500.0, 4074.0, 1160.0, 0.011, 55.0},
      {"GB", "", 0.0, 19225.0, 10900.0, 0.0025, 68.0},
      {"NL", "NLH", 2000.0, 9340.0, 3600.0, 0.012, 49.0},
      {"NO", "NOH", 2000.0, 4346.0, 1500.0, 0.015, 44.0},
  };
  return specs;
}

// Deterministic hourly shapes. All fractions stay well inside (0, 1) so the
// resulting NLPs are comfortably feasible at every step.
inline double north_sea_load_fraction(int t, int zone_idx) {
  constexpr double kTwoPi = 6.283185307179586;
  double daily = std::sin(kTwoPi * ((t % 24) - 9.0 - zone_idx) / 24.0);
  double weekly = std::sin(kTwoPi * (t % 168) / 168.0 + 0.5 * zone_idx);
  return 0.80 + 0.13 * daily + 0.05 * weekly;
}

inline double north_sea_wind_fraction(int t, int hub_idx) {
  constexpr double kTwoPi = 6.283185307179586;
  double slow = std::sin(kTwoPi * t / 37.0 + 1.7 * hub_idx);
  double fast = std::sin(kTwoPi * t / 13.0 + 0.9 * hub_idx);
  double f = 0.55 + 0.30 * slow + 0.25 * fast;
  return std::min(0.98, std::max(0.02, f));
}

// Equilibrium price level per zone-hour. BE and NL dip to -70 EUR/MWh over
// t in [5867, 5871] to exercise negative-price dispatch behaviour.
inline double north_sea_beta(int t, int zone_idx) {
  constexpr double kTwoPi = 6.283185307179586;
  const auto& spec = north_sea_zone_specs()[zone_idx];
  std::string id = spec.id;
  if ((id == "BE" || id == "NL") && t >= 5867 && t <= 5871) return -70.0;
  double daily = std::sin(kTwoPi * ((t % 24) - 17.0) / 24.0 + 0.3 * zone_idx);
  double weekly = std::sin(kTwoPi * (t % 168) / 168.0 + zone_idx);
  return spec.beta0 + 12.0 * daily + 3.0 * weekly;
}

inline NetworkModel north_sea_model() {
  NetworkModel m;
  m.base_mva = 1000.0;

  const auto& specs = north_sea_zone_specs();
  for (const auto& z : specs) {
    m.zones.push_back({z.id, ZoneKind::kOnshore});
    if (z.hub[0] != '\0') m.zones.push_back({z.hub, ZoneKind::kOffshore});

    std::string lower = z.id;
    for (auto& c : lower) c = static_cast<char>(std::tolower(c));
    std::string bus1 = lower + "1";
    std::string bus2 = lower + "2";
    m.ac_nodes.push_back({bus1, z.id, AcNodeKind::kSlack, 0.9, 1.1, 380.0});
    m.ac_nodes.push_back({bus2, z.id, AcNodeKind::kLoadOnly, 0.9, 1.1, 380.0});
    m.ac_branches.push_back(
        {bus1, bus2, 0.002, 0.02, 0.01, 1.3 * z.gen_cap_mw});
    m.generators.push_back({bus1, z.id, 0.0, z.gen_cap_mw,
                            -0.33 * z.gen_cap_mw, 0.33 * z.gen_cap_mw});
    m.loads.push_back({bus2, z.id, "load_" + std::string(z.id), 0.95});
  }

  // DC nodes: one per offshore hub (carrying its wind unit), one landing
  // point per onshore zone; GB lands twice.
  auto dc = [&m](const std::string& id, const std::string& zone) {
    m.dc_nodes.push_back({id, zone, 0.95, 1.05, 525.0});
  };
  dc("PEI", "PEI");
  dc("NLH", "NLH");
  dc("GOC", "GOC");
  dc("DKEI", "DKEI");
  dc("NOH", "NOH");
  dc("dc_be", "BE");
  dc("dc_nl", "NL");
  dc("dc_de", "DE");
  dc("dc_dk", "DK");
  dc("dc_gb1", "GB");
  dc("dc_gb2", "GB");
  dc("dc_no", "NO");

  int hub_idx = 0;
  for (const auto& z : specs)
    if (z.hub[0] != '\0') {
      m.renewables.push_back(
          {z.hub, z.hub, z.hub_cap_mw, "wind_" + std::string(z.hub)});
      ++hub_idx;
    }
  (void)hub_idx;

  // Hub-to-shore links sized to the hub, hub-to-hub mesh at 2 GW, and the
  // two GB interconnectors (combined import ceiling 3.4 GW). The NO link is
  // a separate two-terminal island.
  m.dc_lines.push_back({"PEI", "dc_be", 0.003, 3500.0});
  m.dc_lines.push_back({"NLH", "dc_nl", 0.003, 2000.0});
  m.dc_lines.push_back({"GOC", "dc_de", 0.003, 4000.0});
  m.dc_lines.push_back({"DKEI", "dc_dk", 0.003, 3500.0});
  m.dc_lines.push_back({"PEI", "NLH", 0.004, 2000.0});
  m.dc_lines.push_back({"NLH", "GOC", 0.004, 2000.0});
  m.dc_lines.push_back({"GOC", "DKEI", 0.004, 2000.0});
  m.dc_lines.push_back({"PEI", "dc_gb1", 0.005, 1400.0});
  m.dc_lines.push_back({"NLH", "dc_gb2", 0.006, 2000.0});
  m.dc_lines.push_back({"NOH", "dc_no", 0.004, 2000.0});

  auto conv = [&m](const std::string& ac, const std::string& dcn, double s) {
    m.converters.push_back({ac, dcn, s, 0.5, 0.004, 1.5e-6});
  };
  conv("be2", "dc_be", 3850.0);
  conv("nl2", "dc_nl", 2200.0);
  conv("de2", "dc_de", 4400.0);
  conv("dk2", "dc_dk", 3850.0);
  conv("gb2", "dc_gb1", 1540.0);
  conv("gb2", "dc_gb2", 2200.0);
  conv("no2", "dc_no", 2200.0);
  return m;
}

inline ProfileTable north_sea_profiles(int t_from, int t_to) {
  ProfileTable table;
  const auto& specs = north_sea_zone_specs();
  for (int t = t_from; t < t_to; ++t) {
    int hub_idx = 0;
    for (size_t z = 0; z < specs.size(); ++z) {
      table.set("load_" + std::string(specs[z].id), t,
                specs[z].load_base_mw * north_sea_load_fraction(t, (int)z));
      if (specs[z].hub[0] != '\0') {
        table.set("wind_" + std::string(specs[z].hub), t,
                  specs[z].hub_cap_mw * north_sea_wind_fraction(t, hub_idx));
        ++hub_idx;
      }
    }
  }
  return table;
}

struct CurvePair {
  BidCurve supply;
  BidCurve demand;
};

// Synthetic bid curves whose piecewise-linear intersection lands exactly at
// (v_eq, beta) and whose supply curve is exactly linear with slope 2*alpha
// inside the +/- delta price window (steeper tails outside it). Fitting the
// window therefore recovers (alpha, beta) to rounding error, which makes the
// generated dataset usable as its own regression oracle.
inline CurvePair linear_market_curves(double alpha, double beta, double v_eq,
                                      double delta) {
  if (!(alpha > 0.0) || !(v_eq > 0.0) || !(delta > 0.0))
    throw DataError("linear_market_curves: alpha, v_eq and delta must be > 0");
  double half_window = delta / (2.0 * alpha);  // volume reach of the window
  double w = std::min(half_window, 0.9 * v_eq);
  double top_v = v_eq + w + 0.4 * half_window;
  double low_tail_price = std::max(beta - 3.0 * delta, -500.0);

  CurvePair pair;
  pair.supply.side = CurveSide::kSupply;
  pair.supply.points.push_back({low_tail_price, 0.05 * v_eq});
  for (int k = -2; k <= 2; ++k)
    pair.supply.points.push_back({beta + alpha * k * w, v_eq + 0.5 * k * w});
  pair.supply.points.push_back({beta + 3.0 * delta, top_v});

  pair.demand.side = CurveSide::kDemand;
  pair.demand.points.push_back({beta + 3.0 * delta, 0.3 * v_eq});
  pair.demand.points.push_back({beta, v_eq});
  pair.demand.points.push_back({beta - 3.0 * delta, 1.1 * v_eq + 1.0});
  return pair;
}

inline CurveArchive north_sea_curves(int t_from, int t_to,
                                     double delta_rho_inc = 50.0) {
  CurveArchive archive;
  const auto& specs = north_sea_zone_specs();
  for (int t = t_from; t < t_to; ++t)
    for (size_t z = 0; z < specs.size(); ++z) {
      double load = specs[z].load_base_mw * north_sea_load_fraction(t, (int)z);
      CurvePair pair = linear_market_curves(
          specs[z].alpha, north_sea_beta(t, (int)z), load, delta_rho_inc);
      archive.entries[{specs[z].id, t}] = {pair.supply, pair.demand};
    }
  return archive;
}

// Materializes network.json, profiles.csv and curves.csv for [t_from, t_to).
inline void write_case_files(const std::filesystem::path& dir, int t_from,
                             int t_to) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw DataError("cannot create directory " + dir.string() + ": " +
                    ec.message());
  save_network(north_sea_model(), dir / "network.json");
  save_profiles(north_sea_profiles(t_from, t_to), dir / "profiles.csv");
  save_curves(north_sea_curves(t_from, t_to), dir / "curves.csv");
}

}  // namespace zonalopf
