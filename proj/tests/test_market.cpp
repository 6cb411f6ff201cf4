#include <catch2/catch_amalgamated.hpp>

#include "support/fixtures.hpp"
#include "zonalopf/cases.hpp"
#include "zonalopf/market.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace zonalopf;

namespace {

BidCurve make_curve(CurveSide side,
                    std::initializer_list<std::pair<double, double>> pv) {
  BidCurve c;
  c.side = side;
  for (auto [price, volume] : pv) c.points.push_back({price, volume});
  return c;
}

std::filesystem::path temp_file(const std::string& name,
                                const std::string& content) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST_CASE("symmetric crossing intersects at the midpoint price", "[market]") {
  BidCurve s = make_curve(CurveSide::kSupply, {{0.0, 0.0}, {100.0, 1000.0}});
  BidCurve d = make_curve(CurveSide::kDemand, {{100.0, 0.0}, {0.0, 1000.0}});
  EquilibriumPoint eq = find_equilibrium(s, d);
  REQUIRE(eq.rho_eq == Catch::Approx(50.0).epsilon(1e-12));
  REQUIRE(eq.v_eq == Catch::Approx(500.0).epsilon(1e-12));
}

TEST_CASE("mid-segment crossings are solved exactly", "[market]") {
  // supply 20 + 0.1 v, demand 50 - 0.1 v: crossing at v = 150, price 35.
  BidCurve s = make_curve(CurveSide::kSupply, {{20.0, 0.0}, {40.0, 200.0}});
  BidCurve d = make_curve(CurveSide::kDemand, {{50.0, 0.0}, {10.0, 400.0}});
  EquilibriumPoint eq = find_equilibrium(s, d);
  REQUIRE(eq.rho_eq == Catch::Approx(35.0).epsilon(1e-12));
  REQUIRE(eq.v_eq == Catch::Approx(150.0).epsilon(1e-12));
}

TEST_CASE("flat overlapping curves resolve to the overlap midpoint",
          "[market]") {
  BidCurve s = make_curve(CurveSide::kSupply, {{30.0, 100.0}, {30.0, 500.0}});
  BidCurve d = make_curve(CurveSide::kDemand, {{30.0, 200.0}, {30.0, 800.0}});
  EquilibriumPoint eq = find_equilibrium(s, d);
  REQUIRE(eq.rho_eq == Catch::Approx(30.0).epsilon(1e-12));
  REQUIRE(eq.v_eq == Catch::Approx(350.0).epsilon(1e-12));  // mid of [200,500]
}

TEST_CASE("non-crossing curves raise a data error", "[market]") {
  BidCurve s = make_curve(CurveSide::kSupply, {{60.0, 0.0}, {90.0, 1000.0}});
  BidCurve d = make_curve(CurveSide::kDemand, {{50.0, 0.0}, {40.0, 1000.0}});
  REQUIRE_THROWS_AS(find_equilibrium(s, d), DataError);
}

TEST_CASE("curve invariants are enforced", "[market]") {
  BidCurve bad_vol =
      make_curve(CurveSide::kSupply, {{10.0, 500.0}, {20.0, 400.0}});
  BidCurve bad_sup =
      make_curve(CurveSide::kSupply, {{50.0, 100.0}, {10.0, 200.0}});
  BidCurve bad_dem =
      make_curve(CurveSide::kDemand, {{10.0, 100.0}, {50.0, 200.0}});
  BidCurve ok = make_curve(CurveSide::kDemand, {{50.0, 100.0}, {10.0, 200.0}});
  REQUIRE_THROWS_AS(find_equilibrium(bad_sup, ok), DataError);
  REQUIRE_THROWS_AS(find_equilibrium(bad_vol, ok), DataError);
  BidCurve lin = make_curve(CurveSide::kSupply, {{0.0, 0.0}, {100.0, 1000.0}});
  REQUIRE_THROWS_AS(find_equilibrium(lin, bad_dem), DataError);
}

TEST_CASE("exactly linear supply recovers its coefficients", "[market]") {
  // price = 0.02 * pn + 40 inside the window: alpha 0.01, beta 40.
  CurvePair pair = linear_market_curves(0.01, 40.0, 2000.0, 50.0);
  ZoneCostModel m = fit_cost_model(pair.supply, pair.demand, 50.0);
  REQUIRE(m.alpha == Catch::Approx(0.01).epsilon(1e-9));
  REQUIRE(m.beta == Catch::Approx(40.0).epsilon(1e-9));
  REQUIRE(m.rho_eq == Catch::Approx(40.0).epsilon(1e-9));
  REQUIRE(m.pn_min == Catch::Approx(-2000.0).epsilon(1e-9));  // -beta/2alpha
  REQUIRE(m.pn_max <= 50.0 / (2.0 * 0.01) + 1e-9);
}

TEST_CASE("flat supply falls back to the minimum curvature", "[market]") {
  BidCurve s = make_curve(CurveSide::kSupply, {{25.0, 500.0}, {25.0, 3000.0}});
  BidCurve d = make_curve(CurveSide::kDemand,
                          {{60.0, 400.0}, {25.0, 1500.0}, {10.0, 2600.0}});
  ZoneCostModel m = fit_cost_model(s, d, 50.0);
  REQUIRE(m.alpha == kAlphaFloor);
  REQUIRE(m.beta == Catch::Approx(25.0).epsilon(1e-12));
}

TEST_CASE("sparse price windows widen until two points are available",
          "[market]") {
  // Supply breakpoints at prices 10 and 200; the 1x and 2x windows around the
  // equilibrium (~150.65) hold one point, the 4x window holds both.
  BidCurve s = make_curve(CurveSide::kSupply, {{10.0, 100.0}, {200.0, 4000.0}});
  BidCurve d = make_curve(CurveSide::kDemand, {{300.0, 0.0}, {0.0, 6000.0}});
  EquilibriumPoint eq = find_equilibrium(s, d);
  ZoneCostModel m = fit_cost_model(s, d, 50.0);
  double seg_slope = (200.0 - 10.0) / (4000.0 - 100.0);
  REQUIRE(m.alpha == Catch::Approx(0.5 * seg_slope).epsilon(1e-9));
  REQUIRE(m.beta == Catch::Approx(eq.rho_eq).epsilon(1e-9));
}

TEST_CASE("a window with no breakpoints uses the bracketing pair", "[market]") {
  // Prices 0 and 1000 never enter even the 4x window around 500; the two
  // points bracketing the equilibrium volume define the line.
  BidCurve s =
      make_curve(CurveSide::kSupply, {{0.0, 1000.0}, {1000.0, 2000.0}});
  BidCurve d = make_curve(CurveSide::kDemand, {{1000.0, 0.0}, {0.0, 3000.0}});
  EquilibriumPoint eq = find_equilibrium(s, d);
  REQUIRE(eq.rho_eq == Catch::Approx(500.0).epsilon(1e-12));
  ZoneCostModel m = fit_cost_model(s, d, 50.0);
  REQUIRE(m.alpha == Catch::Approx(0.5).epsilon(1e-9));
  REQUIRE(m.beta == Catch::Approx(500.0).epsilon(1e-9));
}

TEST_CASE("shifting demand moves the equilibrium but not the curvature",
          "[market]") {
  CurvePair pair = linear_market_curves(0.01, 60.0, 3000.0, 50.0);
  ZoneCostModel base = fit_cost_model(pair.supply, pair.demand, 50.0);

  BidCurve shifted = pair.demand;
  for (auto& p : shifted.points) p.volume += 100.0;
  ZoneCostModel moved = fit_cost_model(pair.supply, shifted, 50.0);

  REQUIRE(moved.alpha == Catch::Approx(base.alpha).epsilon(1e-6));
  REQUIRE(moved.beta != base.beta);  // equilibrium price moved up the curve
}

TEST_CASE("import bound follows the marginal-price vertex", "[market]") {
  BidCurve s = make_curve(CurveSide::kSupply, {{0.0, 0.0}, {100.0, 10000.0}});
  auto [pn_min_pos, ignored1] = pn_bounds(0.01, 50.0, s, 50.0, 50.0);
  REQUIRE(pn_min_pos == Catch::Approx(-2500.0).epsilon(1e-12));
  auto [pn_min_neg, ignored2] = pn_bounds(0.01, -5.0, s, -5.0, 50.0);
  REQUIRE(pn_min_neg == 0.0);
  REQUIRE_THROWS_AS(pn_bounds(0.0, 50.0, s, 50.0, 50.0), DataError);
}

TEST_CASE("export bound caps at the tolerated price increase", "[market]") {
  BidCurve ample =
      make_curve(CurveSide::kSupply, {{0.0, 0.0}, {100.0, 10000.0}});
  auto [lo1, hi1] = pn_bounds(0.01, 50.0, ample, 50.0, 50.0);
  REQUIRE(hi1 == Catch::Approx(2500.0).epsilon(1e-12));

  // Only 1000 MWh on offer past the equilibrium: the curve truncates.
  BidCurve scarce =
      make_curve(CurveSide::kSupply, {{0.0, 0.0}, {100.0, 10000.0}});
  scarce.points[1].volume = volume_at_price(scarce, 50.0) + 1000.0;
  scarce.points[1].price =
      100.0 * scarce.points[1].volume / 10000.0;  // stay on the same line
  auto [lo2, hi2] = pn_bounds(0.01, 50.0, scarce, 50.0, 50.0);
  REQUIRE(hi2 == Catch::Approx(1000.0).epsilon(1e-9));
  (void)lo1;
  (void)lo2;
}

TEST_CASE("marginal price is the derivative of the cost curve", "[market]") {
  ZoneCostModel m = testfix::quad_cost(0.01, 50.0);
  REQUIRE(price_at(m, 0.0) == 50.0);
  REQUIRE(cg_at(m, 0.0) == 0.0);
  REQUIRE(cg_at(m, 100.0) == Catch::Approx(5100.0).epsilon(1e-12));
  REQUIRE(price_at(m, 100.0) > m.beta);   // exporting raises the price
  REQUIRE(price_at(m, -100.0) < m.beta);  // importing lowers it
  for (double pn : {-1800.0, -250.0, 0.0, 400.0, 2100.0}) {
    double h = 1e-3;
    double fd = (cg_at(m, pn + h) - cg_at(m, pn - h)) / (2.0 * h);
    REQUIRE(fd == Catch::Approx(price_at(m, pn)).epsilon(1e-9));
  }
}

TEST_CASE("offshore zones bid at zero and never bind on market volume",
          "[market]") {
  ZoneCostModel m = offshore_cost_model(3500.0);
  REQUIRE(cg_at(m, 3500.0) == 0.0);
  REQUIRE(price_at(m, 1234.5) == 0.0);
  REQUIRE(price_at(m, -999.0) == 0.0);
  REQUIRE(m.pn_min <= 0.0);
  REQUIRE(m.pn_max >= 0.0);
  REQUIRE(m.pn_min == -3500.0);
  REQUIRE(m.pn_max == 3500.0);
}

TEST_CASE("fitted onshore models keep their convexity invariants", "[market]") {
  CurveArchive archive = north_sea_curves(5750, 5760);
  for (const auto& [key, zh] : archive.entries) {
    ZoneCostModel m = fit_cost_model(zh.supply, zh.demand, 50.0);
    REQUIRE(cg_at(m, 0.0) == 0.0);
    REQUIRE(m.alpha >= kAlphaFloor);
    if (m.beta > 0.0) REQUIRE(price_at(m, m.pn_min) >= -1e-9);
    REQUIRE(price_at(m, m.pn_max) - m.rho_eq <= 50.0 + 1e-6);
    REQUIRE(m.pn_min <= 0.0);
    REQUIRE(m.pn_max >= 0.0);
  }
}

TEST_CASE("smallest valid curve file parses into one entry", "[market]") {
  auto path = temp_file("curves_one.csv",
                        "zone,timestep,side,price_eur_mwh,cum_volume_mwh\n"
                        "NL,0,supply,10,100\n"
                        "NL,0,supply,20,200\n"
                        "NL,0,supply,30,300\n"
                        "NL,0,demand,35,50\n"
                        "NL,0,demand,20,150\n"
                        "NL,0,demand,5,400\n");
  CurveArchive a = parse_bid_curves(path);
  REQUIRE(a.entries.size() == 1);
  REQUIRE(a.has("NL", 0));
  REQUIRE(a.at("NL", 0).supply.points.size() == 3);
  REQUIRE(a.at("NL", 0).demand.points.size() == 3);
}

TEST_CASE("decreasing cumulative volume is rejected with its row number",
          "[market]") {
  auto path = temp_file("curves_bad_vol.csv",
                        "zone,timestep,side,price_eur_mwh,cum_volume_mwh\n"
                        "NL,0,supply,10,300\n"
                        "NL,0,supply,20,200\n"
                        "NL,0,demand,35,50\n"
                        "NL,0,demand,20,150\n");
  REQUIRE_THROWS_WITH(parse_bid_curves(path),
                      Catch::Matchers::ContainsSubstring("row"));
}

TEST_CASE("unknown side token is rejected", "[market]") {
  auto path = temp_file("curves_bad_side.csv",
                        "zone,timestep,side,price_eur_mwh,cum_volume_mwh\n"
                        "NL,0,offer,10,100\n");
  REQUIRE_THROWS_AS(parse_bid_curves(path), DataError);
}

TEST_CASE("missing curve file is a data error", "[market]") {
  REQUIRE_THROWS_AS(parse_bid_curves("/nonexistent/curves.csv"), DataError);
}

TEST_CASE("an archive covering two zones over a day resolves 48 lookups",
          "[market]") {
  CurveArchive a;
  for (int t = 0; t < 24; ++t)
    for (const char* z : {"NL", "GB"}) {
      CurvePair pair = linear_market_curves(0.01, 40.0, 1000.0, 50.0);
      a.entries[{z, t}] = {pair.supply, pair.demand};
    }
  int hits = 0;
  for (int t = 0; t < 24; ++t)
    for (const char* z : {"NL", "GB"}) hits += a.has(z, t) ? 1 : 0;
  REQUIRE(hits == 48);
  REQUIRE(a.missing({"NL", "GB"}, 0, 24).empty());
  REQUIRE_FALSE(a.missing({"NL", "GB", "DE"}, 0, 24).empty());
}
