#pragma once

// Zonal market data: piecewise-linear bid curves, market equilibrium,
// quadratic zone cost models fitted around the equilibrium, and the
// resulting net-position bounds.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "zonalopf/common.hpp"

namespace zonalopf {

enum class CurveSide { kSupply, kDemand };

struct CurvePoint {
  double price = 0.0;   // EUR/MWh
  double volume = 0.0;  // cumulative MWh (MW over one hour)
};

// Piecewise-linear bid stack; points ordered by strictly increasing volume.
// Supply prices are non-decreasing, demand prices non-increasing.
struct BidCurve {
  CurveSide side = CurveSide::kSupply;
  std::vector<CurvePoint> points;

  double min_volume() const { return points.front().volume; }
  double max_volume() const { return points.back().volume; }

  // Linear interpolation of price at a volume inside the curve's range.
  double price_at_volume(double v) const {
    if (points.empty()) throw DataError("empty bid curve");
    if (v <= points.front().volume) return points.front().price;
    if (v >= points.back().volume) return points.back().price;
    size_t hi = 1;
    while (points[hi].volume < v) ++hi;
    const auto& a = points[hi - 1];
    const auto& b = points[hi];
    double t = (v - a.volume) / (b.volume - a.volume);
    return a.price + t * (b.price - a.price);
  }
};

struct EquilibriumPoint {
  double rho_eq = 0.0;  // clearing price, EUR/MWh
  double v_eq = 0.0;    // clearing volume, MWh
};

// Quadratic zone cost model C(P_N) = alpha * P_N^2 + beta * P_N with the
// admissible net-position interval it was fitted for.
struct ZoneCostModel {
  double alpha = 0.0;          // EUR/MWh per MW
  double beta = 0.0;           // EUR/MWh
  double rho_eq = 0.0;         // EUR/MWh
  double pn_min = 0.0;         // MW (<= 0)
  double pn_max = 0.0;         // MW (>= 0)
  double delta_rho_inc = 0.0;  // EUR/MWh half-width of the fit window
};

inline constexpr double kAlphaFloor = 1e-6;

inline double price_at(const ZoneCostModel& m, double pn_mw) {
  return 2.0 * m.alpha * pn_mw + m.beta;
}

inline double cg_at(const ZoneCostModel& m, double pn_mw) {
  return m.alpha * pn_mw * pn_mw + m.beta * pn_mw;
}

// Offshore hubs bid at zero price: no cost term, net position bounded by
// installed capacity in both directions.
inline ZoneCostModel offshore_cost_model(double installed_capacity_mw) {
  ZoneCostModel m;
  m.alpha = 0.0;
  m.beta = 0.0;
  m.rho_eq = 0.0;
  m.pn_min = -installed_capacity_mw;
  m.pn_max = installed_capacity_mw;
  m.delta_rho_inc = 0.0;
  return m;
}

namespace detail {

inline void check_curve(const BidCurve& c, const std::string& what) {
  if (c.points.size() < 2)
    throw DataError(what + ": needs at least two points");
  for (size_t i = 1; i < c.points.size(); ++i) {
    if (!(c.points[i].volume > c.points[i - 1].volume))
      throw DataError(what + ": volumes must be strictly increasing");
    double dp = c.points[i].price - c.points[i - 1].price;
    if (c.side == CurveSide::kSupply && dp < 0.0)
      throw DataError(what + ": supply prices must be non-decreasing");
    if (c.side == CurveSide::kDemand && dp > 0.0)
      throw DataError(what + ": demand prices must be non-increasing");
  }
}

}  // namespace detail

// Intersection of the supply and demand stacks. The gap demand - supply is
// non-increasing in volume; its zero set is a point or an interval, and the
// interval case (curves overlap on a flat segment) resolves to the midpoint.
inline EquilibriumPoint find_equilibrium(const BidCurve& supply,
                                         const BidCurve& demand) {
  detail::check_curve(supply, "supply curve");
  detail::check_curve(demand, "demand curve");
  if (supply.side != CurveSide::kSupply || demand.side != CurveSide::kDemand)
    throw DataError("find_equilibrium: curve sides are swapped");

  double lo = std::max(supply.min_volume(), demand.min_volume());
  double hi = std::min(supply.max_volume(), demand.max_volume());
  if (!(lo <= hi))
    throw DataError("find_equilibrium: curves do not overlap in volume");

  auto gap = [&](double v) {
    return demand.price_at_volume(v) - supply.price_at_volume(v);
  };

  double price_scale = 1.0;
  for (const auto& p : supply.points) price_scale = std::max(price_scale, std::fabs(p.price));
  for (const auto& p : demand.points) price_scale = std::max(price_scale, std::fabs(p.price));
  const double eps = 1e-9 * price_scale;

  if (gap(lo) < -eps || gap(hi) > eps)
    throw DataError("find_equilibrium: no intersection in the overlapping range");

  // Merge breakpoints; the gap is linear between consecutive ones.
  std::vector<double> vs{lo, hi};
  for (const auto& p : supply.points)
    if (p.volume > lo && p.volume < hi) vs.push_back(p.volume);
  for (const auto& p : demand.points)
    if (p.volume > lo && p.volume < hi) vs.push_back(p.volume);
  std::sort(vs.begin(), vs.end());
  vs.erase(std::unique(vs.begin(), vs.end()), vs.end());

  double first_zero = kInfinity, last_zero = -kInfinity;
  auto note_zero = [&](double v) {
    first_zero = std::min(first_zero, v);
    last_zero = std::max(last_zero, v);
  };

  for (size_t i = 0; i + 1 < vs.size() || i == 0; ++i) {
    double va = vs[i];
    double ga = gap(va);
    if (std::fabs(ga) <= eps) note_zero(va);
    if (i + 1 >= vs.size()) break;
    double vb = vs[i + 1];
    double gb = gap(vb);
    if (std::fabs(gb) <= eps) note_zero(vb);
    if (ga > eps && gb < -eps) {
      // Transversal crossing inside the segment.
      note_zero(va + ga * (vb - va) / (ga - gb));
    }
  }
  if (!(first_zero <= last_zero))
    throw DataError("find_equilibrium: no intersection in the overlapping range");

  EquilibriumPoint eq;
  eq.v_eq = 0.5 * (first_zero + last_zero);
  eq.rho_eq = supply.price_at_volume(eq.v_eq);
  return eq;
}

// Largest supply-curve volume whose price does not exceed `price`.
inline double volume_at_price(const BidCurve& supply, double price) {
  const auto& pts = supply.points;
  if (price < pts.front().price) return pts.front().volume;
  if (price >= pts.back().price) return pts.back().volume;
  double best = pts.front().volume;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    const auto& a = pts[i];
    const auto& b = pts[i + 1];
    if (a.price <= price) best = std::max(best, a.volume);
    if (b.price <= price) {
      best = std::max(best, b.volume);
    } else if (a.price <= price && b.price > a.price) {
      double t = (price - a.price) / (b.price - a.price);
      best = std::max(best, a.volume + t * (b.volume - a.volume));
    }
  }
  return best;
}

// Admissible net-position interval for a fitted model. Import is capped where
// the marginal price hits zero (only binding when beta > 0); export is capped
// by the price increment delta and by the re-centered supply volume that is
// actually on offer.
inline std::pair<double, double> pn_bounds(double alpha, double beta,
                                           const BidCurve& supply,
                                           double rho_eq,
                                           double delta_rho_inc) {
  if (!(alpha > 0.0)) throw DataError("pn_bounds: alpha must be positive");
  if (!(delta_rho_inc > 0.0))
    throw DataError("pn_bounds: delta_rho_inc must be positive");
  double pn_min = beta > 0.0 ? -beta / (2.0 * alpha) : 0.0;
  double pn_max = delta_rho_inc / (2.0 * alpha);
  double v_eq = volume_at_price(supply, rho_eq);
  double available = std::max(0.0, supply.max_volume() - v_eq);
  pn_max = std::min(pn_max, available);
  return {pn_min, pn_max};
}

// Fit C(P_N) = alpha P_N^2 + beta P_N to the supply curve re-centered at the
// equilibrium, over the price window rho_eq +/- delta_rho_inc. Sparse windows
// widen up to 4x delta; if still short of two points, the two supply points
// bracketing the equilibrium volume are used. Bounds always use the original
// delta.
inline ZoneCostModel fit_cost_model(const BidCurve& supply,
                                    const BidCurve& demand,
                                    double delta_rho_inc) {
  if (!(delta_rho_inc > 0.0))
    throw DataError("fit_cost_model: delta_rho_inc must be positive");
  EquilibriumPoint eq = find_equilibrium(supply, demand);

  std::vector<std::pair<double, double>> pts;  // (pn, price)
  for (double widen : {1.0, 2.0, 4.0}) {
    pts.clear();
    double w = widen * delta_rho_inc;
    for (const auto& p : supply.points)
      if (std::fabs(p.price - eq.rho_eq) <= w)
        pts.emplace_back(p.volume - eq.v_eq, p.price);
    if (pts.size() >= 2) break;
  }
  if (pts.size() < 2) {
    // Bracket the equilibrium volume with the two nearest supply points.
    const auto& sp = supply.points;
    size_t k = 0;
    while (k + 2 < sp.size() && sp[k + 1].volume < eq.v_eq) ++k;
    pts = {{sp[k].volume - eq.v_eq, sp[k].price},
           {sp[k + 1].volume - eq.v_eq, sp[k + 1].price}};
  }

  // Least squares for price = slope * pn + intercept.
  double n = static_cast<double>(pts.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double denom = n * sxx - sx * sx;
  double slope, intercept;
  if (denom <= 1e-12 * std::max(1.0, sxx)) {
    slope = 0.0;  // degenerate: all points at one volume
    intercept = sy / n;
  } else {
    slope = (n * sxy - sx * sy) / denom;
    intercept = (sy - slope * sx) / n;
  }

  ZoneCostModel m;
  m.alpha = std::max(slope / 2.0, kAlphaFloor);
  m.beta = intercept;
  m.rho_eq = eq.rho_eq;
  m.delta_rho_inc = delta_rho_inc;
  auto [pn_min, pn_max] = pn_bounds(m.alpha, m.beta, supply, eq.rho_eq, delta_rho_inc);
  m.pn_min = pn_min;
  m.pn_max = pn_max;
  return m;
}

// All bid curves of a dataset keyed by (zone, timestep).
struct CurveArchive {
  struct ZoneHour {
    BidCurve supply;
    BidCurve demand;
  };
  std::map<std::pair<std::string, int>, ZoneHour> entries;

  bool has(const std::string& zone, int t) const {
    return entries.count({zone, t}) > 0;
  }
  const ZoneHour& at(const std::string& zone, int t) const {
    auto it = entries.find({zone, t});
    if (it == entries.end())
      throw DataError(strprintf("no bid curves for zone '%s' at timestep %d",
                                zone.c_str(), t));
    return it->second;
  }
  std::vector<std::string> zones() const {
    std::vector<std::string> out;
    for (const auto& [key, unused] : entries)
      if (out.empty() || out.back() != key.first) out.push_back(key.first);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
  // (zone, timestep) pairs missing from the archive for a run window.
  std::vector<std::pair<std::string, int>> missing(
      const std::vector<std::string>& zone_ids, int t_from, int t_to) const {
    std::vector<std::pair<std::string, int>> out;
    for (const auto& z : zone_ids)
      for (int t = t_from; t < t_to; ++t)
        if (!has(z, t)) out.emplace_back(z, t);
    return out;
  }
};

inline constexpr const char* kCurveCsvHeader =
    "zone,timestep,side,price_eur_mwh,cum_volume_mwh";

namespace detail {

inline void parse_curve_csv_file(const std::filesystem::path& file,
                                 CurveArchive& archive) {
  std::string text = read_text_file(file);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line))
    throw DataError(file.string() + ": empty curve file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCurveCsvHeader)
    throw DataError(file.string() + ":1: bad header, expected '" +
                    std::string(kCurveCsvHeader) + "'");
  while (std::getline(in, line)) {
    ++lineno;
    std::string where = file.string() + ":" + std::to_string(lineno);
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != 5) throw DataError(where + ": expected 5 fields");
    const std::string& zone = f[0];
    int t = static_cast<int>(parse_int_field(f[1], where));
    CurveSide side;
    if (f[2] == "supply")
      side = CurveSide::kSupply;
    else if (f[2] == "demand")
      side = CurveSide::kDemand;
    else
      throw DataError(where + ": side must be 'supply' or 'demand', got '" +
                      f[2] + "'");
    CurvePoint p;
    p.price = parse_double_field(f[3], where);
    p.volume = parse_double_field(f[4], where);
    if (p.volume < 0.0) throw DataError(where + ": negative cumulative volume");

    auto& entry = archive.entries[{zone, t}];
    BidCurve& curve = side == CurveSide::kSupply ? entry.supply : entry.demand;
    curve.side = side;
    if (!curve.points.empty()) {
      const CurvePoint& prev = curve.points.back();
      if (!(p.volume > prev.volume))
        throw DataError(where + ": cumulative volume must be strictly increasing");
      double dp = p.price - prev.price;
      if (side == CurveSide::kSupply && dp < 0.0)
        throw DataError(where + ": supply prices must be non-decreasing");
      if (side == CurveSide::kDemand && dp > 0.0)
        throw DataError(where + ": demand prices must be non-increasing");
    }
    curve.points.push_back(p);
  }
}

}  // namespace detail

// Load bid curves from one CSV file or from every *.csv in a directory.
inline CurveArchive parse_bid_curves(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  CurveArchive archive;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".csv")
        files.push_back(e.path());
    if (files.empty())
      throw DataError("no .csv curve files in directory " + path.string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) detail::parse_curve_csv_file(f, archive);
  } else {
    detail::parse_curve_csv_file(path, archive);
  }
  for (const auto& [key, zh] : archive.entries) {
    std::string what = strprintf("curves for zone '%s' at timestep %d",
                                 key.first.c_str(), key.second);
    if (zh.supply.points.empty()) throw DataError(what + ": missing supply side");
    if (zh.demand.points.empty()) throw DataError(what + ": missing demand side");
    detail::check_curve(zh.supply, what + " (supply)");
    detail::check_curve(zh.demand, what + " (demand)");
  }
  return archive;
}

// Write an archive in the same CSV format parse_bid_curves reads.
inline void save_curves(const CurveArchive& archive,
                        const std::filesystem::path& path) {
  std::string out = std::string(kCurveCsvHeader) + "\n";
  for (const auto& [key, zh] : archive.entries) {
    auto emit = [&](const BidCurve& c, const char* side) {
      for (const auto& p : c.points)
        out += strprintf("%s,%d,%s,%.10g,%.10g\n", key.first.c_str(), key.second,
                         side, p.price, p.volume);
    };
    emit(zh.demand, "demand");
    emit(zh.supply, "supply");
  }
  write_text_file_atomic(path, out);
}

}  // namespace zonalopf
