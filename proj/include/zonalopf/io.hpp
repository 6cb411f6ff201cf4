#pragma once

// File formats: network JSON, result CSVs + summary JSON, fitted-model CSV.

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "zonalopf/runner.hpp"

namespace zonalopf {

inline constexpr const char* kNetworkFormat = "zonal-opf-net/1";
inline constexpr const char* kResultsFormat = "zonal-opf-results/1";

namespace detail {

inline void check_format_tag(const std::string& tag, const char* expected,
                             const std::string& where) {
  // Major version must match; the minor part (after '.') may move.
  std::string want(expected);
  std::string want_prefix = want.substr(0, want.find('/'));
  std::string want_major = want.substr(want.find('/') + 1);
  auto slash = tag.find('/');
  if (slash == std::string::npos)
    throw DataError(where + ": malformed format tag '" + tag + "'");
  std::string prefix = tag.substr(0, slash);
  std::string version = tag.substr(slash + 1);
  std::string major = version.substr(0, version.find('.'));
  if (prefix != want_prefix || major != want_major)
    throw DataError(where + ": unsupported format '" + tag + "', expected '" +
                    want + "'");
}

template <typename T>
T require(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key))
    throw DataError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw DataError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline NetworkModel load_network(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
  std::string where = path.string();
  detail::check_format_tag(detail::require<std::string>(j, "format", where),
                           kNetworkFormat, where);

  NetworkModel m;
  m.base_mva = j.value("base_mva", 100.0);

  auto element = [&where](const char* array, size_t i) {
    return where + ": " + array + "[" + std::to_string(i) + "]";
  };

  if (j.contains("ac_nodes"))
    for (size_t i = 0; i < j["ac_nodes"].size(); ++i) {
      const auto& e = j["ac_nodes"][i];
      std::string el = element("ac_nodes", i);
      AcNode n;
      n.id = detail::require<std::string>(e, "id", el);
      n.zone = detail::require<std::string>(e, "zone", el);
      std::string kind = detail::require<std::string>(e, "kind", el);
      if (kind == "slack")
        n.kind = AcNodeKind::kSlack;
      else if (kind == "generation")
        n.kind = AcNodeKind::kGeneration;
      else if (kind == "load-only")
        n.kind = AcNodeKind::kLoadOnly;
      else
        throw DataError(el + ": kind must be slack|generation|load-only");
      n.v_min = e.value("v_min", n.v_min);
      n.v_max = e.value("v_max", n.v_max);
      n.base_kv = e.value("base_kv", n.base_kv);
      m.ac_nodes.push_back(n);
    }
  if (j.contains("ac_branches"))
    for (size_t i = 0; i < j["ac_branches"].size(); ++i) {
      const auto& e = j["ac_branches"][i];
      std::string el = element("ac_branches", i);
      AcBranch b;
      b.from = detail::require<std::string>(e, "from", el);
      b.to = detail::require<std::string>(e, "to", el);
      b.r = e.value("r", 0.0);
      b.x = detail::require<double>(e, "x", el);
      b.b = e.value("b", 0.0);
      b.s_rating = detail::require<double>(e, "s_rating", el);
      m.ac_branches.push_back(b);
    }
  if (j.contains("dc_nodes"))
    for (size_t i = 0; i < j["dc_nodes"].size(); ++i) {
      const auto& e = j["dc_nodes"][i];
      std::string el = element("dc_nodes", i);
      DcNode n;
      n.id = detail::require<std::string>(e, "id", el);
      n.zone = detail::require<std::string>(e, "zone", el);
      n.v_min = e.value("v_min", n.v_min);
      n.v_max = e.value("v_max", n.v_max);
      n.base_kv = e.value("base_kv", n.base_kv);
      m.dc_nodes.push_back(n);
    }
  if (j.contains("dc_lines"))
    for (size_t i = 0; i < j["dc_lines"].size(); ++i) {
      const auto& e = j["dc_lines"][i];
      std::string el = element("dc_lines", i);
      DcLine l;
      l.from = detail::require<std::string>(e, "from", el);
      l.to = detail::require<std::string>(e, "to", el);
      l.r = detail::require<double>(e, "r", el);
      l.p_rating = detail::require<double>(e, "p_rating", el);
      m.dc_lines.push_back(l);
    }
  if (j.contains("converters"))
    for (size_t i = 0; i < j["converters"].size(); ++i) {
      const auto& e = j["converters"][i];
      std::string el = element("converters", i);
      Converter c;
      c.ac_node = detail::require<std::string>(e, "ac_node", el);
      c.dc_node = detail::require<std::string>(e, "dc_node", el);
      c.s_rating = detail::require<double>(e, "s_rating", el);
      c.loss_a = e.value("loss_a", 0.0);
      c.loss_b = e.value("loss_b", 0.0);
      c.loss_c = e.value("loss_c", 0.0);
      m.converters.push_back(c);
    }
  if (j.contains("generators"))
    for (size_t i = 0; i < j["generators"].size(); ++i) {
      const auto& e = j["generators"][i];
      std::string el = element("generators", i);
      Generator g;
      g.node = detail::require<std::string>(e, "node", el);
      g.zone = detail::require<std::string>(e, "zone", el);
      g.p_min = e.value("p_min", 0.0);
      g.p_max = detail::require<double>(e, "p_max", el);
      g.q_min = e.value("q_min", 0.0);
      g.q_max = e.value("q_max", 0.0);
      m.generators.push_back(g);
    }
  if (j.contains("renewables"))
    for (size_t i = 0; i < j["renewables"].size(); ++i) {
      const auto& e = j["renewables"][i];
      std::string el = element("renewables", i);
      RenewableUnit r;
      r.node = detail::require<std::string>(e, "node", el);
      r.zone = detail::require<std::string>(e, "zone", el);
      r.capacity = detail::require<double>(e, "capacity", el);
      r.profile = detail::require<std::string>(e, "profile", el);
      m.renewables.push_back(r);
    }
  if (j.contains("loads"))
    for (size_t i = 0; i < j["loads"].size(); ++i) {
      const auto& e = j["loads"][i];
      std::string el = element("loads", i);
      Load l;
      l.node = detail::require<std::string>(e, "node", el);
      l.zone = detail::require<std::string>(e, "zone", el);
      l.profile = detail::require<std::string>(e, "profile", el);
      l.power_factor = e.value("power_factor", 0.95);
      m.loads.push_back(l);
    }
  if (j.contains("zones"))
    for (size_t i = 0; i < j["zones"].size(); ++i) {
      const auto& e = j["zones"][i];
      std::string el = element("zones", i);
      PriceZone z;
      z.id = detail::require<std::string>(e, "id", el);
      std::string kind = detail::require<std::string>(e, "kind", el);
      if (kind == "onshore")
        z.kind = ZoneKind::kOnshore;
      else if (kind == "offshore")
        z.kind = ZoneKind::kOffshore;
      else
        throw DataError(el + ": kind must be onshore|offshore");
      m.zones.push_back(z);
    }
  return m;
}

inline void save_network(const NetworkModel& m,
                         const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = kNetworkFormat;
  j["base_mva"] = m.base_mva;
  j["ac_nodes"] = nlohmann::json::array();
  for (const auto& n : m.ac_nodes)
    j["ac_nodes"].push_back({{"id", n.id},
                             {"zone", n.zone},
                             {"kind", to_string(n.kind)},
                             {"v_min", n.v_min},
                             {"v_max", n.v_max},
                             {"base_kv", n.base_kv}});
  j["ac_branches"] = nlohmann::json::array();
  for (const auto& b : m.ac_branches)
    j["ac_branches"].push_back({{"from", b.from},
                                {"to", b.to},
                                {"r", b.r},
                                {"x", b.x},
                                {"b", b.b},
                                {"s_rating", b.s_rating}});
  j["dc_nodes"] = nlohmann::json::array();
  for (const auto& n : m.dc_nodes)
    j["dc_nodes"].push_back({{"id", n.id},
                             {"zone", n.zone},
                             {"v_min", n.v_min},
                             {"v_max", n.v_max},
                             {"base_kv", n.base_kv}});
  j["dc_lines"] = nlohmann::json::array();
  for (const auto& l : m.dc_lines)
    j["dc_lines"].push_back(
        {{"from", l.from}, {"to", l.to}, {"r", l.r}, {"p_rating", l.p_rating}});
  j["converters"] = nlohmann::json::array();
  for (const auto& c : m.converters)
    j["converters"].push_back({{"ac_node", c.ac_node},
                               {"dc_node", c.dc_node},
                               {"s_rating", c.s_rating},
                               {"loss_a", c.loss_a},
                               {"loss_b", c.loss_b},
                               {"loss_c", c.loss_c}});
  j["generators"] = nlohmann::json::array();
  for (const auto& g : m.generators)
    j["generators"].push_back({{"node", g.node},
                               {"zone", g.zone},
                               {"p_min", g.p_min},
                               {"p_max", g.p_max},
                               {"q_min", g.q_min},
                               {"q_max", g.q_max}});
  j["renewables"] = nlohmann::json::array();
  for (const auto& r : m.renewables)
    j["renewables"].push_back({{"node", r.node},
                               {"zone", r.zone},
                               {"capacity", r.capacity},
                               {"profile", r.profile}});
  j["loads"] = nlohmann::json::array();
  for (const auto& l : m.loads)
    j["loads"].push_back({{"node", l.node},
                          {"zone", l.zone},
                          {"profile", l.profile},
                          {"power_factor", l.power_factor}});
  j["zones"] = nlohmann::json::array();
  for (const auto& z : m.zones)
    j["zones"].push_back({{"id", z.id}, {"kind", to_string(z.kind)}});
  write_text_file_atomic(path, j.dump(2) + "\n");
}

namespace detail {

// Column order helper: indices of `ids` in ascending id order.
inline std::vector<int> sorted_order(const std::vector<std::string>& ids) {
  std::vector<int> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&ids](int a, int b) { return ids[a] < ids[b]; });
  return order;
}

}  // namespace detail

// Write prices.csv, curtailment.csv, pn.csv, flows.csv and summary.json.
// Numbers carry 6 significant digits; rows are sorted by timestep; columns
// follow ascending element ids. Returns the written paths.
inline std::vector<std::filesystem::path> emit_results(
    const RunSummary& summary, const std::filesystem::path& out_dir,
    const std::string& timestamp = "") {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw DataError("cannot create output directory " + out_dir.string() +
                    ": " + ec.message());

  std::vector<fs::path> written;
  auto guard_write = [&](const fs::path& p, const std::string& content) {
    try {
      write_text_file_atomic(p, content);
      written.push_back(p);
    } catch (const DataError& e) {
      std::string done;
      for (const auto& w : written) done += "\n  " + w.string();
      throw DataError(std::string(e.what()) +
                      "\npartial output, files already written:" +
                      (done.empty() ? "\n  (none)" : done));
    }
  };

  auto zorder = detail::sorted_order(summary.zone_ids);
  auto rorder = detail::sorted_order(summary.ren_labels);

  // prices.csv
  {
    std::string csv = "timestep";
    for (int z : zorder) csv += "," + summary.zone_ids[z];
    csv += ",status\n";
    for (const auto& st : summary.steps) {
      csv += std::to_string(st.timestep);
      for (int z : zorder)
        csv += "," + (st.converged ? format_sig6(st.dispatch.zone_price[z])
                                   : std::string());
      csv += "," + std::string(to_string(st.status)) + "\n";
    }
    guard_write(out_dir / "prices.csv", csv);
  }

  // curtailment.csv (percent per renewable unit)
  {
    std::string csv = "timestep";
    for (int r : rorder) csv += "," + summary.ren_labels[r];
    csv += ",status\n";
    for (const auto& st : summary.steps) {
      csv += std::to_string(st.timestep);
      for (int r : rorder)
        csv += "," + (st.converged
                          ? format_sig6(100.0 * st.dispatch.curtailment[r])
                          : std::string());
      csv += "," + std::string(to_string(st.status)) + "\n";
    }
    guard_write(out_dir / "curtailment.csv", csv);
  }

  // pn.csv: net position and its admissible interval per zone.
  {
    std::string csv = "timestep";
    for (int z : zorder) {
      const std::string& id = summary.zone_ids[z];
      csv += "," + id + "_pn," + id + "_pn_min," + id + "_pn_max";
    }
    csv += ",status\n";
    for (const auto& st : summary.steps) {
      csv += std::to_string(st.timestep);
      for (int z : zorder) {
        csv += "," + (st.converged ? format_sig6(st.dispatch.zone_pn_mw[z])
                                   : std::string());
        bool have_bounds = z < (int)st.pn_min_mw.size();
        csv += "," + (have_bounds ? format_sig6(st.pn_min_mw[z]) : std::string());
        csv += "," + (have_bounds ? format_sig6(st.pn_max_mw[z]) : std::string());
      }
      csv += "," + std::string(to_string(st.status)) + "\n";
    }
    guard_write(out_dir / "pn.csv", csv);
  }

  // flows.csv: from-end MW per AC branch and DC line, AC-side MW per converter.
  {
    auto border = detail::sorted_order(summary.ac_branch_labels);
    auto lorder = detail::sorted_order(summary.dc_line_labels);
    auto corder = detail::sorted_order(summary.conv_labels);
    std::string csv = "timestep";
    for (int b : border) csv += "," + summary.ac_branch_labels[b];
    for (int l : lorder) csv += "," + summary.dc_line_labels[l];
    for (int c : corder) csv += "," + summary.conv_labels[c];
    csv += ",status\n";
    for (const auto& st : summary.steps) {
      csv += std::to_string(st.timestep);
      for (int b : border)
        csv += "," + (st.converged ? format_sig6(st.dispatch.ac_flows[b].p_from_mw)
                                   : std::string());
      for (int l : lorder)
        csv += "," + (st.converged ? format_sig6(st.dispatch.dc_flows[l].p_from_mw)
                                   : std::string());
      for (int c : corder)
        csv += "," + (st.converged ? format_sig6(st.dispatch.conv_p_ac_mw[c])
                                   : std::string());
      csv += "," + std::string(to_string(st.status)) + "\n";
    }
    guard_write(out_dir / "flows.csv", csv);
  }

  // summary.json
  {
    nlohmann::json j;
    j["format"] = kResultsFormat;
    if (!timestamp.empty()) j["generated_at"] = timestamp;
    j["scenario"] = to_string(summary.config.scenario);
    j["config"] = {{"from", summary.config.t_from},
                   {"to", summary.config.t_to},
                   {"delta_rho_inc", summary.config.delta_rho_inc},
                   {"kkt_tol", summary.config.solver.kkt_tol},
                   {"chunks", summary.config.chunks}};
    if (!summary.config.network_path.empty()) {
      j["config"]["network"] = summary.config.network_path;
      j["config"]["profiles"] = summary.config.profiles_path;
      j["config"]["curves"] = summary.config.curves_path;
    }
    int converged = summary.converged_steps();
    j["steps"] = {{"total", (int)summary.steps.size()}, {"converged", converged}};
    nlohmann::json status_counts = nlohmann::json::object();
    for (const auto& st : summary.steps) {
      std::string key = to_string(st.status);
      status_counts[key] = status_counts.value(key, 0) + 1;
    }
    j["steps"]["status_counts"] = status_counts;
    if (summary.has_aggregates) {
      const auto& agg = summary.aggregates;
      j["solver"] = {{"total_iterations", agg.total_iterations},
                     {"mean_iterations", agg.mean_iterations},
                     {"mean_wall_seconds", agg.mean_wall_seconds},
                     {"median_wall_seconds", agg.median_wall_seconds},
                     {"max_wall_seconds", agg.max_wall_seconds}};
      nlohmann::json zones = nlohmann::json::object();
      for (size_t z = 0; z < summary.zone_ids.size(); ++z) {
        const auto& zi = agg.zones[z];
        double mean_price = 0.0;
        for (double pv : zi.price_duration) mean_price += pv;
        if (!zi.price_duration.empty()) mean_price /= zi.price_duration.size();
        zones[summary.zone_ids[z]] = {
            {"mean_price", mean_price},
            {"pn_min_binding_steps", zi.pn_min_binding},
            {"pn_max_binding_steps", zi.pn_max_binding},
            {"price_duration", zi.price_duration}};
      }
      nlohmann::json rens = nlohmann::json::object();
      for (size_t r = 0; r < summary.ren_labels.size(); ++r)
        rens[summary.ren_labels[r]] = {
            {"mean_curtailment_pct", agg.renewables[r].mean_curtailment_pct},
            {"max_curtailment_pct", agg.renewables[r].max_curtailment_pct}};
      j["indicators"] = {{"zones", zones},
                         {"renewables", rens},
                         {"mtdc_binding_steps", agg.mtdc_binding_steps}};
    }
    guard_write(out_dir / "summary.json", j.dump(2) + "\n");
  }
  return written;
}

// fitted_models.csv for the curve-fitting subcommand.
inline void save_fitted_models(
    const std::vector<std::tuple<std::string, int, ZoneCostModel>>& rows,
    const std::filesystem::path& path) {
  std::string csv = "zone,timestep,alpha,beta,rho_eq,pn_min,pn_max\n";
  for (const auto& [zone, t, m] : rows)
    csv += strprintf("%s,%d,%s,%s,%s,%s,%s\n", zone.c_str(), t,
                     format_sig6(m.alpha).c_str(), format_sig6(m.beta).c_str(),
                     format_sig6(m.rho_eq).c_str(), format_sig6(m.pn_min).c_str(),
                     format_sig6(m.pn_max).c_str());
  write_text_file_atomic(path, csv);
}

// File-driven run: load + validate the inputs, then delegate.
inline RunSummary run_range(const RunConfig& config) {
  if (config.network_path.empty() || config.profiles_path.empty() ||
      config.curves_path.empty())
    throw DataError("run_range: network, profiles and curves paths are required");
  NetworkModel model = load_network(config.network_path);
  ValidationReport rep = validate_network(model);
  if (!rep.ok())
    throw DataError("network validation failed:\n" + rep.to_string());
  ProfileTable profiles = load_profiles(config.profiles_path);
  CurveArchive curves = parse_bid_curves(config.curves_path);
  return run_range(model, profiles, curves, config);
}

}  // namespace zonalopf
