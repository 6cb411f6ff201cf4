#pragma once

// Core grid model: AC/DC nodes and branches, converters, devices, price
// zones, structural validation, and zone-level power accounting.

#include <map>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "zonalopf/common.hpp"

namespace zonalopf {

enum class AcNodeKind { kSlack, kGeneration, kLoadOnly };
enum class ZoneKind { kOnshore, kOffshore };

inline const char* to_string(AcNodeKind k) {
  switch (k) {
    case AcNodeKind::kSlack: return "slack";
    case AcNodeKind::kGeneration: return "generation";
    case AcNodeKind::kLoadOnly: return "load-only";
  }
  return "?";
}

inline const char* to_string(ZoneKind k) {
  return k == ZoneKind::kOnshore ? "onshore" : "offshore";
}

struct AcNode {
  std::string id;
  std::string zone;
  AcNodeKind kind = AcNodeKind::kGeneration;
  double v_min = 0.9;   // pu
  double v_max = 1.1;   // pu
  double base_kv = 380.0;
};

struct AcBranch {
  std::string from;
  std::string to;
  double r = 0.0;        // pu series resistance
  double x = 0.0;        // pu series reactance
  double b = 0.0;        // pu total shunt susceptance (split half/half)
  double s_rating = 0.0; // MVA apparent-power limit per end
};

struct DcNode {
  std::string id;
  std::string zone;
  double v_min = 0.95;  // pu
  double v_max = 1.05;  // pu
  double base_kv = 525.0;
};

struct DcLine {
  std::string from;
  std::string to;
  double r = 0.0;        // pu resistance; 0 means near-ideal coupler
  double p_rating = 0.0; // MW limit per end
};

struct Converter {
  std::string ac_node;
  std::string dc_node;
  double s_rating = 0.0;  // MVA on the AC side
  double loss_a = 0.0;    // MW constant loss
  double loss_b = 0.0;    // proportional loss coefficient (per MW)
  double loss_c = 0.0;    // quadratic loss coefficient (per MW^2), in 1/MW
};

struct Generator {
  std::string node;   // AC node id
  std::string zone;
  double p_min = 0.0; // MW
  double p_max = 0.0; // MW
  double q_min = 0.0; // MVAr
  double q_max = 0.0; // MVAr
};

struct RenewableUnit {
  std::string node;        // AC or DC node id
  std::string zone;
  double capacity = 0.0;   // MW installed
  std::string profile;     // availability profile id
};

struct Load {
  std::string node;  // AC node id
  std::string zone;
  std::string profile;        // active-power profile id (MW)
  double power_factor = 0.95;  // lagging; fixes Q from P
};

struct PriceZone {
  std::string id;
  ZoneKind kind = ZoneKind::kOnshore;
};

struct NetworkModel {
  double base_mva = 100.0;
  std::vector<AcNode> ac_nodes;
  std::vector<AcBranch> ac_branches;
  std::vector<DcNode> dc_nodes;
  std::vector<DcLine> dc_lines;
  std::vector<Converter> converters;
  std::vector<Generator> generators;
  std::vector<RenewableUnit> renewables;
  std::vector<Load> loads;
  std::vector<PriceZone> zones;
};

struct ValidationIssue {
  std::string element;  // e.g. "ac_branch[3]", "generator[0]"
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
  std::string to_string() const {
    std::string out;
    for (const auto& i : issues) out += i.element + ": " + i.message + "\n";
    return out;
  }
};

namespace detail {

class UnionFind {
 public:
  explicit UnionFind(int n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  int find(int a) {
    while (parent_[a] != a) a = parent_[a] = parent_[parent_[a]];
    return a;
  }
  void unite(int a, int b) { parent_[find(a)] = find(b); }

 private:
  std::vector<int> parent_;
};

}  // namespace detail

// Structural checks; collects every issue instead of stopping at the first.
inline ValidationReport validate_network(const NetworkModel& m) {
  ValidationReport rep;
  auto issue = [&rep](const std::string& el, const std::string& msg) {
    rep.issues.push_back({el, msg});
  };

  std::unordered_map<std::string, int> ac_ids, dc_ids, zone_ids;
  for (size_t i = 0; i < m.ac_nodes.size(); ++i) {
    const auto& n = m.ac_nodes[i];
    std::string el = "ac_node[" + std::to_string(i) + "]";
    if (n.id.empty()) issue(el, "empty id");
    if (!ac_ids.emplace(n.id, static_cast<int>(i)).second)
      issue(el, "duplicate ac node id '" + n.id + "'");
    if (!(n.v_min > 0.0) || !(n.v_max >= n.v_min))
      issue(el, "voltage bounds must satisfy 0 < v_min <= v_max");
  }
  for (size_t i = 0; i < m.dc_nodes.size(); ++i) {
    const auto& n = m.dc_nodes[i];
    std::string el = "dc_node[" + std::to_string(i) + "]";
    if (n.id.empty()) issue(el, "empty id");
    if (ac_ids.count(n.id)) issue(el, "id '" + n.id + "' collides with an ac node");
    if (!dc_ids.emplace(n.id, static_cast<int>(i)).second)
      issue(el, "duplicate dc node id '" + n.id + "'");
    if (!(n.v_min > 0.0) || !(n.v_max >= n.v_min))
      issue(el, "voltage bounds must satisfy 0 < v_min <= v_max");
  }
  for (size_t i = 0; i < m.zones.size(); ++i) {
    const auto& z = m.zones[i];
    std::string el = "zone[" + std::to_string(i) + "]";
    if (z.id.empty()) issue(el, "empty id");
    if (!zone_ids.emplace(z.id, static_cast<int>(i)).second)
      issue(el, "duplicate zone id '" + z.id + "'");
  }

  auto check_zone = [&](const std::string& el, const std::string& zone) {
    if (!zone_ids.count(zone)) issue(el, "unknown zone '" + zone + "'");
  };
  auto zone_kind = [&](const std::string& zone) -> const PriceZone* {
    auto it = zone_ids.find(zone);
    return it == zone_ids.end() ? nullptr : &m.zones[it->second];
  };

  for (size_t i = 0; i < m.ac_nodes.size(); ++i)
    check_zone("ac_node[" + std::to_string(i) + "]", m.ac_nodes[i].zone);
  for (size_t i = 0; i < m.dc_nodes.size(); ++i)
    check_zone("dc_node[" + std::to_string(i) + "]", m.dc_nodes[i].zone);

  for (size_t i = 0; i < m.ac_branches.size(); ++i) {
    const auto& br = m.ac_branches[i];
    std::string el = "ac_branch[" + std::to_string(i) + "]";
    if (!ac_ids.count(br.from)) issue(el, "unknown from node '" + br.from + "'");
    if (!ac_ids.count(br.to)) issue(el, "unknown to node '" + br.to + "'");
    if (br.from == br.to) issue(el, "self loop");
    if (br.r * br.r + br.x * br.x <= 0.0) issue(el, "zero series impedance");
    if (!(br.s_rating > 0.0)) issue(el, "s_rating must be positive");
  }
  for (size_t i = 0; i < m.dc_lines.size(); ++i) {
    const auto& ln = m.dc_lines[i];
    std::string el = "dc_line[" + std::to_string(i) + "]";
    if (!dc_ids.count(ln.from)) issue(el, "unknown from node '" + ln.from + "'");
    if (!dc_ids.count(ln.to)) issue(el, "unknown to node '" + ln.to + "'");
    if (ln.from == ln.to) issue(el, "self loop");
    if (ln.r < 0.0) issue(el, "negative resistance");
    if (!(ln.p_rating > 0.0)) issue(el, "p_rating must be positive");
  }
  for (size_t i = 0; i < m.converters.size(); ++i) {
    const auto& cv = m.converters[i];
    std::string el = "converter[" + std::to_string(i) + "]";
    if (!ac_ids.count(cv.ac_node)) issue(el, "unknown ac node '" + cv.ac_node + "'");
    if (!dc_ids.count(cv.dc_node)) issue(el, "unknown dc node '" + cv.dc_node + "'");
    if (!(cv.s_rating > 0.0)) issue(el, "s_rating must be positive");
    if (cv.loss_a < 0.0 || cv.loss_b < 0.0 || cv.loss_c < 0.0)
      issue(el, "loss coefficients must be non-negative");
  }
  for (size_t i = 0; i < m.generators.size(); ++i) {
    const auto& g = m.generators[i];
    std::string el = "generator[" + std::to_string(i) + "]";
    auto it = ac_ids.find(g.node);
    if (it == ac_ids.end()) issue(el, "unknown node '" + g.node + "'");
    check_zone(el, g.zone);
    if (it != ac_ids.end() && zone_ids.count(g.zone) &&
        m.ac_nodes[it->second].zone != g.zone)
      issue(el, "zone '" + g.zone + "' differs from its node's zone '" +
                    m.ac_nodes[it->second].zone + "'");
    if (g.p_min > g.p_max) issue(el, "p_min > p_max");
    if (g.q_min > g.q_max) issue(el, "q_min > q_max");
    if (const PriceZone* z = zone_kind(g.zone); z && z->kind == ZoneKind::kOffshore)
      issue(el, "offshore zone '" + g.zone + "' cannot host conventional generation");
  }
  for (size_t i = 0; i < m.renewables.size(); ++i) {
    const auto& r = m.renewables[i];
    std::string el = "renewable[" + std::to_string(i) + "]";
    bool on_ac = ac_ids.count(r.node) > 0;
    bool on_dc = dc_ids.count(r.node) > 0;
    if (!on_ac && !on_dc) issue(el, "unknown node '" + r.node + "'");
    check_zone(el, r.zone);
    const std::string* node_zone = nullptr;
    if (on_ac) node_zone = &m.ac_nodes[ac_ids[r.node]].zone;
    if (on_dc) node_zone = &m.dc_nodes[dc_ids[r.node]].zone;
    if (node_zone && zone_ids.count(r.zone) && *node_zone != r.zone)
      issue(el, "zone '" + r.zone + "' differs from its node's zone '" +
                    *node_zone + "'");
    if (r.capacity < 0.0) issue(el, "negative capacity");
    if (r.profile.empty()) issue(el, "empty profile id");
  }
  for (size_t i = 0; i < m.loads.size(); ++i) {
    const auto& l = m.loads[i];
    std::string el = "load[" + std::to_string(i) + "]";
    auto it = ac_ids.find(l.node);
    if (it == ac_ids.end()) issue(el, "unknown node '" + l.node + "'");
    check_zone(el, l.zone);
    if (it != ac_ids.end() && zone_ids.count(l.zone) &&
        m.ac_nodes[it->second].zone != l.zone)
      issue(el, "zone '" + l.zone + "' differs from its node's zone '" +
                    m.ac_nodes[it->second].zone + "'");
    if (!(l.power_factor > 0.0) || l.power_factor > 1.0)
      issue(el, "power_factor must be in (0, 1]");
    if (l.profile.empty()) issue(el, "empty profile id");
    if (const PriceZone* z = zone_kind(l.zone); z && z->kind == ZoneKind::kOffshore)
      issue(el, "offshore zone '" + l.zone + "' cannot host demand");
  }

  if (!(m.base_mva > 0.0)) issue("network", "base_mva must be positive");

  // Exactly one slack node per AC island.
  if (!m.ac_nodes.empty()) {
    detail::UnionFind uf(static_cast<int>(m.ac_nodes.size()));
    for (const auto& br : m.ac_branches) {
      auto fi = ac_ids.find(br.from);
      auto ti = ac_ids.find(br.to);
      if (fi != ac_ids.end() && ti != ac_ids.end()) uf.unite(fi->second, ti->second);
    }
    std::map<int, std::vector<int>> islands;
    for (size_t i = 0; i < m.ac_nodes.size(); ++i)
      islands[uf.find(static_cast<int>(i))].push_back(static_cast<int>(i));
    for (const auto& [root, members] : islands) {
      int slacks = 0;
      for (int idx : members)
        if (m.ac_nodes[idx].kind == AcNodeKind::kSlack) ++slacks;
      if (slacks != 1)
        issue("ac_node[" + std::to_string(members.front()) + "]",
              strprintf("ac island with %zu nodes has %d slack nodes, expected 1",
                        members.size(), slacks));
    }
  }

  return rep;
}

// Resolved integer indexing over a validated model.
struct NetworkIndex {
  std::unordered_map<std::string, int> ac_node;
  std::unordered_map<std::string, int> dc_node;
  std::unordered_map<std::string, int> zone;

  // Device incidence per node.
  std::vector<std::vector<int>> gens_at_ac;
  std::vector<std::vector<int>> loads_at_ac;
  std::vector<std::vector<int>> rens_at_ac;
  std::vector<std::vector<int>> convs_at_ac;
  std::vector<std::vector<int>> rens_at_dc;
  std::vector<std::vector<int>> convs_at_dc;

  // Membership per zone (model order).
  std::vector<std::vector<int>> zone_gens;
  std::vector<std::vector<int>> zone_rens;
  std::vector<std::vector<int>> zone_loads;

  std::vector<int> ac_island;      // island ordinal per AC node
  std::vector<int> island_slack;   // AC node index of each island's slack
  int num_islands = 0;

  static NetworkIndex build(const NetworkModel& m) {
    NetworkIndex ix;
    for (size_t i = 0; i < m.ac_nodes.size(); ++i)
      ix.ac_node[m.ac_nodes[i].id] = static_cast<int>(i);
    for (size_t i = 0; i < m.dc_nodes.size(); ++i)
      ix.dc_node[m.dc_nodes[i].id] = static_cast<int>(i);
    for (size_t i = 0; i < m.zones.size(); ++i)
      ix.zone[m.zones[i].id] = static_cast<int>(i);

    auto ac_of = [&](const std::string& id, const char* what) {
      auto it = ix.ac_node.find(id);
      if (it == ix.ac_node.end())
        throw DataError(std::string(what) + ": unknown ac node '" + id + "'");
      return it->second;
    };
    auto dc_of = [&](const std::string& id, const char* what) {
      auto it = ix.dc_node.find(id);
      if (it == ix.dc_node.end())
        throw DataError(std::string(what) + ": unknown dc node '" + id + "'");
      return it->second;
    };
    auto zone_of = [&](const std::string& id, const char* what) {
      auto it = ix.zone.find(id);
      if (it == ix.zone.end())
        throw DataError(std::string(what) + ": unknown zone '" + id + "'");
      return it->second;
    };

    ix.gens_at_ac.resize(m.ac_nodes.size());
    ix.loads_at_ac.resize(m.ac_nodes.size());
    ix.rens_at_ac.resize(m.ac_nodes.size());
    ix.convs_at_ac.resize(m.ac_nodes.size());
    ix.rens_at_dc.resize(m.dc_nodes.size());
    ix.convs_at_dc.resize(m.dc_nodes.size());
    ix.zone_gens.resize(m.zones.size());
    ix.zone_rens.resize(m.zones.size());
    ix.zone_loads.resize(m.zones.size());

    for (size_t i = 0; i < m.generators.size(); ++i) {
      ix.gens_at_ac[ac_of(m.generators[i].node, "generator")].push_back((int)i);
      ix.zone_gens[zone_of(m.generators[i].zone, "generator")].push_back((int)i);
    }
    for (size_t i = 0; i < m.loads.size(); ++i) {
      ix.loads_at_ac[ac_of(m.loads[i].node, "load")].push_back((int)i);
      ix.zone_loads[zone_of(m.loads[i].zone, "load")].push_back((int)i);
    }
    for (size_t i = 0; i < m.renewables.size(); ++i) {
      const auto& r = m.renewables[i];
      if (ix.ac_node.count(r.node))
        ix.rens_at_ac[ix.ac_node[r.node]].push_back((int)i);
      else
        ix.rens_at_dc[dc_of(r.node, "renewable")].push_back((int)i);
      ix.zone_rens[zone_of(r.zone, "renewable")].push_back((int)i);
    }
    for (size_t i = 0; i < m.converters.size(); ++i) {
      ix.convs_at_ac[ac_of(m.converters[i].ac_node, "converter")].push_back((int)i);
      ix.convs_at_dc[dc_of(m.converters[i].dc_node, "converter")].push_back((int)i);
    }

    // AC islands and their slack nodes.
    ix.ac_island.assign(m.ac_nodes.size(), -1);
    if (!m.ac_nodes.empty()) {
      detail::UnionFind uf(static_cast<int>(m.ac_nodes.size()));
      for (const auto& br : m.ac_branches)
        uf.unite(ac_of(br.from, "ac_branch"), ac_of(br.to, "ac_branch"));
      std::map<int, int> root_to_island;
      for (size_t i = 0; i < m.ac_nodes.size(); ++i) {
        int root = uf.find(static_cast<int>(i));
        auto [it, inserted] = root_to_island.emplace(root, ix.num_islands);
        if (inserted) ++ix.num_islands;
        ix.ac_island[i] = it->second;
      }
      ix.island_slack.assign(ix.num_islands, -1);
      for (size_t i = 0; i < m.ac_nodes.size(); ++i)
        if (m.ac_nodes[i].kind == AcNodeKind::kSlack)
          ix.island_slack[ix.ac_island[i]] = static_cast<int>(i);
      for (int isl = 0; isl < ix.num_islands; ++isl)
        if (ix.island_slack[isl] < 0)
          throw DataError(strprintf("ac island %d has no slack node", isl));
    }
    return ix;
  }
};

// A solved operating point plus market outputs, in engineering units.
struct DispatchResult {
  // Electrical state.
  std::vector<double> ac_vm;      // pu, per AC node
  std::vector<double> ac_theta;   // rad, per AC node
  std::vector<double> dc_v;       // pu, per DC node
  std::vector<double> gen_p_mw;
  std::vector<double> gen_q_mvar;
  std::vector<double> ren_gamma;     // dispatch factor in [0, 1]
  std::vector<double> ren_avail_mw;  // availability offered this step
  std::vector<double> load_p_mw;
  std::vector<double> conv_p_ac_mw;  // AC-side injection into the converter
  std::vector<double> conv_q_ac_mvar;
  std::vector<double> conv_p_dc_mw;  // DC-side injection into the converter
  std::vector<double> conv_loss_mw;

  struct AcFlow {
    double p_from_mw, q_from_mvar, p_to_mw, q_to_mvar, loss_mw;
  };
  struct DcFlow {
    double p_from_mw, p_to_mw, loss_mw;
  };
  std::vector<AcFlow> ac_flows;
  std::vector<DcFlow> dc_flows;

  // Market quantities per zone, model order.
  std::vector<double> zone_price;         // EUR/MWh
  std::vector<double> zone_pn_mw;         // net position
  std::vector<double> zone_pg_mw;         // aggregate supply
  std::vector<double> zone_pd_mw;         // aggregate demand
  std::vector<double> zone_balance_dual;  // EUR/MWh; NaN where not defined

  std::vector<double> curtailment;  // 1 - gamma, per renewable
};

struct ZoneBalance {
  double p_gen_mw = 0.0;
  double p_demand_mw = 0.0;
  double p_net_mw = 0.0;
};

// Net position of one zone from a dispatch: aggregate injections minus
// aggregate demand, renewables counted at gamma * availability.
inline ZoneBalance zone_net_position(const NetworkModel& m,
                                     const NetworkIndex& ix,
                                     const std::string& zone_id,
                                     const DispatchResult& d) {
  auto it = ix.zone.find(zone_id);
  if (it == ix.zone.end()) throw DataError("unknown zone '" + zone_id + "'");
  int z = it->second;
  ZoneBalance out;
  for (int g : ix.zone_gens[z]) out.p_gen_mw += d.gen_p_mw.at(g);
  for (int r : ix.zone_rens[z])
    out.p_gen_mw += d.ren_gamma.at(r) * d.ren_avail_mw.at(r);
  for (int l : ix.zone_loads[z]) out.p_demand_mw += d.load_p_mw.at(l);
  out.p_net_mw = out.p_gen_mw - out.p_demand_mw;
  return out;
}

inline ZoneBalance zone_net_position(const NetworkModel& m,
                                     const std::string& zone_id,
                                     const DispatchResult& d) {
  return zone_net_position(m, NetworkIndex::build(m), zone_id, d);
}

}  // namespace zonalopf
