#pragma once

// Builds the nonlinear program for one market timestep: AC/DC power flow
// with converter coupling, plus (in the zonal scenarios) per-zone supply and
// net-position variables tied to the fitted market cost models.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "zonalopf/market.hpp"
#include "zonalopf/network.hpp"

namespace zonalopf {

enum class ScenarioKind { kSI, kSII, kSIII };

inline const char* to_string(ScenarioKind s) {
  switch (s) {
    case ScenarioKind::kSI: return "SI";
    case ScenarioKind::kSII: return "SII";
    case ScenarioKind::kSIII: return "SIII";
  }
  return "?";
}

inline ScenarioKind scenario_from_string(const std::string& s) {
  if (s == "SI") return ScenarioKind::kSI;
  if (s == "SII") return ScenarioKind::kSII;
  if (s == "SIII") return ScenarioKind::kSIII;
  throw DataError("scenario must be one of SI, SII, SIII; got '" + s + "'");
}

// Exogenous data for one timestep, aligned with model element order.
struct StepInputs {
  std::vector<double> load_mw;       // per load
  std::vector<double> ren_avail_mw;  // per renewable unit
};

// Variable ordering of the flattened decision vector.
struct DecisionLayout {
  int num_ac = 0, num_dc = 0, num_gen = 0, num_ren = 0, num_conv = 0,
      num_zone = 0;
  bool zonal = false;  // zone-level P_G / P_N variables present
  int theta0 = 0, vm0 = 0, vdc0 = 0, pg0 = 0, qg0 = 0, gamma0 = 0, cvp0 = 0,
      cvq0 = 0, cvpdc0 = 0, zpg0 = 0, zpn0 = 0;
  int n = 0;

  int theta(int i) const { return theta0 + i; }
  int vm(int i) const { return vm0 + i; }
  int vdc(int i) const { return vdc0 + i; }
  int gen_p(int i) const { return pg0 + i; }
  int gen_q(int i) const { return qg0 + i; }
  int gamma(int i) const { return gamma0 + i; }
  int conv_p(int i) const { return cvp0 + i; }
  int conv_q(int i) const { return cvq0 + i; }
  int conv_pdc(int i) const { return cvpdc0 + i; }
  int zone_pg(int z) const { return zpg0 + z; }
  int zone_pn(int z) const { return zpn0 + z; }

  static DecisionLayout make(int num_ac, int num_dc, int num_gen, int num_ren,
                             int num_conv, int num_zone, bool zonal) {
    DecisionLayout L;
    L.num_ac = num_ac;
    L.num_dc = num_dc;
    L.num_gen = num_gen;
    L.num_ren = num_ren;
    L.num_conv = num_conv;
    L.num_zone = num_zone;
    L.zonal = zonal;
    int k = 0;
    L.theta0 = k; k += num_ac;
    L.vm0 = k; k += num_ac;
    L.vdc0 = k; k += num_dc;
    L.pg0 = k; k += num_gen;
    L.qg0 = k; k += num_gen;
    L.gamma0 = k; k += num_ren;
    L.cvp0 = k; k += num_conv;
    L.cvq0 = k; k += num_conv;
    L.cvpdc0 = k; k += num_conv;
    if (zonal) {
      L.zpg0 = k; k += num_zone;
      L.zpn0 = k; k += num_zone;
    }
    L.n = k;
    return L;
  }
};

// Row ordering of equality and inequality constraints.
struct ConstraintLayout {
  int ac_p0 = 0, ac_q0 = 0, dc0 = 0, conv0 = 0, slack0 = 0, zpg0 = 0, zpn0 = 0;
  int num_eq = 0;
  int br_from0 = 0, br_to0 = 0, dcl_from0 = 0, dcl_to0 = 0, conv_mva0 = 0;
  int num_ineq = 0;
};

// Smoothing half-width for |P| inside the converter loss curve, in pu.
inline constexpr double kLossSmoothingEps = 1e-4;

// Floor for DC line resistance so a zero-resistance coupler stays solvable.
inline constexpr double kDcResistanceFloor = 1e-9;

namespace detail {

struct BranchData {
  int from, to;
  double g, b, bsh2, s2;  // series admittance, half shunt, squared pu rating
};
struct DcLineData {
  int from, to;
  double inv_r, cap;  // 1/r (floored), pu rating
};
struct ConverterData {
  int ac, dc;
  double s, s2;         // pu rating and its square
  double a, bcoef, cpu; // loss curve in pu
};
struct GenData {
  int node, zone;
  double p_min, p_max, q_min, q_max;  // pu
};
struct RenData {
  bool on_dc;
  int node, zone;
  double avail;  // pu, clamped to capacity
};
struct LoadData {
  int node;
  double p, q;  // pu
};
struct ZoneData {
  ZoneKind kind;
  double pd;  // pu aggregate demand
  ZoneCostModel cost;
  std::vector<int> gens, rens;
};

struct FlowEnd {
  double p, q;
  double dp_dvf, dp_dvt, dp_dtf, dp_dtt;
  double dq_dvf, dq_dvt, dq_dtf, dq_dtt;
};

inline FlowEnd ac_flow_end(double vf, double vt, double tf, double tt,
                           const BranchData& br) {
  double th = tf - tt;
  double c = std::cos(th), s = std::sin(th);
  double gc_bs = br.g * c + br.b * s;
  double gs_bc = br.g * s - br.b * c;
  FlowEnd f;
  f.p = vf * vf * br.g - vf * vt * gc_bs;
  f.q = -vf * vf * (br.b + br.bsh2) - vf * vt * gs_bc;
  f.dp_dvf = 2.0 * vf * br.g - vt * gc_bs;
  f.dp_dvt = -vf * gc_bs;
  f.dp_dtf = vf * vt * gs_bc;
  f.dp_dtt = -f.dp_dtf;
  f.dq_dvf = -2.0 * vf * (br.b + br.bsh2) - vt * gs_bc;
  f.dq_dvt = -vf * gs_bc;
  f.dq_dtf = -vf * vt * gc_bs;
  f.dq_dtt = -f.dq_dtf;
  return f;
}

inline double smooth_abs(double p) {
  return std::sqrt(p * p + kLossSmoothingEps * kLossSmoothingEps);
}
inline double smooth_abs_d(double p) { return p / smooth_abs(p); }
inline double smooth_abs_dd(double p) {
  double s = smooth_abs(p);
  return kLossSmoothingEps * kLossSmoothingEps / (s * s * s);
}

}  // namespace detail

// Everything the constraint/objective closures need, shared immutably.
struct AssemblyData {
  NetworkModel model;
  NetworkIndex index;
  ScenarioKind scenario = ScenarioKind::kSI;
  double sbase = 100.0;
  StepInputs step_mw;  // original engineering-unit inputs

  std::vector<detail::BranchData> branches;
  std::vector<detail::DcLineData> dc_lines;
  std::vector<detail::ConverterData> converters;
  std::vector<detail::GenData> gens;
  std::vector<detail::RenData> rens;
  std::vector<detail::LoadData> loads;
  std::vector<detail::ZoneData> zones;
  std::vector<double> node_p_load, node_q_load;  // pu per AC node
};

struct ObjectiveSpec {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
  Eigen::VectorXd hessian_diag;
};

struct NlpProblem {
  int num_vars = 0, num_eq = 0, num_ineq = 0;
  Eigen::VectorXd lb, ub;  // |bound| >= kUnbounded means absent

  std::function<double(const Eigen::VectorXd&)> objective;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> objective_gradient;
  Eigen::VectorXd objective_hessian_diag;  // constant diagonal curvature model
  // Economic objective without solver regularization terms, for reporting;
  // falls back to `objective` when unset.
  std::function<double(const Eigen::VectorXd&)> objective_report;

  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> equalities;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> inequalities;

  // Sparse Jacobians: fixed (row, col) patterns with duplicate entries summed,
  // plus value fillers aligned entry-for-entry with the pattern.
  std::vector<std::pair<int, int>> eq_jacobian_pattern;
  std::vector<std::pair<int, int>> ineq_jacobian_pattern;
  std::function<void(const Eigen::VectorXd&, double*)> eq_jacobian_values;
  std::function<void(const Eigen::VectorXd&, double*)> ineq_jacobian_values;

  // Exact constraint curvature: appends the upper triangle of
  // sum_r y[r] * hess(g_r) + sum_r w[r] * hess(h_r) as triplets (duplicates
  // summed by the consumer). Objective curvature lives separately in
  // objective_hessian_diag. When unset the solver falls back to a
  // Gauss-Newton surrogate.
  std::function<void(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& w,
                     std::vector<Eigen::Triplet<double>>&)>
      constraint_hessian;

  DecisionLayout layout;
  ConstraintLayout rows;
  std::shared_ptr<const AssemblyData> data;  // null for hand-built problems
};

// Fixed-price objective: every MWh supplied (conventional or renewable) is
// priced at its zone's clearing price. Linear, constant gradient.
inline ObjectiveSpec objective_si(const std::shared_ptr<const AssemblyData>& d,
                                  const DecisionLayout& L) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(L.n);
  for (size_t g = 0; g < d->gens.size(); ++g)
    grad[L.gen_p((int)g)] = d->zones[d->gens[g].zone].cost.rho_eq * d->sbase;
  for (size_t r = 0; r < d->rens.size(); ++r)
    grad[L.gamma((int)r)] =
        d->zones[d->rens[r].zone].cost.rho_eq * d->sbase * d->rens[r].avail;
  ObjectiveSpec spec;
  spec.value = [grad](const Eigen::VectorXd& x) { return grad.dot(x); };
  spec.gradient = [grad](const Eigen::VectorXd&) { return grad; };
  spec.hessian_diag = Eigen::VectorXd::Zero(L.n);
  return spec;
}

// Zonal redispatch objective: sum of quadratic zone cost terms over net
// positions. Offshore zones have alpha = beta = 0 and contribute nothing.
inline ObjectiveSpec objective_sii(const std::shared_ptr<const AssemblyData>& d,
                                   const DecisionLayout& L) {
  int nz = L.num_zone;
  double S = d->sbase;
  std::vector<double> alpha(nz), beta(nz);
  for (int z = 0; z < nz; ++z) {
    alpha[z] = d->zones[z].cost.alpha;
    beta[z] = d->zones[z].cost.beta;
  }
  ObjectiveSpec spec;
  spec.value = [=](const Eigen::VectorXd& x) {
    double f = 0.0;
    for (int z = 0; z < nz; ++z) {
      double pn = S * x[L.zone_pn(z)];
      f += alpha[z] * pn * pn + beta[z] * pn;
    }
    return f;
  };
  spec.gradient = [=](const Eigen::VectorXd& x) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(L.n);
    for (int z = 0; z < nz; ++z) {
      double pn = S * x[L.zone_pn(z)];
      g[L.zone_pn(z)] = (2.0 * alpha[z] * pn + beta[z]) * S;
    }
    return g;
  };
  spec.hessian_diag = Eigen::VectorXd::Zero(L.n);
  for (int z = 0; z < nz; ++z)
    spec.hessian_diag[L.zone_pn(z)] = 2.0 * alpha[z] * S * S;
  return spec;
}

namespace detail {

// One code path emits both the sparsity pattern and the numeric values so
// they can never drift apart.
class JacobianEmitter {
 public:
  explicit JacobianEmitter(std::vector<std::pair<int, int>>* pattern)
      : pattern_(pattern) {}
  explicit JacobianEmitter(double* values) : values_(values) {}
  void operator()(int row, int col, double value) {
    if (pattern_) pattern_->push_back({row, col});
    if (values_) values_[k_] = value;
    ++k_;
  }

 private:
  std::vector<std::pair<int, int>>* pattern_ = nullptr;
  double* values_ = nullptr;
  size_t k_ = 0;
};

}  // namespace detail

// Assemble the per-timestep NLP. `costs` must hold a cost model for every
// zone (offshore zones included; see offshore_cost_model). SIII is SII with
// renewable availability forced to zero.
inline NlpProblem build_problem(const NetworkModel& model,
                                const std::map<std::string, ZoneCostModel>& costs,
                                const StepInputs& step, ScenarioKind scenario) {
  auto d = std::make_shared<AssemblyData>();
  d->model = model;
  d->index = NetworkIndex::build(model);
  d->scenario = scenario;
  d->sbase = model.base_mva;
  d->step_mw = step;
  const double S = d->sbase;

  if (step.load_mw.size() != model.loads.size())
    throw DataError(strprintf("step inputs carry %zu load values, model has %zu",
                              step.load_mw.size(), model.loads.size()));
  if (step.ren_avail_mw.size() != model.renewables.size())
    throw DataError(strprintf(
        "step inputs carry %zu availability values, model has %zu",
        step.ren_avail_mw.size(), model.renewables.size()));

  const bool zonal = scenario != ScenarioKind::kSI;

  for (const auto& br : model.ac_branches) {
    detail::BranchData bd;
    bd.from = d->index.ac_node.at(br.from);
    bd.to = d->index.ac_node.at(br.to);
    double z2 = br.r * br.r + br.x * br.x;
    bd.g = br.r / z2;
    bd.b = -br.x / z2;
    bd.bsh2 = br.b / 2.0;
    double s = br.s_rating / S;
    bd.s2 = s * s;
    d->branches.push_back(bd);
  }
  for (const auto& ln : model.dc_lines) {
    detail::DcLineData ld;
    ld.from = d->index.dc_node.at(ln.from);
    ld.to = d->index.dc_node.at(ln.to);
    ld.inv_r = 1.0 / std::max(ln.r, kDcResistanceFloor);
    ld.cap = ln.p_rating / S;
    d->dc_lines.push_back(ld);
  }
  for (const auto& cv : model.converters) {
    detail::ConverterData cd;
    cd.ac = d->index.ac_node.at(cv.ac_node);
    cd.dc = d->index.dc_node.at(cv.dc_node);
    cd.s = cv.s_rating / S;
    cd.s2 = cd.s * cd.s;
    cd.a = cv.loss_a / S;     // MW -> pu
    cd.bcoef = cv.loss_b;     // dimensionless
    cd.cpu = cv.loss_c * S;   // 1/MW -> 1/pu
    d->converters.push_back(cd);
  }
  for (const auto& g : model.generators) {
    detail::GenData gd;
    gd.node = d->index.ac_node.at(g.node);
    gd.zone = d->index.zone.at(g.zone);
    gd.p_min = g.p_min / S;
    gd.p_max = g.p_max / S;
    gd.q_min = g.q_min / S;
    gd.q_max = g.q_max / S;
    d->gens.push_back(gd);
  }
  for (size_t i = 0; i < model.renewables.size(); ++i) {
    const auto& r = model.renewables[i];
    detail::RenData rd;
    rd.on_dc = d->index.dc_node.count(r.node) > 0 && d->index.ac_node.count(r.node) == 0;
    rd.node = rd.on_dc ? d->index.dc_node.at(r.node) : d->index.ac_node.at(r.node);
    rd.zone = d->index.zone.at(r.zone);
    double avail = std::min(step.ren_avail_mw[i], r.capacity) / S;
    if (avail < 0.0)
      throw DataError(strprintf("renewable[%zu]: negative availability", i));
    rd.avail = scenario == ScenarioKind::kSIII ? 0.0 : avail;
    d->rens.push_back(rd);
  }
  for (size_t i = 0; i < model.loads.size(); ++i) {
    const auto& l = model.loads[i];
    detail::LoadData ld;
    ld.node = d->index.ac_node.at(l.node);
    ld.p = step.load_mw[i] / S;
    if (ld.p < 0.0) throw DataError(strprintf("load[%zu]: negative demand", i));
    double tan_phi = std::tan(std::acos(std::min(1.0, l.power_factor)));
    ld.q = ld.p * tan_phi;
    d->loads.push_back(ld);
  }
  d->node_p_load.assign(model.ac_nodes.size(), 0.0);
  d->node_q_load.assign(model.ac_nodes.size(), 0.0);
  for (const auto& l : d->loads) {
    d->node_p_load[l.node] += l.p;
    d->node_q_load[l.node] += l.q;
  }
  for (size_t z = 0; z < model.zones.size(); ++z) {
    detail::ZoneData zd;
    zd.kind = model.zones[z].kind;
    zd.gens = d->index.zone_gens[z];
    zd.rens = d->index.zone_rens[z];
    zd.pd = 0.0;
    for (int l : d->index.zone_loads[z]) zd.pd += d->loads[l].p;
    auto it = costs.find(model.zones[z].id);
    if (it == costs.end())
      throw DataError("missing cost model for zone '" + model.zones[z].id + "'");
    zd.cost = it->second;
    d->zones.push_back(zd);
  }

  const int num_ac = (int)model.ac_nodes.size();
  const int num_dc = (int)model.dc_nodes.size();
  const int num_gen = (int)model.generators.size();
  const int num_ren = (int)model.renewables.size();
  const int num_conv = (int)model.converters.size();
  const int num_zone = (int)model.zones.size();

  DecisionLayout L = DecisionLayout::make(num_ac, num_dc, num_gen, num_ren,
                                          num_conv, num_zone, zonal);

  ConstraintLayout R;
  int row = 0;
  R.ac_p0 = row; row += num_ac;
  R.ac_q0 = row; row += num_ac;
  R.dc0 = row; row += num_dc;
  R.conv0 = row; row += num_conv;
  R.slack0 = row; row += d->index.num_islands;
  if (zonal) {
    R.zpg0 = row; row += num_zone;
    R.zpn0 = row; row += num_zone;
  }
  R.num_eq = row;
  row = 0;
  R.br_from0 = row; row += (int)d->branches.size();
  R.br_to0 = row; row += (int)d->branches.size();
  R.dcl_from0 = row; row += (int)d->dc_lines.size();
  R.dcl_to0 = row; row += (int)d->dc_lines.size();
  R.conv_mva0 = row; row += num_conv;
  R.num_ineq = row;

  NlpProblem p;
  p.layout = L;
  p.rows = R;
  p.data = d;
  p.num_vars = L.n;
  p.num_eq = R.num_eq;
  p.num_ineq = R.num_ineq;

  // Variable bounds.
  p.lb = Eigen::VectorXd::Constant(L.n, -kUnbounded);
  p.ub = Eigen::VectorXd::Constant(L.n, kUnbounded);
  const double kThetaLim = M_PI / 2.0;
  for (int i = 0; i < num_ac; ++i) {
    p.lb[L.theta(i)] = -kThetaLim;
    p.ub[L.theta(i)] = kThetaLim;
    p.lb[L.vm(i)] = model.ac_nodes[i].v_min;
    p.ub[L.vm(i)] = model.ac_nodes[i].v_max;
  }
  for (int i = 0; i < num_dc; ++i) {
    p.lb[L.vdc(i)] = model.dc_nodes[i].v_min;
    p.ub[L.vdc(i)] = model.dc_nodes[i].v_max;
  }
  for (int i = 0; i < num_gen; ++i) {
    p.lb[L.gen_p(i)] = d->gens[i].p_min;
    p.ub[L.gen_p(i)] = d->gens[i].p_max;
    p.lb[L.gen_q(i)] = d->gens[i].q_min;
    p.ub[L.gen_q(i)] = d->gens[i].q_max;
  }
  for (int i = 0; i < num_ren; ++i) {
    p.lb[L.gamma(i)] = 0.0;
    p.ub[L.gamma(i)] = 1.0;
  }
  for (int i = 0; i < num_conv; ++i) {
    const auto& cv = d->converters[i];
    p.lb[L.conv_p(i)] = -cv.s;
    p.ub[L.conv_p(i)] = cv.s;
    p.lb[L.conv_q(i)] = -cv.s;
    p.ub[L.conv_q(i)] = cv.s;
    double pdc_lim = cv.s * (1.0 + cv.bcoef) + cv.a + cv.cpu * cv.s2 + 1e-6;
    p.lb[L.conv_pdc(i)] = -pdc_lim;
    p.ub[L.conv_pdc(i)] = pdc_lim;
  }
  if (zonal) {
    for (int z = 0; z < num_zone; ++z) {
      p.lb[L.zone_pn(z)] = d->zones[z].cost.pn_min / S;
      p.ub[L.zone_pn(z)] = d->zones[z].cost.pn_max / S;
      if (p.lb[L.zone_pn(z)] > p.ub[L.zone_pn(z)])
        throw DataError(strprintf("zone '%s': pn_min exceeds pn_max",
                                  model.zones[z].id.c_str()));
    }
  }

  // Equality residuals.
  p.equalities = [d, L, R](const Eigen::VectorXd& x) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(R.num_eq);
    const int na = L.num_ac;
    for (int i = 0; i < na; ++i) {
      r[R.ac_p0 + i] = -d->node_p_load[i];
      r[R.ac_q0 + i] = -d->node_q_load[i];
    }
    for (size_t g = 0; g < d->gens.size(); ++g) {
      r[R.ac_p0 + d->gens[g].node] += x[L.gen_p((int)g)];
      r[R.ac_q0 + d->gens[g].node] += x[L.gen_q((int)g)];
    }
    for (size_t k = 0; k < d->rens.size(); ++k) {
      double inj = x[L.gamma((int)k)] * d->rens[k].avail;
      if (d->rens[k].on_dc)
        r[R.dc0 + d->rens[k].node] += inj;
      else
        r[R.ac_p0 + d->rens[k].node] += inj;
    }
    for (size_t c = 0; c < d->converters.size(); ++c) {
      const auto& cv = d->converters[c];
      r[R.ac_p0 + cv.ac] -= x[L.conv_p((int)c)];
      r[R.ac_q0 + cv.ac] -= x[L.conv_q((int)c)];
      r[R.dc0 + cv.dc] -= x[L.conv_pdc((int)c)];
      double pac = x[L.conv_p((int)c)];
      double loss = cv.a + cv.bcoef * detail::smooth_abs(pac) + cv.cpu * pac * pac;
      r[R.conv0 + (int)c] = pac + x[L.conv_pdc((int)c)] - loss;
    }
    for (size_t b = 0; b < d->branches.size(); ++b) {
      const auto& br = d->branches[b];
      auto ff = detail::ac_flow_end(x[L.vm(br.from)], x[L.vm(br.to)],
                                    x[L.theta(br.from)], x[L.theta(br.to)], br);
      auto ft = detail::ac_flow_end(x[L.vm(br.to)], x[L.vm(br.from)],
                                    x[L.theta(br.to)], x[L.theta(br.from)], br);
      r[R.ac_p0 + br.from] -= ff.p;
      r[R.ac_q0 + br.from] -= ff.q;
      r[R.ac_p0 + br.to] -= ft.p;
      r[R.ac_q0 + br.to] -= ft.q;
    }
    for (const auto& ln : d->dc_lines) {
      double uf = x[L.vdc(ln.from)], ut = x[L.vdc(ln.to)];
      r[R.dc0 + ln.from] -= uf * (uf - ut) * ln.inv_r;
      r[R.dc0 + ln.to] -= ut * (ut - uf) * ln.inv_r;
    }
    for (int isl = 0; isl < d->index.num_islands; ++isl)
      r[R.slack0 + isl] = x[L.theta(d->index.island_slack[isl])];
    if (L.zonal) {
      for (int z = 0; z < L.num_zone; ++z) {
        double pg_phys = 0.0;
        for (int g : d->zones[z].gens) pg_phys += x[L.gen_p(g)];
        for (int k : d->zones[z].rens)
          pg_phys += x[L.gamma(k)] * d->rens[k].avail;
        r[R.zpg0 + z] = pg_phys - x[L.zone_pg(z)];
        r[R.zpn0 + z] = x[L.zone_pg(z)] - d->zones[z].pd - x[L.zone_pn(z)];
      }
    }
    return r;
  };

  // One emitter pass defines both pattern and values.
  auto emit_eq = [d, L, R](const Eigen::VectorXd& x, detail::JacobianEmitter emit) {
    for (size_t g = 0; g < d->gens.size(); ++g) {
      emit(R.ac_p0 + d->gens[g].node, L.gen_p((int)g), 1.0);
      emit(R.ac_q0 + d->gens[g].node, L.gen_q((int)g), 1.0);
    }
    for (size_t k = 0; k < d->rens.size(); ++k) {
      int row = d->rens[k].on_dc ? R.dc0 + d->rens[k].node
                                 : R.ac_p0 + d->rens[k].node;
      emit(row, L.gamma((int)k), d->rens[k].avail);
    }
    for (size_t c = 0; c < d->converters.size(); ++c) {
      const auto& cv = d->converters[c];
      emit(R.ac_p0 + cv.ac, L.conv_p((int)c), -1.0);
      emit(R.ac_q0 + cv.ac, L.conv_q((int)c), -1.0);
      emit(R.dc0 + cv.dc, L.conv_pdc((int)c), -1.0);
      double pac = x[L.conv_p((int)c)];
      double dloss = cv.bcoef * detail::smooth_abs_d(pac) + 2.0 * cv.cpu * pac;
      emit(R.conv0 + (int)c, L.conv_p((int)c), 1.0 - dloss);
      emit(R.conv0 + (int)c, L.conv_pdc((int)c), 1.0);
    }
    for (size_t b = 0; b < d->branches.size(); ++b) {
      const auto& br = d->branches[b];
      auto ff = detail::ac_flow_end(x[L.vm(br.from)], x[L.vm(br.to)],
                                    x[L.theta(br.from)], x[L.theta(br.to)], br);
      auto ft = detail::ac_flow_end(x[L.vm(br.to)], x[L.vm(br.from)],
                                    x[L.theta(br.to)], x[L.theta(br.from)], br);
      emit(R.ac_p0 + br.from, L.vm(br.from), -ff.dp_dvf);
      emit(R.ac_p0 + br.from, L.vm(br.to), -ff.dp_dvt);
      emit(R.ac_p0 + br.from, L.theta(br.from), -ff.dp_dtf);
      emit(R.ac_p0 + br.from, L.theta(br.to), -ff.dp_dtt);
      emit(R.ac_q0 + br.from, L.vm(br.from), -ff.dq_dvf);
      emit(R.ac_q0 + br.from, L.vm(br.to), -ff.dq_dvt);
      emit(R.ac_q0 + br.from, L.theta(br.from), -ff.dq_dtf);
      emit(R.ac_q0 + br.from, L.theta(br.to), -ff.dq_dtt);
      emit(R.ac_p0 + br.to, L.vm(br.to), -ft.dp_dvf);
      emit(R.ac_p0 + br.to, L.vm(br.from), -ft.dp_dvt);
      emit(R.ac_p0 + br.to, L.theta(br.to), -ft.dp_dtf);
      emit(R.ac_p0 + br.to, L.theta(br.from), -ft.dp_dtt);
      emit(R.ac_q0 + br.to, L.vm(br.to), -ft.dq_dvf);
      emit(R.ac_q0 + br.to, L.vm(br.from), -ft.dq_dvt);
      emit(R.ac_q0 + br.to, L.theta(br.to), -ft.dq_dtf);
      emit(R.ac_q0 + br.to, L.theta(br.from), -ft.dq_dtt);
    }
    for (const auto& ln : d->dc_lines) {
      double uf = x[L.vdc(ln.from)], ut = x[L.vdc(ln.to)];
      emit(R.dc0 + ln.from, L.vdc(ln.from), -(2.0 * uf - ut) * ln.inv_r);
      emit(R.dc0 + ln.from, L.vdc(ln.to), uf * ln.inv_r);
      emit(R.dc0 + ln.to, L.vdc(ln.to), -(2.0 * ut - uf) * ln.inv_r);
      emit(R.dc0 + ln.to, L.vdc(ln.from), ut * ln.inv_r);
    }
    for (int isl = 0; isl < d->index.num_islands; ++isl)
      emit(R.slack0 + isl, L.theta(d->index.island_slack[isl]), 1.0);
    if (L.zonal) {
      for (int z = 0; z < L.num_zone; ++z) {
        for (int g : d->zones[z].gens) emit(R.zpg0 + z, L.gen_p(g), 1.0);
        for (int k : d->zones[z].rens)
          emit(R.zpg0 + z, L.gamma(k), d->rens[k].avail);
        emit(R.zpg0 + z, L.zone_pg(z), -1.0);
        emit(R.zpn0 + z, L.zone_pg(z), 1.0);
        emit(R.zpn0 + z, L.zone_pn(z), -1.0);
      }
    }
  };

  // Inequalities, h(x) <= 0.
  p.inequalities = [d, L, R](const Eigen::VectorXd& x) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(R.num_ineq);
    for (size_t b = 0; b < d->branches.size(); ++b) {
      const auto& br = d->branches[b];
      auto ff = detail::ac_flow_end(x[L.vm(br.from)], x[L.vm(br.to)],
                                    x[L.theta(br.from)], x[L.theta(br.to)], br);
      auto ft = detail::ac_flow_end(x[L.vm(br.to)], x[L.vm(br.from)],
                                    x[L.theta(br.to)], x[L.theta(br.from)], br);
      h[R.br_from0 + (int)b] = ff.p * ff.p + ff.q * ff.q - br.s2;
      h[R.br_to0 + (int)b] = ft.p * ft.p + ft.q * ft.q - br.s2;
    }
    for (size_t k = 0; k < d->dc_lines.size(); ++k) {
      const auto& ln = d->dc_lines[k];
      double uf = x[L.vdc(ln.from)], ut = x[L.vdc(ln.to)];
      h[R.dcl_from0 + (int)k] = uf * (uf - ut) * ln.inv_r - ln.cap;
      h[R.dcl_to0 + (int)k] = ut * (ut - uf) * ln.inv_r - ln.cap;
    }
    for (size_t c = 0; c < d->converters.size(); ++c) {
      double pac = x[L.conv_p((int)c)], qac = x[L.conv_q((int)c)];
      h[R.conv_mva0 + (int)c] = pac * pac + qac * qac - d->converters[c].s2;
    }
    return h;
  };

  auto emit_ineq = [d, L, R](const Eigen::VectorXd& x, detail::JacobianEmitter emit) {
    for (size_t b = 0; b < d->branches.size(); ++b) {
      const auto& br = d->branches[b];
      auto ff = detail::ac_flow_end(x[L.vm(br.from)], x[L.vm(br.to)],
                                    x[L.theta(br.from)], x[L.theta(br.to)], br);
      auto ft = detail::ac_flow_end(x[L.vm(br.to)], x[L.vm(br.from)],
                                    x[L.theta(br.to)], x[L.theta(br.from)], br);
      int rf = R.br_from0 + (int)b, rt = R.br_to0 + (int)b;
      emit(rf, L.vm(br.from), 2.0 * ff.p * ff.dp_dvf + 2.0 * ff.q * ff.dq_dvf);
      emit(rf, L.vm(br.to), 2.0 * ff.p * ff.dp_dvt + 2.0 * ff.q * ff.dq_dvt);
      emit(rf, L.theta(br.from), 2.0 * ff.p * ff.dp_dtf + 2.0 * ff.q * ff.dq_dtf);
      emit(rf, L.theta(br.to), 2.0 * ff.p * ff.dp_dtt + 2.0 * ff.q * ff.dq_dtt);
      emit(rt, L.vm(br.to), 2.0 * ft.p * ft.dp_dvf + 2.0 * ft.q * ft.dq_dvf);
      emit(rt, L.vm(br.from), 2.0 * ft.p * ft.dp_dvt + 2.0 * ft.q * ft.dq_dvt);
      emit(rt, L.theta(br.to), 2.0 * ft.p * ft.dp_dtf + 2.0 * ft.q * ft.dq_dtf);
      emit(rt, L.theta(br.from), 2.0 * ft.p * ft.dp_dtt + 2.0 * ft.q * ft.dq_dtt);
    }
    for (size_t k = 0; k < d->dc_lines.size(); ++k) {
      const auto& ln = d->dc_lines[k];
      double uf = x[L.vdc(ln.from)], ut = x[L.vdc(ln.to)];
      emit(R.dcl_from0 + (int)k, L.vdc(ln.from), (2.0 * uf - ut) * ln.inv_r);
      emit(R.dcl_from0 + (int)k, L.vdc(ln.to), -uf * ln.inv_r);
      emit(R.dcl_to0 + (int)k, L.vdc(ln.to), (2.0 * ut - uf) * ln.inv_r);
      emit(R.dcl_to0 + (int)k, L.vdc(ln.from), -ut * ln.inv_r);
    }
    for (size_t c = 0; c < d->converters.size(); ++c) {
      emit(R.conv_mva0 + (int)c, L.conv_p((int)c), 2.0 * x[L.conv_p((int)c)]);
      emit(R.conv_mva0 + (int)c, L.conv_q((int)c), 2.0 * x[L.conv_q((int)c)]);
    }
  };

  // Record patterns once at a representative point, then bind value fillers.
  {
    Eigen::VectorXd x_probe = Eigen::VectorXd::Zero(L.n);
    for (int i = 0; i < num_ac; ++i) x_probe[L.vm(i)] = 1.0;
    for (int i = 0; i < num_dc; ++i) x_probe[L.vdc(i)] = 1.0;
    emit_eq(x_probe, detail::JacobianEmitter(&p.eq_jacobian_pattern));
    emit_ineq(x_probe, detail::JacobianEmitter(&p.ineq_jacobian_pattern));
  }
  p.eq_jacobian_values = [emit_eq](const Eigen::VectorXd& x, double* v) {
    emit_eq(x, detail::JacobianEmitter(v));
  };
  p.ineq_jacobian_values = [emit_ineq](const Eigen::VectorXd& x, double* v) {
    emit_ineq(x, detail::JacobianEmitter(v));
  };

  // Exact second derivatives of the constraints, contracted with the row
  // multipliers. Four families are nonlinear: AC branch flows (in the nodal
  // balances and the squared-rating limits), DC line flows (likewise), the
  // converter loss curves, and the converter MVA circles.
  p.constraint_hessian = [d, L, R](const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& w,
                                   std::vector<Eigen::Triplet<double>>& H) {
    // Always emit every structural position, zeros included: downstream
    // factorizations analyze the sparsity pattern once and reuse it.
    auto add = [&H](int i, int j, double v) {
      if (i <= j)
        H.emplace_back(i, j, v);
      else
        H.emplace_back(j, i, v);
    };
    // One branch end seen from bus f: p = vf^2 g - vf vt (g c + b s) and
    // q = -vf^2 (b + bsh) - vf vt (g s - b c) with c/s of (tf - tt).
    // wp/wq multiply hess(p)/hess(q); wlim is the multiplier of the squared
    // rating limit p^2 + q^2 <= s2, whose curvature adds the rank-one
    // gradient outer products on top of 2 wlim p hess(p) (folded into wp/wq
    // by the caller).
    auto branch_end = [&](int bidx, bool from_side, double wp, double wq,
                          double wlim) {
      const auto& br = d->branches[bidx];
      int nf = from_side ? br.from : br.to;
      int nt = from_side ? br.to : br.from;
      int vf = L.vm(nf), vt = L.vm(nt), tf = L.theta(nf), tt = L.theta(nt);
      double xvf = x[vf], xvt = x[vt];
      double th = x[tf] - x[tt];
      double c = std::cos(th), s = std::sin(th);
      double gc = br.g * c + br.b * s;
      double gs = br.g * s - br.b * c;
      add(vf, vf, wp * 2.0 * br.g - wq * 2.0 * (br.b + br.bsh2));
      add(vf, vt, -wp * gc - wq * gs);
      add(vf, tf, (wp * gs - wq * gc) * xvt);
      add(vf, tt, -(wp * gs - wq * gc) * xvt);
      add(vt, tf, (wp * gs - wq * gc) * xvf);
      add(vt, tt, -(wp * gs - wq * gc) * xvf);
      double tdiag = (wp * gc + wq * gs) * xvf * xvt;
      add(tf, tf, tdiag);
      add(tt, tt, tdiag);
      add(tf, tt, -tdiag);
      auto fe = detail::ac_flow_end(xvf, xvt, x[tf], x[tt], br);
      double gp[4] = {fe.dp_dvf, fe.dp_dvt, fe.dp_dtf, fe.dp_dtt};
      double gq[4] = {fe.dq_dvf, fe.dq_dvt, fe.dq_dtf, fe.dq_dtt};
      int ix[4] = {vf, vt, tf, tt};
      for (int a = 0; a < 4; ++a)
        for (int b2 = a; b2 < 4; ++b2)
          add(ix[a], ix[b2], 2.0 * wlim * (gp[a] * gp[b2] + gq[a] * gq[b2]));
    };
    for (size_t b = 0; b < d->branches.size(); ++b) {
      const auto& br = d->branches[b];
      // Flows enter the nodal balances with a minus sign.
      auto ff = detail::ac_flow_end(x[L.vm(br.from)], x[L.vm(br.to)],
                                    x[L.theta(br.from)], x[L.theta(br.to)], br);
      auto ft = detail::ac_flow_end(x[L.vm(br.to)], x[L.vm(br.from)],
                                    x[L.theta(br.to)], x[L.theta(br.from)], br);
      double wlf = w[R.br_from0 + (int)b], wlt = w[R.br_to0 + (int)b];
      branch_end((int)b, true, -y[R.ac_p0 + br.from] + 2.0 * wlf * ff.p,
                 -y[R.ac_q0 + br.from] + 2.0 * wlf * ff.q, wlf);
      branch_end((int)b, false, -y[R.ac_p0 + br.to] + 2.0 * wlt * ft.p,
                 -y[R.ac_q0 + br.to] + 2.0 * wlt * ft.q, wlt);
    }
    for (size_t k = 0; k < d->dc_lines.size(); ++k) {
      const auto& ln = d->dc_lines[k];
      int uf = L.vdc(ln.from), ut = L.vdc(ln.to);
      // pf = Uf (Uf - Ut) / r enters the node balance with a minus sign and
      // the cap row with a plus; same for the mirrored to-side flow.
      double cf = -y[R.dc0 + ln.from] + w[R.dcl_from0 + (int)k];
      double ct = -y[R.dc0 + ln.to] + w[R.dcl_to0 + (int)k];
      add(uf, uf, cf * 2.0 * ln.inv_r);
      add(ut, ut, ct * 2.0 * ln.inv_r);
      add(uf, ut, -(cf + ct) * ln.inv_r);
    }
    for (size_t c = 0; c < d->converters.size(); ++c) {
      const auto& cv = d->converters[c];
      int vp = L.conv_p((int)c);
      double pac = x[vp];
      // Coupling row pac + pdc - loss(pac): second derivative is -loss''.
      add(vp, vp,
          -y[R.conv0 + (int)c] *
              (cv.bcoef * detail::smooth_abs_dd(pac) + 2.0 * cv.cpu));
      double wc = w[R.conv_mva0 + (int)c];
      add(vp, vp, 2.0 * wc);
      add(L.conv_q((int)c), L.conv_q((int)c), 2.0 * wc);
    }
  };

  ObjectiveSpec obj = zonal ? objective_sii(d, L) : objective_si(d, L);
  p.objective_report = obj.value;

  // Tiny solver-side regularization, excluded from the reported objective.
  // Reactive dispatch: the split of reactive support between machines and
  // converters in a zone is otherwise a zero-cost nullspace direction — the
  // dispatch would be ambiguous and the Newton system nearly singular along
  // it. Fixed-price real power: with constant prices any two resources at
  // the same price tie exactly, and an interior-point method zigzags along
  // the resulting flat edge; a minute quadratic on the zone net positions
  // picks the minimum-norm profile among the optima. Both coefficients price
  // the regularized quantity orders of magnitude below the energy cost, so
  // dispatch and prices are unaffected at reporting precision.
  {
    const double kq = 10.0;     // EUR/h per pu^2, reactive dispatch
    const double ktie = 0.01;   // EUR/h per pu^2, fixed-price tie-break
    std::vector<std::pair<int, double>> regs;
    for (int i = 0; i < L.num_gen; ++i) regs.push_back({L.gen_q(i), kq});
    for (int i = 0; i < L.num_conv; ++i) regs.push_back({L.conv_q(i), kq});
    if (!zonal)
      for (int z = 0; z < L.num_zone; ++z)
        regs.push_back({L.zone_pn(z), ktie});
    auto base_v = obj.value;
    auto base_g = std::move(obj.gradient);
    p.objective = [base_v, regs](const Eigen::VectorXd& x) {
      double f = base_v(x);
      for (auto [i, k] : regs) f += 0.5 * k * x[i] * x[i];
      return f;
    };
    p.objective_gradient = [base_g, regs](const Eigen::VectorXd& x) {
      Eigen::VectorXd gr = base_g(x);
      for (auto [i, k] : regs) gr[i] += k * x[i];
      return gr;
    };
    for (auto [i, k] : regs) obj.hessian_diag[i] += k;
    p.objective_hessian_diag = std::move(obj.hessian_diag);
  }

  return p;
}

// Map a solved decision vector (plus equality duals) back to engineering
// units, recomputing branch/line/converter flows and losses from the state.
inline DispatchResult extract_solution(const NlpProblem& p,
                                       const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& lambda_eq) {
  if (!p.data)
    throw DataError("extract_solution: problem was not built from a network");
  const auto& d = *p.data;
  const auto& L = p.layout;
  const auto& R = p.rows;
  const double S = d.sbase;
  if (x.size() != L.n)
    throw DataError("extract_solution: decision vector has wrong size");

  DispatchResult out;
  out.ac_vm.resize(L.num_ac);
  out.ac_theta.resize(L.num_ac);
  for (int i = 0; i < L.num_ac; ++i) {
    out.ac_vm[i] = x[L.vm(i)];
    out.ac_theta[i] = x[L.theta(i)];
  }
  out.dc_v.resize(L.num_dc);
  for (int i = 0; i < L.num_dc; ++i) out.dc_v[i] = x[L.vdc(i)];
  out.gen_p_mw.resize(L.num_gen);
  out.gen_q_mvar.resize(L.num_gen);
  for (int i = 0; i < L.num_gen; ++i) {
    out.gen_p_mw[i] = S * x[L.gen_p(i)];
    out.gen_q_mvar[i] = S * x[L.gen_q(i)];
  }
  out.ren_gamma.resize(L.num_ren);
  out.ren_avail_mw.resize(L.num_ren);
  out.curtailment.resize(L.num_ren);
  for (int i = 0; i < L.num_ren; ++i) {
    double gamma = std::clamp(x[L.gamma(i)], 0.0, 1.0);
    out.ren_gamma[i] = gamma;
    out.ren_avail_mw[i] = S * d.rens[i].avail;
    out.curtailment[i] = d.rens[i].avail > 1e-12 ? 1.0 - gamma : 0.0;
  }
  out.load_p_mw.resize(d.loads.size());
  for (size_t i = 0; i < d.loads.size(); ++i) out.load_p_mw[i] = S * d.loads[i].p;

  out.conv_p_ac_mw.resize(L.num_conv);
  out.conv_q_ac_mvar.resize(L.num_conv);
  out.conv_p_dc_mw.resize(L.num_conv);
  out.conv_loss_mw.resize(L.num_conv);
  for (int c = 0; c < L.num_conv; ++c) {
    const auto& cv = d.converters[c];
    double pac = x[L.conv_p(c)];
    out.conv_p_ac_mw[c] = S * pac;
    out.conv_q_ac_mvar[c] = S * x[L.conv_q(c)];
    out.conv_p_dc_mw[c] = S * x[L.conv_pdc(c)];
    out.conv_loss_mw[c] =
        S * (cv.a + cv.bcoef * detail::smooth_abs(pac) + cv.cpu * pac * pac);
  }

  out.ac_flows.resize(d.branches.size());
  for (size_t b = 0; b < d.branches.size(); ++b) {
    const auto& br = d.branches[b];
    auto ff = detail::ac_flow_end(x[L.vm(br.from)], x[L.vm(br.to)],
                                  x[L.theta(br.from)], x[L.theta(br.to)], br);
    auto ft = detail::ac_flow_end(x[L.vm(br.to)], x[L.vm(br.from)],
                                  x[L.theta(br.to)], x[L.theta(br.from)], br);
    out.ac_flows[b] = {S * ff.p, S * ff.q, S * ft.p, S * ft.q,
                       S * (ff.p + ft.p)};
  }
  out.dc_flows.resize(d.dc_lines.size());
  for (size_t k = 0; k < d.dc_lines.size(); ++k) {
    const auto& ln = d.dc_lines[k];
    double uf = x[L.vdc(ln.from)], ut = x[L.vdc(ln.to)];
    double pf = uf * (uf - ut) * ln.inv_r;
    double pt = ut * (ut - uf) * ln.inv_r;
    out.dc_flows[k] = {S * pf, S * pt, S * (pf + pt)};
  }

  const int nz = L.num_zone;
  out.zone_price.resize(nz);
  out.zone_pn_mw.resize(nz);
  out.zone_pg_mw.resize(nz);
  out.zone_pd_mw.resize(nz);
  out.zone_balance_dual.assign(nz, std::nan(""));
  for (int z = 0; z < nz; ++z) {
    const auto& zd = d.zones[z];
    out.zone_pd_mw[z] = S * zd.pd;
    if (L.zonal) {
      out.zone_pg_mw[z] = S * x[L.zone_pg(z)];
      out.zone_pn_mw[z] = S * x[L.zone_pn(z)];
      out.zone_price[z] = price_at(zd.cost, out.zone_pn_mw[z]);
      if (lambda_eq.size() == p.num_eq)
        out.zone_balance_dual[z] = lambda_eq[R.zpn0 + z] / S;
    } else {
      double pg = 0.0;
      for (int g : zd.gens) pg += x[L.gen_p(g)];
      for (int k : zd.rens) pg += x[L.gamma(k)] * d.rens[k].avail;
      out.zone_pg_mw[z] = S * pg;
      out.zone_pn_mw[z] = S * (pg - zd.pd);
      out.zone_price[z] = zd.cost.rho_eq;
    }
  }
  return out;
}

}  // namespace zonalopf
