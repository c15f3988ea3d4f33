#include "gridsym/models.hpp"

#include <cmath>
#include <complex>

namespace gridsym {

namespace {

ModelSchema bus_schema() {
  ModelSchema s;
  s.name = "Bus";
  s.group = "Bus";
  s.description = "AC bus with voltage phase and magnitude.";
  s.add_param({.name = "u", .description = "online status", .default_value = 1});
  s.add_param({.name = "Vn", .description = "nominal voltage", .unit = "kV", .default_value = 110});
  s.add_param({.name = "v0", .description = "initial voltage magnitude", .unit = "pu", .default_value = 1});
  s.add_param({.name = "a0", .description = "initial voltage angle", .unit = "rad", .default_value = 0});
  s.add_param({.name = "area", .description = "area number", .default_value = 0});
  s.add_var({.name = "a", .kind = VarKind::Algebraic, .v_str = "a0",
             .description = "voltage angle", .unit = "rad", .tex_name = "\\theta"});
  s.add_var({.name = "v", .kind = VarKind::Algebraic, .v_str = "v0",
             .description = "voltage magnitude", .unit = "pu", .tex_name = "v"});
  return s;
}

ModelSchema pq_schema() {
  ModelSchema s;
  s.name = "PQ";
  s.group = "StaticLoad";
  s.description = "Constant-power load, convertible to constant impedance for dynamics.";
  s.add_param({.name = "bus", .description = "bus index", .is_idx = true, .idx_target = "Bus"});
  s.add_param({.name = "u", .description = "online status", .default_value = 1});
  s.add_param({.name = "Sn", .description = "device MVA base", .unit = "MVA", .default_value = 100});
  s.add_param({.name = "Vn", .description = "nominal voltage", .unit = "kV", .default_value = 110});
  s.add_param({.name = "p0", .description = "active power consumption", .unit = "pu", .default_value = 0});
  s.add_param({.name = "q0", .description = "reactive power consumption", .unit = "pu", .default_value = 0});
  s.add_param({.name = "cp", .description = "constant-power mode weight", .default_value = 1});
  s.add_param({.name = "cz", .description = "constant-impedance mode weight", .default_value = 0});
  s.add_param({.name = "gq", .description = "equivalent conductance", .unit = "pu", .default_value = 0});
  s.add_param({.name = "bq", .description = "equivalent susceptance", .unit = "pu", .default_value = 0});
  s.add_var({.name = "a", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "a", "bus"},
             .e_str = "u*(cp*p0 + cz*gq*v*v)",
             .description = "bus angle; carries the active power equation"});
  s.add_var({.name = "v", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "v", "bus"},
             .e_str = "u*(cp*q0 - cz*bq*v*v)",
             .description = "bus voltage; carries the reactive power equation"});
  return s;
}

ModelSchema shunt_schema() {
  ModelSchema s;
  s.name = "Shunt";
  s.group = "Shunt";
  s.description = "Constant shunt admittance.";
  s.add_param({.name = "bus", .description = "bus index", .is_idx = true, .idx_target = "Bus"});
  s.add_param({.name = "u", .description = "online status", .default_value = 1});
  s.add_param({.name = "Vn", .description = "nominal voltage", .unit = "kV", .default_value = 110});
  s.add_param({.name = "g", .description = "conductance", .unit = "pu", .default_value = 0});
  s.add_param({.name = "b", .description = "susceptance", .unit = "pu", .default_value = 0});
  s.add_var({.name = "a", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "a", "bus"}, .e_str = "g*v*v",
             .description = "bus angle; active power drawn by the shunt"});
  s.add_var({.name = "v", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "v", "bus"}, .e_str = "-b*v*v",
             .description = "bus voltage; reactive power drawn by the shunt"});
  return s;
}

ModelSchema pv_schema() {
  ModelSchema s;
  s.name = "PV";
  s.group = "StaticGen";
  s.description = "Static generator holding active power and voltage magnitude.";
  s.add_param({.name = "bus", .description = "bus index", .is_idx = true, .idx_target = "Bus"});
  s.add_param({.name = "u", .description = "online status", .default_value = 1});
  s.add_param({.name = "Sn", .description = "device MVA base", .unit = "MVA", .default_value = 100});
  s.add_param({.name = "Vn", .description = "nominal voltage", .unit = "kV", .default_value = 110});
  s.add_param({.name = "p0", .description = "active power injection", .unit = "pu", .default_value = 0});
  s.add_param({.name = "q0", .description = "initial reactive injection", .unit = "pu", .default_value = 0});
  s.add_param({.name = "v0", .description = "voltage setpoint", .unit = "pu", .default_value = 1});
  s.add_param({.name = "ra", .description = "armature resistance", .unit = "pu", .default_value = 0});
  s.add_param({.name = "xs", .description = "synchronous reactance", .unit = "pu", .default_value = 0.3});
  s.add_var({.name = "q", .kind = VarKind::Algebraic, .e_str = "u*(v0 - v)",
             .v_str = "q0", .diag_eps = 1e-6,
             .description = "reactive injection holding the voltage setpoint"});
  s.add_var({.name = "a", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "a", "bus"}, .e_str = "-u*p0",
             .description = "bus angle; active injection"});
  s.add_var({.name = "v", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "v", "bus"}, .e_str = "-u*q",
             .v_str = "v0", .init_overwrite = true,
             .description = "bus voltage; reactive injection and setpoint"});
  return s;
}

ModelSchema slack_schema() {
  ModelSchema s;
  s.name = "Slack";
  s.group = "StaticGen";
  s.description = "Slack generator holding voltage magnitude and angle.";
  s.add_param({.name = "bus", .description = "bus index", .is_idx = true, .idx_target = "Bus"});
  s.add_param({.name = "u", .description = "online status", .default_value = 1});
  s.add_param({.name = "Sn", .description = "device MVA base", .unit = "MVA", .default_value = 100});
  s.add_param({.name = "Vn", .description = "nominal voltage", .unit = "kV", .default_value = 110});
  s.add_param({.name = "p0", .description = "initial active injection", .unit = "pu", .default_value = 0});
  s.add_param({.name = "q0", .description = "initial reactive injection", .unit = "pu", .default_value = 0});
  s.add_param({.name = "v0", .description = "voltage setpoint", .unit = "pu", .default_value = 1});
  s.add_param({.name = "a0", .description = "angle setpoint", .unit = "rad", .default_value = 0});
  s.add_param({.name = "ra", .description = "armature resistance", .unit = "pu", .default_value = 0});
  s.add_param({.name = "xs", .description = "synchronous reactance", .unit = "pu", .default_value = 0.3});
  s.add_var({.name = "p", .kind = VarKind::Algebraic, .e_str = "u*(a0 - a)",
             .v_str = "p0", .diag_eps = 1e-6,
             .description = "active injection holding the angle setpoint"});
  s.add_var({.name = "q", .kind = VarKind::Algebraic, .e_str = "u*(v0 - v)",
             .v_str = "q0", .diag_eps = 1e-6,
             .description = "reactive injection holding the voltage setpoint"});
  s.add_var({.name = "a", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "a", "bus"}, .e_str = "-u*p",
             .v_str = "a0", .init_overwrite = true,
             .description = "bus angle; active injection and setpoint"});
  s.add_var({.name = "v", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "v", "bus"}, .e_str = "-u*q",
             .v_str = "v0", .init_overwrite = true,
             .description = "bus voltage; reactive injection and setpoint"});
  return s;
}

// Pi-model transmission line / transformer branch with off-nominal tap and
// phase shift on the bus1 side. Power injections are written directly into
// the bus balance equations; no admittance matrix is formed.
ModelSchema line_schema() {
  ModelSchema s;
  s.name = "Line";
  s.group = "ACLine";
  s.description = "AC transmission line or two-winding transformer (pi model).";
  s.add_param({.name = "bus1", .description = "from-bus index", .is_idx = true, .idx_target = "Bus"});
  s.add_param({.name = "bus2", .description = "to-bus index", .is_idx = true, .idx_target = "Bus"});
  s.add_param({.name = "u", .description = "online status", .default_value = 1});
  s.add_param({.name = "Sn", .description = "device MVA base", .unit = "MVA", .default_value = 100});
  s.add_param({.name = "Vn", .description = "nominal voltage", .unit = "kV", .default_value = 110});
  s.add_param({.name = "r", .description = "series resistance", .unit = "pu", .default_value = 0});
  s.add_param({.name = "x", .description = "series reactance", .unit = "pu",
               .default_value = 1e-4, .non_zero = true});
  s.add_param({.name = "b", .description = "total line charging susceptance", .unit = "pu", .default_value = 0});
  s.add_param({.name = "tap", .description = "off-nominal tap ratio", .default_value = 1, .non_zero = true});
  s.add_param({.name = "phi", .description = "phase shift", .unit = "rad", .default_value = 0});

  s.add_service({.name = "gs", .kind = ServiceKind::Constant, .e_str = "r/(r*r + x*x)",
                 .description = "series conductance"});
  s.add_service({.name = "bs", .kind = ServiceKind::Constant, .e_str = "-x/(r*r + x*x)",
                 .description = "series susceptance"});
  s.add_service({.name = "gff", .kind = ServiceKind::Constant, .e_str = "gs/(tap*tap)"});
  s.add_service({.name = "bff", .kind = ServiceKind::Constant, .e_str = "(bs + b/2)/(tap*tap)"});
  s.add_service({.name = "gft", .kind = ServiceKind::Constant,
                 .e_str = "-(gs*cos(phi) - bs*sin(phi))/tap"});
  s.add_service({.name = "bft", .kind = ServiceKind::Constant,
                 .e_str = "-(bs*cos(phi) + gs*sin(phi))/tap"});
  s.add_service({.name = "gtf", .kind = ServiceKind::Constant,
                 .e_str = "-(gs*cos(phi) + bs*sin(phi))/tap"});
  s.add_service({.name = "btf", .kind = ServiceKind::Constant,
                 .e_str = "-(bs*cos(phi) - gs*sin(phi))/tap"});
  s.add_service({.name = "gtt", .kind = ServiceKind::Constant, .e_str = "gs"});
  s.add_service({.name = "btt", .kind = ServiceKind::Constant, .e_str = "bs + b/2"});

  s.add_var({.name = "a1", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "a", "bus1"},
             .e_str = "u*(v1*v1*gff + v1*v2*(gft*cos(a1 - a2) + bft*sin(a1 - a2)))",
             .description = "from-bus angle; active power leaving bus1"});
  s.add_var({.name = "v1", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "v", "bus1"},
             .e_str = "u*(-v1*v1*bff + v1*v2*(gft*sin(a1 - a2) - bft*cos(a1 - a2)))",
             .description = "from-bus voltage; reactive power leaving bus1"});
  s.add_var({.name = "a2", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "a", "bus2"},
             .e_str = "u*(v2*v2*gtt + v1*v2*(gtf*cos(a2 - a1) + btf*sin(a2 - a1)))",
             .description = "to-bus angle; active power leaving bus2"});
  s.add_var({.name = "v2", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "v", "bus2"},
             .e_str = "u*(-v2*v2*btt + v1*v2*(gtf*sin(a2 - a1) - btf*cos(a2 - a1)))",
             .description = "to-bus voltage; reactive power leaving bus2"});
  return s;
}

ModelSchema gencls_schema() {
  ModelSchema s;
  s.name = "GENCLS";
  s.group = "SynGen";
  s.description = "Classical synchronous generator: constant EMF behind transient reactance.";
  s.power_flow = false;
  s.native_init = true;
  s.add_param({.name = "bus", .description = "bus index", .is_idx = true, .idx_target = "Bus"});
  s.add_param({.name = "gen", .description = "static generator to replace", .is_idx = true,
               .idx_target = "StaticGen"});
  s.add_param({.name = "u", .description = "online status", .default_value = 1});
  s.add_param({.name = "Sn", .description = "device MVA base", .unit = "MVA", .default_value = 100});
  s.add_param({.name = "Vn", .description = "nominal voltage", .unit = "kV", .default_value = 110});
  s.add_param({.name = "fn", .description = "rated frequency", .unit = "Hz", .default_value = 60});
  s.add_param({.name = "D", .description = "damping coefficient",
               .default_value = 0, .base_scaling = PowerBase::Power});
  s.add_param({.name = "M", .description = "mechanical starting time (2H)", .unit = "s",
               .default_value = 6, .non_zero = true, .base_scaling = PowerBase::Power});
  s.add_param({.name = "xd1", .description = "transient reactance", .unit = "pu",
               .default_value = 0.3, .non_zero = true, .base_scaling = PowerBase::InversePower,
               .tex_name = "x'_d"});

  s.add_service({.name = "Wb", .kind = ServiceKind::Constant,
                 .e_str = "6.283185307179586*fn",
                 .description = "base angular speed", .unit = "rad/s", .tex_name = "\\Omega_b"});
  // set by the native initialization hook from the power flow solution
  s.add_service({.name = "Ep", .kind = ServiceKind::Constant, .assigned = true,
                 .description = "constant EMF magnitude", .tex_name = "E'"});
  s.add_service({.name = "tm0", .kind = ServiceKind::Constant, .assigned = true,
                 .description = "steady-state mechanical torque", .tex_name = "\\tau_{m0}"});

  s.add_var({.name = "delta", .kind = VarKind::State,
             .e_str = "u*Wb*(omega - 1)",
             .description = "rotor angle", .unit = "rad", .tex_name = "\\delta"});
  s.add_var({.name = "omega", .kind = VarKind::State,
             .e_str = "u*(tm - Ep*v*sin(delta - a)/xd1 - D*(omega - 1))/M",
             .v_str = "1",
             .description = "rotor speed", .unit = "pu", .tex_name = "\\omega"});
  s.add_var({.name = "tm", .kind = VarKind::Algebraic,
             .e_str = "u*(tm0 - tm)", .v_str = "tm0", .diag_eps = 1e-6,
             .description = "mechanical torque; governors replace the constant input",
             .tex_name = "\\tau_m"});
  s.add_var({.name = "a", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "a", "bus"},
             .e_str = "-u*Ep*v*sin(delta - a)/xd1",
             .description = "bus angle; electrical power injection"});
  s.add_var({.name = "v", .kind = VarKind::Algebraic, .external = true,
             .link = {"Bus", "v", "bus"},
             .e_str = "-u*(Ep*v*cos(delta - a) - v*v)/xd1",
             .description = "bus voltage; reactive power injection"});
  return s;
}

ModelSchema tgov1_schema() {
  ModelSchema s;
  s.name = "TGOV1";
  s.group = "TurbineGov";
  s.description = "Steam turbine governor with droop, lag, lead-lag, and anti-windup limits.";
  s.power_flow = false;
  s.add_param({.name = "syn", .description = "synchronous generator index", .is_idx = true,
               .idx_target = "SynGen"});
  s.add_param({.name = "u", .description = "online status", .default_value = 1});
  s.add_param({.name = "Sn", .description = "device MVA base", .unit = "MVA", .default_value = 100});
  s.add_param({.name = "Vn", .description = "nominal voltage", .unit = "kV", .default_value = 110});
  s.add_param({.name = "R", .description = "turbine governor droop", .unit = "pu",
               .default_value = 0.05, .non_zero = true,
               .base_scaling = PowerBase::InversePower});
  s.add_param({.name = "VMAX", .description = "maximum valve position", .unit = "pu",
               .default_value = 1.2, .base_scaling = PowerBase::Power});
  s.add_param({.name = "VMIN", .description = "minimum valve position", .unit = "pu",
               .default_value = 0, .base_scaling = PowerBase::Power});
  s.add_param({.name = "T1", .description = "valve time constant", .unit = "s",
               .default_value = 0.5, .non_zero = true});
  s.add_param({.name = "T2", .description = "lead time constant", .unit = "s", .default_value = 1});
  s.add_param({.name = "T3", .description = "lag time constant", .unit = "s",
               .default_value = 1, .non_zero = true});
  s.add_param({.name = "Dt", .description = "turbine damping coefficient", .unit = "pu",
               .default_value = 0, .base_scaling = PowerBase::Power});

  s.add_var({.name = "omega", .kind = VarKind::State, .external = true,
             .link = {"SynGen", "omega", "syn"},
             .description = "generator speed", .tex_name = "\\omega"});
  s.add_var({.name = "tm", .kind = VarKind::Algebraic, .external = true,
             .link = {"SynGen", "tm", "syn"},
             .e_str = "u*(pout - tm0)",
             .description = "generator torque; the turbine output replaces the constant input",
             .tex_name = "\\tau_m"});

  s.add_service({.name = "G", .kind = ServiceKind::Constant, .e_str = "u/R",
                 .description = "droop gain"});
  s.add_service({.name = "tm0", .kind = ServiceKind::External, .link = {"SynGen", "tm", "syn"},
                 .description = "steady-state torque input", .tex_name = "\\tau_{m0}"});

  s.add_var({.name = "pref", .kind = VarKind::Algebraic,
             .e_str = "tm0*R - pref", .v_str = "tm0*R",
             .description = "reference power", .tex_name = "P_{ref}"});
  s.add_var({.name = "wd", .kind = VarKind::Algebraic,
             .e_str = "(1 - omega) - wd",
             .description = "speed deviation from nominal", .tex_name = "\\omega_d"});
  s.add_var({.name = "pd", .kind = VarKind::Algebraic,
             .e_str = "G*(wd + pref) - pd", .v_str = "tm0",
             .description = "droop output", .tex_name = "P_d"});
  s.add_var({.name = "LG_y", .kind = VarKind::State,
             .e_str = "LG_lim_zi*(pd - LG_y)/T1", .v_str = "pd",
             .description = "valve position (lag state)", .tex_name = "x_{LG}"});
  s.add_discrete({.name = "LG_lim", .kind = DiscreteKind::AntiWindup, .input = "LG_y",
                  .lower = "VMIN", .upper = "VMAX"});
  s.add_var({.name = "LL_x", .kind = VarKind::State,
             .e_str = "(LG_y - LL_x)/T3", .v_str = "LG_y",
             .description = "lead-lag state", .tex_name = "x_{LL}"});
  s.add_var({.name = "LL_y", .kind = VarKind::Algebraic,
             .e_str = "T2/T3*(LG_y - LL_x) + LL_x - LL_y", .v_str = "LG_y",
             .description = "lead-lag output", .tex_name = "y_{LL}"});
  s.add_var({.name = "pout", .kind = VarKind::Algebraic,
             .e_str = "(LL_y + Dt*wd) - pout", .v_str = "tm0",
             .description = "turbine output power", .tex_name = "P_{OUT}"});
  return s;
}

}  // namespace

std::vector<ModelSchema> builtin_schemas() {
  std::vector<ModelSchema> out;
  out.push_back(bus_schema());
  out.push_back(pq_schema());
  out.push_back(pv_schema());
  out.push_back(slack_schema());
  out.push_back(shunt_schema());
  out.push_back(line_schema());
  out.push_back(gencls_schema());
  out.push_back(tgov1_schema());
  return out;
}

ModelSchema builtin_schema(const std::string& name) {
  for (auto& s : builtin_schemas()) {
    if (s.name == name) return s;
  }
  throw ModelError("no built-in model named '" + name + "'");
}

std::vector<CompiledModel> compile_builtin_models() {
  std::vector<CompiledModel> out;
  for (const auto& s : builtin_schemas()) out.push_back(compile(s));
  return out;
}

// ---------------------------------------------------------------------------
// Native hook: classical generator initialization from the power flow
// ---------------------------------------------------------------------------

namespace {

// E' and delta from the phasor construction E = V + j xd1 (S/V)*; the linked
// static generator is then taken offline, replaced by this machine.
void gencls_init(System& sys, ModelRuntime& m) {
  const CompiledModel& cm = *m.model;
  const int gen_pi = cm.find_param("gen");
  const int ep_si = cm.find_service("Ep");
  const int tm0_si = cm.find_service("tm0");
  const int delta_vi = cm.find_var("delta");
  const int a_vi = cm.find_var("a");
  const int v_vi = cm.find_var("v");
  const auto& xd1 = m.param_values("xd1");
  const auto& u = m.param_values("u");

  for (int i = 0; i < m.n; ++i) {
    if (u[i] == 0.0) continue;
    auto [sg, sg_dev] = sys.resolve_device("StaticGen", m.idx_params[gen_pi][i]);
    double p, q;
    try {
      p = sys.read_value(*sg, sg_dev, "p");
    } catch (const NumericError&) {
      p = sys.read_value(*sg, sg_dev, "p0");
    }
    q = sys.read_value(*sg, sg_dev, "q");

    const double vm = sys.dae.y[m.vars[v_vi].addr[i]];
    const double th = sys.dae.y[m.vars[a_vi].addr[i]];
    const std::complex<double> V = std::polar(vm, th);
    const std::complex<double> S(p, q);
    const std::complex<double> I = std::conj(S / V);
    const std::complex<double> E = V + std::complex<double>(0.0, xd1[i]) * I;

    m.services[ep_si][i] = std::abs(E);
    m.services[tm0_si][i] = p;
    sys.dae.x[m.vars[delta_vi].addr[i]] = std::arg(E);

    // the static generator hands over to the machine
    sg->param_values("u")[sg_dev] = 0.0;
  }
}

}  // namespace

void install_builtin_hooks(System& sys) {
  if (sys.has_model("GENCLS")) sys.set_native_init("GENCLS", gencls_init);
}

System make_builtin_system() { return make_builtin_system(compile_builtin_models()); }

System make_builtin_system(const std::vector<CompiledModel>& compiled) {
  System sys;
  for (const auto& m : compiled) sys.add_model(m);
  install_builtin_hooks(sys);
  return sys;
}

// ---------------------------------------------------------------------------
// Loading and conversion utilities
// ---------------------------------------------------------------------------

void load_devices(System& sys, const std::string& model, const std::vector<DeviceRow>& rows) {
  sys.add_devices(model, rows);
}

void per_unit_convert(System& sys) { sys.per_unit_convert(); }

void convert_pq_to_shunt(System& sys) {
  if (!sys.has_model("PQ")) return;
  ModelRuntime& m = sys.model("PQ");
  const CompiledModel& cm = *m.model;
  const int v_vi = cm.find_var("v");
  auto& p0 = m.param_values("p0");
  auto& q0 = m.param_values("q0");
  auto& cp = m.param_values("cp");
  auto& cz = m.param_values("cz");
  auto& gq = m.param_values("gq");
  auto& bq = m.param_values("bq");
  for (int i = 0; i < m.n; ++i) {
    const double v = sys.dae.y[m.vars[v_vi].addr[i]];
    if (v == 0.0) {
      throw NumericError("PQ device '" + m.idx[i] + "': zero bus voltage at conversion");
    }
    gq[i] = p0[i] / (v * v);
    bq[i] = -q0[i] / (v * v);
    cp[i] = 0.0;
    cz[i] = 1.0;
  }
}

}  // namespace gridsym
