#include "gridsym/system.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gridsym {

std::string canonical_idx(const FieldValue& v) {
  if (std::holds_alternative<std::string>(v)) return std::get<std::string>(v);
  double d = std::get<double>(v);
  if (d == std::floor(d) && std::abs(d) < 1e15) {
    return std::to_string(static_cast<long long>(d));
  }
  return format_number(d);
}

int ModelRuntime::param_index(const std::string& name) const {
  return model->find_param(name);
}

int ModelRuntime::var_index(const std::string& name) const { return model->find_var(name); }

int ModelRuntime::service_index(const std::string& name) const {
  return model->find_service(name);
}

std::vector<double>& ModelRuntime::param_values(const std::string& name) {
  int i = param_index(name);
  if (i < 0) throw NumericError("model '" + model->name + "' has no parameter '" + name + "'");
  return params[i];
}

const std::vector<double>& ModelRuntime::param_values(const std::string& name) const {
  int i = param_index(name);
  if (i < 0) throw NumericError("model '" + model->name + "' has no parameter '" + name + "'");
  return params[i];
}

// ---------------------------------------------------------------------------
// Setup
// ---------------------------------------------------------------------------

void System::add_model(CompiledModel m) {
  if (model_lookup_.count(m.name)) throw NumericError("model '" + m.name + "' already added");
  auto rt = std::make_unique<ModelRuntime>();
  rt->owned_model = std::make_shared<CompiledModel>(std::move(m));
  rt->model = rt->owned_model.get();
  rt->params.resize(rt->model->params.size());
  rt->idx_params.resize(rt->model->params.size());
  rt->services.resize(rt->model->services.size());
  rt->discretes.resize(rt->model->discretes.size());
  rt->vars.resize(rt->model->vars.size());
  model_lookup_[rt->model->name] = static_cast<int>(models_.size());
  order_.push_back(rt->model->name);
  models_.push_back(std::move(rt));
}

bool System::has_model(const std::string& name) const { return model_lookup_.count(name) > 0; }

ModelRuntime& System::model(const std::string& name) {
  auto it = model_lookup_.find(name);
  if (it == model_lookup_.end()) throw NumericError("unknown model '" + name + "'");
  return *models_[it->second];
}

const ModelRuntime& System::model(const std::string& name) const {
  auto it = model_lookup_.find(name);
  if (it == model_lookup_.end()) throw NumericError("unknown model '" + name + "'");
  return *models_[it->second];
}

void System::add_devices(const std::string& model_name, const std::vector<DeviceRow>& rows) {
  if (addresses_allocated_) {
    throw NumericError("cannot add devices after address allocation");
  }
  ModelRuntime& m = model(model_name);
  const CompiledModel& cm = *m.model;
  const int old_n = m.n;
  const int add_n = static_cast<int>(rows.size());
  m.n = old_n + add_n;

  for (std::size_t pi = 0; pi < cm.params.size(); ++pi) {
    const ParamSpec& p = cm.params[pi];
    if (p.is_idx) {
      m.idx_params[pi].resize(m.n);
    } else {
      m.params[pi].resize(m.n, p.default_value);
      for (int i = old_n; i < m.n; ++i) m.params[pi][i] = p.default_value;
    }
  }

  for (int r = 0; r < add_n; ++r) {
    const DeviceRow& row = rows[r];
    const int dev = old_n + r;

    // device identifier
    std::string id;
    if (auto it = row.find("idx"); it != row.end()) {
      id = canonical_idx(it->second);
    } else {
      id = std::to_string(dev + 1);
    }
    if (m.idx_lookup.count(id)) {
      throw NumericError("duplicate idx '" + id + "' in model '" + cm.name + "'");
    }
    m.idx.push_back(id);
    m.idx_lookup[id] = dev;

    for (const auto& [field, value] : row) {
      if (field == "idx") continue;
      int pi = cm.find_param(field);
      if (pi < 0) {
        throw NumericError("unknown field '" + field + "' for model '" + cm.name + "'");
      }
      const ParamSpec& p = cm.params[pi];
      if (p.is_idx) {
        m.idx_params[pi][dev] = canonical_idx(value);
      } else {
        if (!std::holds_alternative<double>(value)) {
          throw NumericError("field '" + field + "' of model '" + cm.name +
                             "' expects a number");
        }
        m.params[pi][dev] = std::get<double>(value);
      }
    }
  }

  // non_zero validation
  for (std::size_t pi = 0; pi < cm.params.size(); ++pi) {
    const ParamSpec& p = cm.params[pi];
    if (!p.non_zero || p.is_idx) continue;
    for (int i = old_n; i < m.n; ++i) {
      if (m.params[pi][i] == 0.0) {
        throw NumericError("parameter " + cm.name + "." + p.name + " of device '" + m.idx[i] +
                           "' must be non-zero");
      }
    }
  }

  // discrete bounds sanity and flag storage
  for (std::size_t di = 0; di < cm.discretes.size(); ++di) {
    const CompiledDiscrete& d = cm.discretes[di];
    DiscreteRuntime& dr = m.discretes[di];
    dr.zl.resize(m.n, 0.0);
    dr.zi.resize(m.n, 1.0);
    dr.zu.resize(m.n, 0.0);
    const auto& lo = m.param_values(d.lower_param);
    const auto& up = m.param_values(d.upper_param);
    for (int i = old_n; i < m.n; ++i) {
      if (lo[i] > up[i]) {
        throw NumericError("discrete " + cm.name + "." + d.name + " of device '" + m.idx[i] +
                           "': lower bound exceeds upper bound");
      }
    }
  }

  for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
    VarRuntime& vr = m.vars[vi];
    vr.addr.resize(m.n, -1);
    if (cm.vars[vi].external) {
      vr.ext_v.resize(m.n, 0.0);
      vr.ext_e.resize(m.n, 0.0);
    }
  }
  for (auto& sv : m.services) sv.resize(m.n, 0.0);
  m.scratch.resize(m.n, 0.0);

  // group registry
  if (!cm.group.empty()) {
    auto& g = groups_[cm.group];
    for (int i = old_n; i < m.n; ++i) {
      if (!g.emplace(m.idx[i], std::make_pair(cm.name, i)).second) {
        throw NumericError("duplicate idx '" + m.idx[i] + "' in group '" + cm.group + "'");
      }
    }
  }
}

void System::set_native_init(const std::string& model_name, NativeInitFn fn) {
  model(model_name).native_init = std::move(fn);
}

void System::set_native_equations(const std::string& model_name, NativeResidualFn f,
                                  NativeJacobianFn j) {
  ModelRuntime& m = model(model_name);
  m.native_residual = std::move(f);
  m.native_jacobian = std::move(j);
}

void System::per_unit_convert() {
  if (per_unit_done_) throw NumericError("per-unit conversion applied twice");
  for (auto& mp : models_) {
    ModelRuntime& m = *mp;
    const CompiledModel& cm = *m.model;
    int sn_index = cm.find_param("Sn");
    for (std::size_t pi = 0; pi < cm.params.size(); ++pi) {
      const ParamSpec& p = cm.params[pi];
      if (p.base_scaling == PowerBase::None || p.is_idx) continue;
      if (sn_index < 0) {
        throw NumericError("model '" + cm.name + "' scales parameter '" + p.name +
                           "' but declares no Sn");
      }
      const auto& sn = m.params[sn_index];
      for (int i = 0; i < m.n; ++i) {
        double ratio = sn[i] / base_mva;
        m.params[pi][i] *= (p.base_scaling == PowerBase::Power) ? ratio : 1.0 / ratio;
      }
    }
  }
  per_unit_done_ = true;
}

// ---------------------------------------------------------------------------
// Addresses and linking
// ---------------------------------------------------------------------------

void System::allocate_addresses() {
  if (addresses_allocated_) throw NumericError("addresses already allocated");
  int next_state = 0;
  int next_algeb = 0;
  for (const auto& name : order_) {
    ModelRuntime& m = model(name);
    const CompiledModel& cm = *m.model;
    for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
      const CompiledVar& v = cm.vars[vi];
      if (v.external) continue;
      VarRuntime& vr = m.vars[vi];
      int& counter = (v.kind == VarKind::State) ? next_state : next_algeb;
      vr.base = counter;
      auto& owners = (v.kind == VarKind::State) ? state_owners_ : algeb_owners_;
      for (int i = 0; i < m.n; ++i) {
        vr.addr[i] = counter++;
        owners.push_back({cm.name, v.name, m.idx[i]});
      }
    }
  }
  dae.n_state = next_state;
  dae.n_algeb = next_algeb;
  dae.x.assign(next_state, 0.0);
  dae.f.assign(next_state, 0.0);
  dae.y.assign(next_algeb, 0.0);
  dae.g.assign(next_algeb, 0.0);
  addresses_allocated_ = true;
}

std::pair<ModelRuntime*, int> System::resolve_device(const std::string& target,
                                                     const std::string& idx) {
  if (has_model(target)) {
    ModelRuntime& m = model(target);
    auto it = m.idx_lookup.find(idx);
    if (it == m.idx_lookup.end()) {
      throw NumericError("model '" + target + "' has no device with idx '" + idx + "'");
    }
    return {&m, it->second};
  }
  auto git = groups_.find(target);
  if (git == groups_.end()) {
    throw NumericError("unknown model or group '" + target + "'");
  }
  auto dit = git->second.find(idx);
  if (dit == git->second.end()) {
    throw NumericError("group '" + target + "' has no device with idx '" + idx + "'");
  }
  return {&model(dit->second.first), dit->second.second};
}

void System::link_external() {
  if (!addresses_allocated_) throw NumericError("allocate addresses before linking");
  for (const auto& name : order_) {
    ModelRuntime& m = model(name);
    const CompiledModel& cm = *m.model;
    for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
      const CompiledVar& v = cm.vars[vi];
      if (!v.external) continue;
      int idx_pi = cm.find_param(v.link.indexer);
      if (idx_pi < 0 || !cm.params[idx_pi].is_idx) {
        throw NumericError("model '" + cm.name + "' external '" + v.name +
                           "': indexer is not an idx parameter");
      }
      VarRuntime& vr = m.vars[vi];
      for (int i = 0; i < m.n; ++i) {
        const std::string& id = m.idx_params[idx_pi][i];
        ModelRuntime* tm;
        int td;
        try {
          std::tie(tm, td) = resolve_device(v.link.model, id);
        } catch (const NumericError& e) {
          throw NumericError("model '" + cm.name + "' device '" + m.idx[i] + "' indexer '" +
                             v.link.indexer + "': " + e.what());
        }
        int tvi = tm->var_index(v.link.src);
        if (tvi < 0) {
          throw NumericError("model '" + cm.name + "' external '" + v.name + "': target " +
                             tm->model->name + " has no variable '" + v.link.src + "'");
        }
        const CompiledVar& tv = tm->model->vars[tvi];
        if (tv.kind != v.kind) {
          throw NumericError("model '" + cm.name + "' external '" + v.name +
                             "': variable kind mismatch with " + tm->model->name + "." +
                             v.link.src);
        }
        vr.addr[i] = tm->vars[tvi].addr[td];
      }
    }
  }
  bind_programs();
}

// ---------------------------------------------------------------------------
// Program binding
// ---------------------------------------------------------------------------

void System::bind_operands(ModelRuntime& m, BoundProgram& bp) {
  const CompiledModel& cm = *m.model;
  bp.operands.clear();
  for (const auto& sym : bp.program.symbols()) {
    Program::Operand op;
    int vi = cm.find_var(sym);
    if (vi >= 0) {
      const CompiledVar& v = cm.vars[vi];
      VarRuntime& vr = m.vars[vi];
      if (v.external) {
        op.data = vr.ext_v.data();
      } else {
        op.data = (v.kind == VarKind::State) ? dae.x.data() + vr.base : dae.y.data() + vr.base;
      }
      op.stride = 1;
      bp.operands.push_back(op);
      continue;
    }
    int si = cm.find_service(sym);
    if (si >= 0) {
      if (cm.services[si].kind == ServiceKind::Reduce) {
        throw NumericError("model '" + cm.name + "': reduce service '" + sym +
                           "' must be repeated before use in equations");
      }
      op.data = m.services[si].data();
      op.stride = 1;
      bp.operands.push_back(op);
      continue;
    }
    int pi = cm.find_param(sym);
    if (pi >= 0 && !cm.params[pi].is_idx) {
      op.data = m.params[pi].data();
      op.stride = 1;
      bp.operands.push_back(op);
      continue;
    }
    bool found_flag = false;
    for (std::size_t di = 0; di < cm.discretes.size(); ++di) {
      const auto& d = cm.discretes[di];
      if (sym == d.name + "_zl") {
        op.data = m.discretes[di].zl.data();
      } else if (sym == d.name + "_zi") {
        op.data = m.discretes[di].zi.data();
      } else if (sym == d.name + "_zu") {
        op.data = m.discretes[di].zu.data();
      } else {
        continue;
      }
      op.stride = 1;
      bp.operands.push_back(op);
      found_flag = true;
      break;
    }
    if (found_flag) continue;
    throw NumericError("model '" + cm.name + "': unresolvable symbol '" + sym + "'");
  }
  bp.bound = true;
}

BoundProgram System::bind(ModelRuntime& m, const ExprPtr& e) {
  BoundProgram bp;
  bp.program = Program::compile(e);
  bind_operands(m, bp);
  return bp;
}

void System::bind_programs() {
  for (const auto& name : order_) {
    ModelRuntime& m = model(name);
    const CompiledModel& cm = *m.model;

    m.residuals.clear();
    m.residuals.resize(cm.vars.size());
    for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
      if (cm.vars[vi].rhs) m.residuals[vi] = bind(m, cm.vars[vi].rhs);
    }

    for (int b = 0; b < 4; ++b) {
      m.jac_values[b].clear();
      for (const auto& entry : cm.jac[b]) {
        m.jac_values[b].push_back(bind(m, entry.value));
      }
    }

    m.seq_init.clear();
    for (const auto& st : cm.init.sequential) m.seq_init.push_back(bind(m, st.value));
    m.iter_residual.clear();
    m.iter_start.clear();
    for (const auto& it : cm.init.iterative) {
      m.iter_residual.push_back(bind(m, it.residual));
      m.iter_start.push_back(it.start ? bind(m, it.start) : BoundProgram{});
    }

    m.const_services.clear();
    m.const_services.resize(cm.services.size());
    for (std::size_t si = 0; si < cm.services.size(); ++si) {
      if (cm.services[si].kind == ServiceKind::Constant && !cm.services[si].assigned) {
        m.const_services[si] = bind(m, cm.services[si].expr);
      }
    }

    for (std::size_t di = 0; di < cm.discretes.size(); ++di) {
      if (cm.discretes[di].release_rhs) {
        m.discretes[di].release = bind(m, cm.discretes[di].release_rhs);
      }
    }
  }
  programs_bound_ = true;
}

void System::run_into(ModelRuntime& m, const BoundProgram& bp, double* out, bool accumulate) {
  bp.program.run(bp.operands, out, static_cast<std::size_t>(m.n), accumulate, exec_policy);
}

// ---------------------------------------------------------------------------
// Services
// ---------------------------------------------------------------------------

void System::evaluate_reduce_repeat(ModelRuntime& m) {
  const CompiledModel& cm = *m.model;
  for (std::size_t si = 0; si < cm.services.size(); ++si) {
    const CompiledService& sv = cm.services[si];
    if (sv.kind != ServiceKind::Reduce && sv.kind != ServiceKind::Repeat) continue;

    int gpi = cm.find_param(sv.group_indexer);
    std::vector<std::string> keys(m.n);
    for (int i = 0; i < m.n; ++i) {
      keys[i] = cm.params[gpi].is_idx ? m.idx_params[gpi][i]
                                      : format_number(m.params[gpi][i]);
    }
    std::map<std::string, int> group_of_key;
    std::vector<int> group_of(m.n);
    int n_groups = 0;
    for (int i = 0; i < m.n; ++i) {
      auto [it, inserted] = group_of_key.emplace(keys[i], n_groups);
      if (inserted) ++n_groups;
      group_of[i] = it->second;
    }

    if (sv.kind == ServiceKind::Reduce) {
      const std::vector<double>* src = nullptr;
      int spi = cm.find_param(sv.source);
      if (spi >= 0) {
        src = &m.params[spi];
      } else {
        int ssi = cm.find_service(sv.source);
        src = &m.services[ssi];
      }
      m.services[si].assign(n_groups, 0.0);
      for (int i = 0; i < m.n; ++i) m.services[si][group_of[i]] += (*src)[i];
    } else {
      int ssi = cm.find_service(sv.source);
      const auto& reduced = m.services[ssi];
      if (static_cast<int>(reduced.size()) != n_groups) {
        throw NumericError("model '" + cm.name + "': repeat service '" + sv.name +
                           "' group shape mismatch with '" + sv.source + "'");
      }
      m.services[si].resize(m.n);
      for (int i = 0; i < m.n; ++i) m.services[si][i] = reduced[group_of[i]];
    }
  }
}

void System::refresh_services(const std::string& model_name) {
  ModelRuntime& m = model(model_name);
  const CompiledModel& cm = *m.model;
  for (std::size_t si = 0; si < cm.services.size(); ++si) {
    if (cm.services[si].kind == ServiceKind::Constant && m.const_services[si].bound) {
      run_into(m, m.const_services[si], m.services[si].data(), false);
    }
  }
  evaluate_reduce_repeat(m);
}

void System::evaluate_services() {
  if (!programs_bound_) throw NumericError("link the system before evaluating services");
  for (const auto& name : order_) refresh_services(name);
}

void System::copy_external_services(ModelRuntime& m) {
  const CompiledModel& cm = *m.model;
  for (std::size_t si = 0; si < cm.services.size(); ++si) {
    const CompiledService& sv = cm.services[si];
    if (sv.kind != ServiceKind::External) continue;
    int idx_pi = cm.find_param(sv.link.indexer);
    for (int i = 0; i < m.n; ++i) {
      auto [tm, td] = resolve_device(sv.link.model, m.idx_params[idx_pi][i]);
      m.services[si][i] = read_value(*tm, td, sv.link.src);
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

void System::gather_external(ModelRuntime& m) {
  const CompiledModel& cm = *m.model;
  for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
    const CompiledVar& v = cm.vars[vi];
    if (!v.external) continue;
    VarRuntime& vr = m.vars[vi];
    const auto& src = (v.kind == VarKind::State) ? dae.x : dae.y;
    for (int i = 0; i < m.n; ++i) vr.ext_v[i] = src[vr.addr[i]];
  }
}

void System::update_hard_limiters(ModelRuntime& m) {
  const CompiledModel& cm = *m.model;
  for (std::size_t di = 0; di < cm.discretes.size(); ++di) {
    const CompiledDiscrete& d = cm.discretes[di];
    if (d.kind != DiscreteKind::HardLimiter) continue;
    DiscreteRuntime& dr = m.discretes[di];
    const CompiledVar& v = cm.vars[d.input_var];
    VarRuntime& vr = m.vars[d.input_var];
    const auto& lo = m.param_values(d.lower_param);
    const auto& up = m.param_values(d.upper_param);
    for (int i = 0; i < m.n; ++i) {
      double val;
      if (v.external) {
        val = vr.ext_v[i];
      } else {
        val = (v.kind == VarKind::State) ? dae.x[vr.addr[i]] : dae.y[vr.addr[i]];
      }
      const bool below = val < lo[i];
      const bool above = val > up[i];
      dr.zl[i] = below ? 1.0 : 0.0;
      dr.zu[i] = above ? 1.0 : 0.0;
      dr.zi[i] = (below || above) ? 0.0 : 1.0;
    }
  }
}

void System::update_anti_windup(ModelRuntime& m) {
  const CompiledModel& cm = *m.model;
  for (std::size_t di = 0; di < cm.discretes.size(); ++di) {
    const CompiledDiscrete& d = cm.discretes[di];
    if (d.kind != DiscreteKind::AntiWindup) continue;
    DiscreteRuntime& dr = m.discretes[di];
    VarRuntime& vr = m.vars[d.input_var];
    const auto& lo = m.param_values(d.lower_param);
    const auto& up = m.param_values(d.upper_param);
    if (!dr.release.bound) continue;
    run_into(m, dr.release, m.scratch.data(), false);
    for (int i = 0; i < m.n; ++i) {
      const int a = vr.addr[i];
      const double unconstrained = m.scratch[i];
      const double xv = dae.x[a];
      if (xv >= up[i] && unconstrained > 0.0) {
        dr.zu[i] = 1.0;
        dr.zl[i] = 0.0;
        dr.zi[i] = 0.0;
        dae.x[a] = up[i];
        dae.f[a] = 0.0;
      } else if (xv <= lo[i] && unconstrained < 0.0) {
        dr.zl[i] = 1.0;
        dr.zu[i] = 0.0;
        dr.zi[i] = 0.0;
        dae.x[a] = lo[i];
        dae.f[a] = 0.0;
      } else {
        dr.zi[i] = 1.0;
        dr.zl[i] = 0.0;
        dr.zu[i] = 0.0;
        dae.f[a] = unconstrained;
      }
    }
  }
}

void System::evaluate_model_equations(ModelRuntime& m) {
  const CompiledModel& cm = *m.model;

  // step 1: copy external variable values in
  gather_external(m);

  // input-value limiters update before equations
  update_hard_limiters(m);

  // step 2: generated residual programs; internal rows accumulate straight
  // into the DAE arrays (no-copy views), externals into local buffers
  for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
    const CompiledVar& v = cm.vars[vi];
    VarRuntime& vr = m.vars[vi];
    if (v.external) std::fill(vr.ext_e.begin(), vr.ext_e.end(), 0.0);
    if (!m.residuals[vi].bound) continue;
    if (v.external) {
      run_into(m, m.residuals[vi], vr.ext_e.data(), false);
    } else {
      double* out = (v.kind == VarKind::State) ? dae.f.data() + vr.base
                                               : dae.g.data() + vr.base;
      run_into(m, m.residuals[vi], out, true);
    }
  }

  if (m.native_residual) m.native_residual(*this, m);

  // step 3: equation-dependent limiters (anti-windup)
  update_anti_windup(m);

  // step 4: merge local external equation values into the DAE arrays
  for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
    const CompiledVar& v = cm.vars[vi];
    if (!v.external) continue;
    VarRuntime& vr = m.vars[vi];
    auto& dst = (v.kind == VarKind::State) ? dae.f : dae.g;
    for (int i = 0; i < m.n; ++i) dst[vr.addr[i]] += vr.ext_e[i];
  }
}

void System::check_finite(Scope scope) {
  (void)scope;
  for (int i = 0; i < dae.n_state; ++i) {
    if (!std::isfinite(dae.f[i])) {
      const RowOwner& o = state_owners_[i];
      throw NumericError("non-finite state residual in " + o.model + "." + o.var +
                         " (device '" + o.idx + "')");
    }
  }
  for (int i = 0; i < dae.n_algeb; ++i) {
    if (!std::isfinite(dae.g[i])) {
      const RowOwner& o = algeb_owners_[i];
      throw NumericError("non-finite algebraic residual in " + o.model + "." + o.var +
                         " (device '" + o.idx + "')");
    }
  }
}

void System::evaluate_equations(Scope scope) {
  std::fill(dae.f.begin(), dae.f.end(), 0.0);
  std::fill(dae.g.begin(), dae.g.end(), 0.0);
  for (const auto& name : order_) {
    ModelRuntime& m = model(name);
    if (!m.in_scope(scope)) continue;
    evaluate_model_equations(m);
  }
  check_finite(scope);
}

// ---------------------------------------------------------------------------
// Jacobians
// ---------------------------------------------------------------------------

namespace {

// Maps class indices back to var positions, per model.
struct ClassMaps {
  std::vector<int> state_var;  // class index -> var index
  std::vector<int> algeb_var;
};

ClassMaps class_maps(const CompiledModel& cm) {
  ClassMaps maps;
  maps.state_var.resize(cm.n_states, -1);
  maps.algeb_var.resize(cm.n_algebs, -1);
  for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
    const CompiledVar& v = cm.vars[vi];
    auto& dst = (v.kind == VarKind::State) ? maps.state_var : maps.algeb_var;
    dst[v.class_index] = static_cast<int>(vi);
  }
  return maps;
}

struct PatternSink : NativeJacobianSink {
  std::vector<Triplet>* trips;  // indexed by block
  ModelRuntime* m;
  void add(JacBlock block, int row_var, int col_var, std::span<const double> values) override {
    (void)values;
    const auto& rows = m->vars[row_var].addr;
    const auto& cols = m->vars[col_var].addr;
    auto& t = trips[static_cast<int>(block)];
    for (int i = 0; i < m->n; ++i) t.push_back({rows[i], cols[i], 0.0});
  }
};

}  // namespace

void System::build_jacobian_pattern(Scope scope) {
  if (!programs_bound_) throw NumericError("link the system before building patterns");
  pattern_scope_ = scope;
  fill_slots_.clear();
  identity_slots_.clear();
  eps_slots_.clear();

  std::vector<Triplet> trips[4];

  const bool dynamic = (scope == Scope::Dynamic);
  for (const auto& name : order_) {
    ModelRuntime& m = model(name);
    const CompiledModel& cm = *m.model;
    if (!m.in_scope(scope)) continue;
    const ClassMaps maps = class_maps(cm);
    for (int b = 0; b < 4; ++b) {
      if (!dynamic && static_cast<JacBlock>(b) != JacBlock::GY) continue;
      for (const auto& entry : cm.jac[b]) {
        const bool f_row = (b == static_cast<int>(JacBlock::FX) ||
                            b == static_cast<int>(JacBlock::FY));
        const bool x_col = (b == static_cast<int>(JacBlock::FX) ||
                            b == static_cast<int>(JacBlock::GX));
        int row_var = f_row ? maps.state_var[entry.row] : maps.algeb_var[entry.row];
        int col_var = x_col ? maps.state_var[entry.col] : maps.algeb_var[entry.col];
        const auto& rows = m.vars[row_var].addr;
        const auto& cols = m.vars[col_var].addr;
        for (int i = 0; i < m.n; ++i) trips[b].push_back({rows[i], cols[i], 0.0});
      }
    }
    // diag_eps positions on own diagonals
    for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
      const CompiledVar& v = cm.vars[vi];
      if (v.diag_eps == 0.0 || v.external) continue;
      int b = (v.kind == VarKind::State) ? static_cast<int>(JacBlock::FX)
                                         : static_cast<int>(JacBlock::GY);
      if (!dynamic && b != static_cast<int>(JacBlock::GY)) continue;
      for (int i = 0; i < m.n; ++i) {
        int a = m.vars[vi].addr[i];
        trips[b].push_back({a, a, 0.0});
      }
    }
    if (m.native_jacobian) {
      PatternSink sink;
      sink.trips = trips;
      sink.m = &m;
      gather_external(m);
      m.native_jacobian(*this, m, sink);
    }
  }

  // power-flow scope: identity rows keep out-of-scope algebraic variables
  // fixed so gy stays square and nonsingular
  if (!dynamic) {
    for (const auto& name : order_) {
      ModelRuntime& m = model(name);
      const CompiledModel& cm = *m.model;
      if (m.in_scope(scope)) continue;
      for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
        const CompiledVar& v = cm.vars[vi];
        if (v.external || v.kind != VarKind::Algebraic) continue;
        for (int i = 0; i < m.n; ++i) {
          int a = m.vars[vi].addr[i];
          trips[static_cast<int>(JacBlock::GY)].push_back({a, a, 0.0});
        }
      }
    }
  }

  const int nx = dae.n_state;
  const int ny = dae.n_algeb;
  jac_[0] = SparseMatrix::from_triplets(nx, nx, trips[0]);
  jac_[1] = SparseMatrix::from_triplets(nx, ny, trips[1]);
  jac_[2] = SparseMatrix::from_triplets(ny, nx, trips[2]);
  jac_[3] = SparseMatrix::from_triplets(ny, ny, trips[3]);

  // register fill slots
  for (const auto& name : order_) {
    ModelRuntime& m = model(name);
    const CompiledModel& cm = *m.model;
    if (!m.in_scope(scope)) continue;
    const ClassMaps maps = class_maps(cm);
    for (int b = 0; b < 4; ++b) {
      if (!dynamic && static_cast<JacBlock>(b) != JacBlock::GY) continue;
      for (std::size_t ei = 0; ei < cm.jac[b].size(); ++ei) {
        const auto& entry = cm.jac[b][ei];
        const bool f_row = (b == static_cast<int>(JacBlock::FX) ||
                            b == static_cast<int>(JacBlock::FY));
        const bool x_col = (b == static_cast<int>(JacBlock::FX) ||
                            b == static_cast<int>(JacBlock::GX));
        int row_var = f_row ? maps.state_var[entry.row] : maps.algeb_var[entry.row];
        int col_var = x_col ? maps.state_var[entry.col] : maps.algeb_var[entry.col];
        EntrySlots es;
        es.m = &m;
        es.block = static_cast<JacBlock>(b);
        es.entry = static_cast<int>(ei);
        es.slots.resize(m.n);
        const auto& rows = m.vars[row_var].addr;
        const auto& cols = m.vars[col_var].addr;
        for (int i = 0; i < m.n; ++i) {
          es.slots[i] = jac_[b].find_slot(rows[i], cols[i]);
        }
        fill_slots_.push_back(std::move(es));
      }
    }
    for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
      const CompiledVar& v = cm.vars[vi];
      if (v.diag_eps == 0.0 || v.external) continue;
      int b = (v.kind == VarKind::State) ? static_cast<int>(JacBlock::FX)
                                         : static_cast<int>(JacBlock::GY);
      if (!dynamic && b != static_cast<int>(JacBlock::GY)) continue;
      for (int i = 0; i < m.n; ++i) {
        int a = m.vars[vi].addr[i];
        eps_slots_.push_back({static_cast<JacBlock>(b), jac_[b].find_slot(a, a), v.diag_eps});
      }
    }
  }
  if (!dynamic) {
    for (const auto& name : order_) {
      ModelRuntime& m = model(name);
      const CompiledModel& cm = *m.model;
      if (m.in_scope(scope)) continue;
      for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
        const CompiledVar& v = cm.vars[vi];
        if (v.external || v.kind != VarKind::Algebraic) continue;
        for (int i = 0; i < m.n; ++i) {
          int a = m.vars[vi].addr[i];
          identity_slots_.push_back(jac_[static_cast<int>(JacBlock::GY)].find_slot(a, a));
        }
      }
    }
  }
  pattern_built_ = true;
}

namespace {

struct ValueSink : NativeJacobianSink {
  System* sys;
  ModelRuntime* m;
  void add(JacBlock block, int row_var, int col_var, std::span<const double> values) override {
    SparseMatrix& mat = sys->jacobian(block);
    const auto& rows = m->vars[row_var].addr;
    const auto& cols = m->vars[col_var].addr;
    for (int i = 0; i < m->n; ++i) {
      int slot = mat.find_slot(rows[i], cols[i]);
      if (slot < 0) {
        throw NumericError("native jacobian position (" + std::to_string(rows[i]) + "," +
                           std::to_string(cols[i]) + ") missing from pattern");
      }
      mat.values()[slot] += values[i];
    }
  }
};

}  // namespace

void System::fill_jacobian(bool with_diag_eps) {
  if (!pattern_built_) throw NumericError("build the jacobian pattern before filling");
  for (auto& mat : jac_) mat.zero_values();
  for (int slot : identity_slots_) {
    jac_[static_cast<int>(JacBlock::GY)].values()[slot] += 1.0;
  }
  if (with_diag_eps) {
    for (const auto& es : eps_slots_) {
      jac_[static_cast<int>(es.block)].values()[es.slot] += es.eps;
    }
  }
  for (const auto& es : fill_slots_) {
    ModelRuntime& m = *es.m;
    const BoundProgram& bp = m.jac_values[static_cast<int>(es.block)][es.entry];
    run_into(m, bp, m.scratch.data(), false);
    jac_[static_cast<int>(es.block)].add_at_slots(
        es.slots, std::span<const double>(m.scratch.data(), static_cast<std::size_t>(m.n)));
  }
  for (const auto& name : order_) {
    ModelRuntime& m = model(name);
    if (!m.in_scope(pattern_scope_) || !m.native_jacobian) continue;
    ValueSink sink;
    sink.sys = this;
    sink.m = &m;
    m.native_jacobian(*this, m, sink);
  }
}

// ---------------------------------------------------------------------------
// Discrete state, lookups, toggles
// ---------------------------------------------------------------------------

std::vector<BindingState> System::binding_states() const {
  std::vector<BindingState> out;
  for (const auto& mp : models_) {
    const ModelRuntime& m = *mp;
    const CompiledModel& cm = *m.model;
    for (std::size_t di = 0; di < cm.discretes.size(); ++di) {
      const CompiledDiscrete& d = cm.discretes[di];
      if (d.kind != DiscreteKind::AntiWindup) continue;
      const DiscreteRuntime& dr = m.discretes[di];
      const VarRuntime& vr = m.vars[d.input_var];
      const auto& lo = m.param_values(d.lower_param);
      const auto& up = m.param_values(d.upper_param);
      for (int i = 0; i < m.n; ++i) {
        if (dr.zu[i] != 0.0) {
          out.push_back({vr.addr[i], up[i]});
        } else if (dr.zl[i] != 0.0) {
          out.push_back({vr.addr[i], lo[i]});
        }
      }
    }
  }
  return out;
}

double System::read_value(const ModelRuntime& m, int device, const std::string& name) const {
  const CompiledModel& cm = *m.model;
  int vi = cm.find_var(name);
  if (vi >= 0) {
    const CompiledVar& v = cm.vars[vi];
    int a = m.vars[vi].addr[device];
    if (a < 0) throw NumericError("variable '" + name + "' has no address yet");
    return (v.kind == VarKind::State) ? dae.x[a] : dae.y[a];
  }
  int si = cm.find_service(name);
  if (si >= 0) {
    if (device >= static_cast<int>(m.services[si].size())) {
      throw NumericError("service '" + name + "' has no per-device value");
    }
    return m.services[si][device];
  }
  int pi = cm.find_param(name);
  if (pi >= 0 && !cm.params[pi].is_idx) return m.params[pi][device];
  throw NumericError("model '" + cm.name + "' has no value named '" + name + "'");
}

std::string System::state_name(int i) const {
  const RowOwner& o = state_owners_[i];
  return o.model + "." + o.var + "[" + o.idx + "]";
}

std::string System::algeb_name(int i) const {
  const RowOwner& o = algeb_owners_[i];
  return o.model + "." + o.var + "[" + o.idx + "]";
}

void System::toggle_device(const std::string& model_or_group, const std::string& idx) {
  auto [m, dev] = resolve_device(model_or_group, idx);
  auto& u = m->param_values("u");
  u[dev] = (u[dev] == 0.0) ? 1.0 : 0.0;
  refresh_services(m->model->name);
}

}  // namespace gridsym
