#include "gridsym/routines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace gridsym {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Sequential initialization for one model: internal assignments write the
// variable's own block; external overwrite assignments write the linked
// addresses (e.g. PV setpoints onto bus voltages).
void run_sequential_init(System& sys, ModelRuntime& m) {
  const CompiledModel& cm = *m.model;
  for (std::size_t k = 0; k < cm.init.sequential.size(); ++k) {
    const SequentialInit& st = cm.init.sequential[k];
    const CompiledVar& v = cm.vars[st.var];
    VarRuntime& vr = m.vars[st.var];
    BoundProgram& bp = m.seq_init[k];
    if (!bp.bound) continue;
    if (!v.external) {
      double* out = (v.kind == VarKind::State) ? sys.dae.x.data() + vr.base
                                               : sys.dae.y.data() + vr.base;
      bp.program.run(bp.operands, out, m.n, false, sys.exec_policy);
    } else if (v.init_overwrite) {
      bp.program.run(bp.operands, m.scratch.data(), m.n, false, sys.exec_policy);
      auto& dst = (v.kind == VarKind::State) ? sys.dae.x : sys.dae.y;
      for (int i = 0; i < m.n; ++i) dst[vr.addr[i]] = m.scratch[i];
    }
    // assignments may feed later ones through external values
    sys.gather_external(m);
  }
}

std::string worst_row_name(const System& sys) {
  double worst = -1.0;
  std::string name = "(none)";
  for (int i = 0; i < sys.dae.n_state; ++i) {
    if (std::abs(sys.dae.f[i]) > worst) {
      worst = std::abs(sys.dae.f[i]);
      name = "f: " + sys.state_name(i);
    }
  }
  for (int i = 0; i < sys.dae.n_algeb; ++i) {
    if (std::abs(sys.dae.g[i]) > worst) {
      worst = std::abs(sys.dae.g[i]);
      name = "g: " + sys.algeb_name(i);
    }
  }
  return name;
}

}  // namespace

// ---------------------------------------------------------------------------
// Power flow
// ---------------------------------------------------------------------------

PowerFlowResult solve_power_flow(System& sys, const PowerFlowConfig& cfg) {
  if (cfg.tol <= 0 || cfg.max_iter < 1) {
    throw std::invalid_argument("power flow config: tol must be > 0 and max_iter >= 1");
  }
  if (!sys.addresses_allocated()) {
    throw NumericError("allocate and link the system before solving");
  }
  if (!sys.pattern_built() || sys.pattern_scope() != Scope::PowerFlow) {
    sys.build_jacobian_pattern(Scope::PowerFlow);
  }

  // starting point: case-provided values (or a flat profile), then setpoint
  // overwrites in registration order
  for (const auto& name : sys.model_order()) {
    ModelRuntime& m = sys.model(name);
    if (!m.in_scope(Scope::PowerFlow) || m.n == 0) continue;
    if (cfg.flat_start && name == "Bus") {
      const CompiledModel& cm = *m.model;
      for (std::size_t vi = 0; vi < cm.vars.size(); ++vi) {
        if (cm.vars[vi].external) continue;
        double flat = cm.vars[vi].name == "v" ? 1.0 : 0.0;
        for (int i = 0; i < m.n; ++i) sys.dae.y[m.vars[vi].addr[i]] = flat;
      }
      continue;
    }
    sys.gather_external(m);
    run_sequential_init(sys, m);
  }

  PowerFlowResult res;
  LuSymbolic symbolic;
  bool have_symbolic = false;
  std::unique_ptr<SparseLu> factors;
  std::vector<double> rhs(sys.dae.n_algeb), dy(sys.dae.n_algeb);

  for (int it = 0; it <= cfg.max_iter; ++it) {
    auto t0 = Clock::now();
    sys.evaluate_equations(Scope::PowerFlow);
    res.timings.update_equations += seconds_since(t0);

    res.max_residual = max_abs(sys.dae.g);
    if (res.max_residual < cfg.tol) {
      res.converged = true;
      res.iterations = it;
      break;
    }
    if (it == cfg.max_iter) break;

    t0 = Clock::now();
    if (cfg.honest_jacobian || !factors) {
      sys.fill_jacobian(true);
    }
    res.timings.build_jacobians += seconds_since(t0);

    t0 = Clock::now();
    const SparseMatrix& gy = sys.jacobian(JacBlock::GY);
    if (!have_symbolic) {
      symbolic = lu_analyze(gy);
      have_symbolic = true;
    }
    try {
      if (cfg.honest_jacobian || !factors) {
        factors = std::make_unique<SparseLu>(gy, &symbolic);
      }
    } catch (const SingularMatrixError& e) {
      throw SingularMatrixError(
          std::string("power flow jacobian is singular: ") + e.what() +
              " (row " + sys.algeb_name(e.pivot_index) + ")",
          e.pivot_index);
    }
    for (int i = 0; i < sys.dae.n_algeb; ++i) rhs[i] = -sys.dae.g[i];
    factors->solve(rhs, dy);
    for (int i = 0; i < sys.dae.n_algeb; ++i) sys.dae.y[i] += dy[i];
    res.timings.solve_equations += seconds_since(t0);
    res.iterations = it + 1;
  }

  if (!res.converged) {
    throw ConvergenceError("power flow did not converge in " + std::to_string(cfg.max_iter) +
                           " iterations (max |g| = " + format_number(res.max_residual) + ")");
  }
  res.algeb_names.reserve(sys.dae.n_algeb);
  for (int i = 0; i < sys.dae.n_algeb; ++i) res.algeb_names.push_back(sys.algeb_name(i));
  res.y = sys.dae.y;
  return res;
}

// ---------------------------------------------------------------------------
// Dynamic initialization
// ---------------------------------------------------------------------------

namespace {

struct IterUnknown {
  ModelRuntime* m;
  int plan_index;  // into CompiledModel::init.iterative
  int var;         // var index in model
};

}  // namespace

void initialize_dynamics(System& sys) {
  std::vector<IterUnknown> iter_entries;

  for (const auto& name : sys.model_order()) {
    ModelRuntime& m = sys.model(name);
    const CompiledModel& cm = *m.model;
    if (!cm.dynamic || cm.power_flow || m.n == 0) continue;

    sys.gather_external(m);
    sys.copy_external_services(m);
    if (cm.init.native_hook) {
      if (!m.native_init) {
        throw NumericError("model '" + cm.name + "' expects a native init hook, none registered");
      }
      m.native_init(sys, m);
    }
    sys.gather_external(m);
    run_sequential_init(sys, m);

    for (std::size_t k = 0; k < cm.init.iterative.size(); ++k) {
      iter_entries.push_back({&m, static_cast<int>(k), cm.init.iterative[k].var});
    }
  }

  // gathered implicit initializers: damped Newton with a finite-difference
  // jacobian (the set is small by construction)
  if (!iter_entries.empty()) {
    const double tol = 1e-10;
    const int max_iter = 50;

    std::vector<double*> slots;
    for (const auto& e : iter_entries) {
      ModelRuntime& m = *e.m;
      const CompiledVar& v = m.model->vars[e.var];
      VarRuntime& vr = m.vars[e.var];
      auto& arr = (v.kind == VarKind::State) ? sys.dae.x : sys.dae.y;
      // start value
      BoundProgram& st = m.iter_start[e.plan_index];
      if (st.bound) {
        st.program.run(st.operands, m.scratch.data(), m.n, false, sys.exec_policy);
        for (int i = 0; i < m.n; ++i) arr[vr.addr[i]] = m.scratch[i];
      }
      for (int i = 0; i < m.n; ++i) slots.push_back(&arr[vr.addr[i]]);
    }
    const int nu = static_cast<int>(slots.size());

    auto eval_residuals = [&](std::vector<double>& out) {
      out.clear();
      for (const auto& e : iter_entries) {
        ModelRuntime& m = *e.m;
        sys.gather_external(m);
        BoundProgram& bp = m.iter_residual[e.plan_index];
        bp.program.run(bp.operands, m.scratch.data(), m.n, false, sys.exec_policy);
        for (int i = 0; i < m.n; ++i) out.push_back(m.scratch[i]);
      }
    };

    std::vector<double> r0, r1, rp;
    eval_residuals(r0);
    for (int it = 0; it < max_iter; ++it) {
      if (max_abs(r0) < tol) break;
      if (it == max_iter - 1) {
        std::string names;
        for (const auto& e : iter_entries) {
          if (!names.empty()) names += ", ";
          names += e.m->model->name + "." + e.m->model->vars[e.var].name;
        }
        throw ConvergenceError("iterative initialization did not converge for: " + names);
      }
      // dense FD jacobian
      DenseMatrix J(nu, nu);
      const double eps = 1e-7;
      for (int k = 0; k < nu; ++k) {
        const double saved = *slots[k];
        *slots[k] = saved + eps;
        eval_residuals(rp);
        *slots[k] = saved;
        for (int i = 0; i < nu; ++i) J(i, k) = (rp[i] - r0[i]) / eps;
      }
      // solve J d = -r0 by dense elimination with partial pivoting
      std::vector<double> d(r0.begin(), r0.end());
      for (auto& v : d) v = -v;
      std::vector<int> piv(nu);
      for (int k = 0; k < nu; ++k) {
        int best = k;
        for (int i = k + 1; i < nu; ++i) {
          if (std::abs(J(i, k)) > std::abs(J(best, k))) best = i;
        }
        if (J(best, k) == 0.0) {
          throw ConvergenceError("iterative initialization jacobian is singular");
        }
        piv[k] = best;
        if (best != k) {
          for (int j = 0; j < nu; ++j) std::swap(J(k, j), J(best, j));
          std::swap(d[k], d[best]);
        }
        for (int i = k + 1; i < nu; ++i) {
          double fpiv = J(i, k) / J(k, k);
          J(i, k) = fpiv;
          for (int j = k + 1; j < nu; ++j) J(i, j) -= fpiv * J(k, j);
          d[i] -= fpiv * d[k];
        }
      }
      for (int k = nu - 1; k >= 0; --k) {
        for (int j = k + 1; j < nu; ++j) d[k] -= J(k, j) * d[j];
        d[k] /= J(k, k);
      }
      // damped update
      double alpha = 1.0;
      const double base_norm = max_abs(r0);
      for (int half = 0; half < 12; ++half) {
        for (int k = 0; k < nu; ++k) *slots[k] += alpha * d[k];
        eval_residuals(r1);
        if (max_abs(r1) <= base_norm * (1.0 - 1e-4 * alpha) || max_abs(r1) < tol) break;
        for (int k = 0; k < nu; ++k) *slots[k] -= alpha * d[k];
        alpha *= 0.5;
      }
      eval_residuals(r0);
    }
  }

  // settle discrete flags, then verify full consistency
  sys.evaluate_equations(Scope::Dynamic);
  sys.evaluate_equations(Scope::Dynamic);
  const double worst = std::max(max_abs(sys.dae.f), max_abs(sys.dae.g));
  if (worst >= 1e-8) {
    throw ConvergenceError("dynamic initialization left residual " + format_number(worst) +
                           " at " + worst_row_name(sys));
  }
}

// ---------------------------------------------------------------------------
// Trapezoidal stepper
// ---------------------------------------------------------------------------

TrapezoidalStepper::TrapezoidalStepper(System& sys, double h, double tol, int max_iter)
    : sys_(sys), h_(h), tol_(tol), max_iter_(max_iter) {
  if (h <= 0) throw std::invalid_argument("step size must be positive");
  if (!sys.pattern_built() || sys.pattern_scope() != Scope::Dynamic) {
    sys.build_jacobian_pattern(Scope::Dynamic);
  }
  const int nx = sys.dae.n_state;
  const int ny = sys.dae.n_algeb;
  const int n = nx + ny;

  std::vector<Triplet> trips;
  auto collect = [&](const SparseMatrix& m, int row_off, int col_off, std::vector<int>& map) {
    map.assign(m.nnz(), -1);
    for (int c = 0; c < m.cols(); ++c) {
      for (int p = m.col_ptr()[c]; p < m.col_ptr()[c + 1]; ++p) {
        trips.push_back({m.row_idx()[p] + row_off, c + col_off, 0.0});
      }
    }
  };
  collect(sys.jacobian(JacBlock::FX), 0, 0, map_fx_);
  collect(sys.jacobian(JacBlock::FY), 0, nx, map_fy_);
  collect(sys.jacobian(JacBlock::GX), nx, 0, map_gx_);
  collect(sys.jacobian(JacBlock::GY), nx, nx, map_gy_);
  for (int i = 0; i < nx; ++i) trips.push_back({i, i, 0.0});
  iteration_matrix_ = SparseMatrix::from_triplets(n, n, trips);

  auto register_slots = [&](const SparseMatrix& m, int row_off, int col_off,
                            std::vector<int>& map) {
    int k = 0;
    for (int c = 0; c < m.cols(); ++c) {
      for (int p = m.col_ptr()[c]; p < m.col_ptr()[c + 1]; ++p, ++k) {
        map[k] = iteration_matrix_.find_slot(m.row_idx()[p] + row_off, c + col_off);
      }
    }
  };
  register_slots(sys.jacobian(JacBlock::FX), 0, 0, map_fx_);
  register_slots(sys.jacobian(JacBlock::FY), 0, nx, map_fy_);
  register_slots(sys.jacobian(JacBlock::GX), nx, 0, map_gx_);
  register_slots(sys.jacobian(JacBlock::GY), nx, nx, map_gy_);
  identity_slots_.resize(nx);
  for (int i = 0; i < nx; ++i) identity_slots_[i] = iteration_matrix_.find_slot(i, i);

  x0_.resize(nx);
  f0_.resize(nx);
  rhs_.resize(n);
  delta_.resize(n);
  refresh_history();
}

void TrapezoidalStepper::refresh_history() {
  sys_.evaluate_equations(Scope::Dynamic);
  std::copy(sys_.dae.f.begin(), sys_.dae.f.end(), f0_.begin());
  std::copy(sys_.dae.x.begin(), sys_.dae.x.end(), x0_.begin());
}

void TrapezoidalStepper::assemble_residual(std::vector<double>& r) const {
  const int nx = sys_.dae.n_state;
  const int ny = sys_.dae.n_algeb;
  const double half_h = 0.5 * h_;
  for (int i = 0; i < nx; ++i) {
    r[i] = sys_.dae.x[i] - x0_[i] - half_h * (sys_.dae.f[i] + f0_[i]);
  }
  for (const BindingState& b : sys_.binding_states()) {
    r[b.state_index] = sys_.dae.x[b.state_index] - b.bound;
  }
  for (int j = 0; j < ny; ++j) r[nx + j] = sys_.dae.g[j];
}

int TrapezoidalStepper::step(double t, PhaseTimings* timings) {
  const int nx = sys_.dae.n_state;
  const int ny = sys_.dae.n_algeb;
  const double half_h = 0.5 * h_;

  std::copy(sys_.dae.x.begin(), sys_.dae.x.end(), x0_.begin());
  std::copy(sys_.dae.f.begin(), sys_.dae.f.end(), f0_.begin());

  for (int it = 0; it < max_iter_; ++it) {
    auto t0 = Clock::now();
    sys_.evaluate_equations(Scope::Dynamic);
    assemble_residual(rhs_);
    if (timings) timings->update_equations += seconds_since(t0);

    if (max_abs(rhs_) < tol_) return it;

    t0 = Clock::now();
    sys_.fill_jacobian(true);
    iteration_matrix_.zero_values();
    auto& vals = iteration_matrix_.values();
    const auto& fxv = sys_.jacobian(JacBlock::FX).values();
    for (std::size_t k = 0; k < fxv.size(); ++k) vals[map_fx_[k]] -= half_h * fxv[k];
    const auto& fyv = sys_.jacobian(JacBlock::FY).values();
    for (std::size_t k = 0; k < fyv.size(); ++k) vals[map_fy_[k]] -= half_h * fyv[k];
    const auto& gxv = sys_.jacobian(JacBlock::GX).values();
    for (std::size_t k = 0; k < gxv.size(); ++k) vals[map_gx_[k]] += gxv[k];
    const auto& gyv = sys_.jacobian(JacBlock::GY).values();
    for (std::size_t k = 0; k < gyv.size(); ++k) vals[map_gy_[k]] += gyv[k];
    for (int slot : identity_slots_) vals[slot] += 1.0;
    if (timings) timings->build_jacobians += seconds_since(t0);

    t0 = Clock::now();
    if (!have_symbolic_) {
      symbolic_ = lu_analyze(iteration_matrix_);
      have_symbolic_ = true;
    }
    try {
      SparseLu lu(iteration_matrix_, &symbolic_);
      for (auto& v : rhs_) v = -v;
      lu.solve(rhs_, delta_);
    } catch (const SingularMatrixError& e) {
      throw ConvergenceError("singular iteration matrix at t = " + format_number(t) + ": " +
                             e.what());
    }
    for (int i = 0; i < nx; ++i) sys_.dae.x[i] += delta_[i];
    for (int j = 0; j < ny; ++j) sys_.dae.y[j] += delta_[nx + j];
    if (timings) timings->solve_equations += seconds_since(t0);
  }
  throw ConvergenceError("trapezoidal step at t = " + format_number(t) + " did not converge in " +
                         std::to_string(max_iter_) + " Newton iterations (step rejected)");
}

void TrapezoidalStepper::resolve_algebraics(double tol, int max_iter) {
  const int nx = sys_.dae.n_state;
  const int ny = sys_.dae.n_algeb;
  LuSymbolic sym;
  bool have_sym = false;
  std::vector<double> rhs(ny), dy(ny);
  for (int it = 0; it < max_iter; ++it) {
    sys_.evaluate_equations(Scope::Dynamic);
    if (max_abs(sys_.dae.g) < tol) return;
    sys_.fill_jacobian(true);
    const SparseMatrix& gy = sys_.jacobian(JacBlock::GY);
    if (!have_sym) {
      sym = lu_analyze(gy);
      have_sym = true;
    }
    SparseLu lu(gy, &sym);
    for (int j = 0; j < ny; ++j) rhs[j] = -sys_.dae.g[j];
    lu.solve(rhs, dy);
    for (int j = 0; j < ny; ++j) sys_.dae.y[j] += dy[j];
  }
  (void)nx;
  throw ConvergenceError("post-event algebraic solve did not converge");
}

// ---------------------------------------------------------------------------
// Time-domain simulation
// ---------------------------------------------------------------------------

TdsResult run_tds(System& sys, const TdsConfig& cfg) {
  if (cfg.h <= 0) throw std::invalid_argument("TDS step size must be positive");
  std::vector<Event> events = cfg.events;
  std::sort(events.begin(), events.end(),
            [](const Event& a, const Event& b) { return a.time < b.time; });
  for (const auto& ev : events) {
    sys.resolve_device(ev.model, ev.idx);  // validate target exists
  }

  TdsResult res;
  res.state_names.reserve(sys.dae.n_state);
  for (int i = 0; i < sys.dae.n_state; ++i) res.state_names.push_back(sys.state_name(i));
  res.algeb_names.reserve(sys.dae.n_algeb);
  for (int i = 0; i < sys.dae.n_algeb; ++i) res.algeb_names.push_back(sys.algeb_name(i));

  TrapezoidalStepper stepper(sys, cfg.h, cfg.tol, cfg.max_newton_iter);

  const long long steps = std::llround(cfg.t_end / cfg.h);
  // events snap to the nearest step boundary
  std::vector<long long> event_step(events.size());
  for (std::size_t k = 0; k < events.size(); ++k) {
    event_step[k] = std::llround(events[k].time / cfg.h);
  }

  auto record = [&](double t) {
    res.times.push_back(t);
    res.states.push_back(sys.dae.x);
    res.algebs.push_back(sys.dae.y);
  };

  record(0.0);
  std::size_t next_event = 0;
  for (long long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * cfg.h;
    bool toggled = false;
    while (next_event < events.size() && event_step[next_event] <= k) {
      sys.toggle_device(events[next_event].model, events[next_event].idx);
      ++next_event;
      toggled = true;
    }
    if (toggled) {
      // re-solve algebraic consistency with states frozen, then refresh the
      // trapezoidal history so the step starts from a consistent point
      stepper.resolve_algebraics();
      stepper.refresh_history();
    }
    res.total_newton_iterations += stepper.step(t, &res.timings);
    record(static_cast<double>(k + 1) * cfg.h);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Small-signal analysis
// ---------------------------------------------------------------------------

DenseMatrix compute_state_matrix(System& sys) {
  if (!sys.pattern_built() || sys.pattern_scope() != Scope::Dynamic) {
    sys.build_jacobian_pattern(Scope::Dynamic);
  }
  sys.evaluate_equations(Scope::Dynamic);
  sys.fill_jacobian(true);

  const int nx = sys.dae.n_state;
  const int ny = sys.dae.n_algeb;
  const SparseMatrix& gy = sys.jacobian(JacBlock::GY);
  const SparseMatrix& gx = sys.jacobian(JacBlock::GX);
  const SparseMatrix& fx = sys.jacobian(JacBlock::FX);
  const SparseMatrix& fy = sys.jacobian(JacBlock::FY);

  LuSymbolic sym = lu_analyze(gy);
  std::unique_ptr<SparseLu> lu;
  try {
    lu = std::make_unique<SparseLu>(gy, &sym);
  } catch (const SingularMatrixError& e) {
    throw NumericError(std::string("gy is singular (islanded bus or all-offline model?): ") +
                       e.what() + " at row " + sys.algeb_name(e.pivot_index));
  }

  // Z = gy^{-1} gx, solved column block by column block
  std::vector<double> z(static_cast<std::size_t>(ny) * nx, 0.0);
  std::vector<double> rhs(ny), col(ny);
  for (int k = 0; k < nx; ++k) {
    std::fill(rhs.begin(), rhs.end(), 0.0);
    for (int p = gx.col_ptr()[k]; p < gx.col_ptr()[k + 1]; ++p) {
      rhs[gx.row_idx()[p]] = gx.values()[p];
    }
    lu->solve(rhs, col);
    for (int j = 0; j < ny; ++j) z[static_cast<std::size_t>(j) * nx + k] = col[j];
  }

  DenseMatrix a(nx, nx);
  for (int c = 0; c < nx; ++c) {
    for (int p = fx.col_ptr()[c]; p < fx.col_ptr()[c + 1]; ++p) {
      a(fx.row_idx()[p], c) += fx.values()[p];
    }
  }
  for (int j = 0; j < ny; ++j) {
    for (int p = fy.col_ptr()[j]; p < fy.col_ptr()[j + 1]; ++p) {
      // column j of fy couples state row fy.row_idx()[p] to algebraic j
      const int i = fy.row_idx()[p];
      const double v = fy.values()[p];
      const double* zrow = z.data() + static_cast<std::size_t>(j) * nx;
      for (int k = 0; k < nx; ++k) a(i, k) -= v * zrow[k];
    }
  }
  return a;
}

double damping_ratio(std::complex<double> lambda) {
  const double mag = std::abs(lambda);
  if (mag == 0.0) return 1.0;
  return -lambda.real() / mag;
}

EigenReport eigen_report(const DenseMatrix& a) {
  EigenReport rep;
  auto eigs = dense_eigenvalues(a);
  double scale = 0.0;
  for (const auto& l : eigs) scale = std::max(scale, std::abs(l));

  std::vector<std::pair<std::complex<double>, double>> pairs;
  for (const auto& l : eigs) {
    double zeta = (std::abs(l) <= 1e-12 * std::max(scale, 1.0)) ? 1.0 : damping_ratio(l);
    pairs.emplace_back(l, zeta);
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& p, const auto& q) {
    if (p.second != q.second) return p.second < q.second;
    double pa = std::abs(p.first.imag()), qa = std::abs(q.first.imag());
    if (pa != qa) return pa > qa;
    if (p.first.real() != q.first.real()) return p.first.real() < q.first.real();
    return p.first.imag() < q.first.imag();
  });
  for (auto& [l, zeta] : pairs) {
    rep.eigenvalues.push_back(l);
    rep.damping.push_back(zeta);
  }
  return rep;
}

}  // namespace gridsym
