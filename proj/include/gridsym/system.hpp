#pragma once

// Case-dependent storage and execution: device tables, contiguous address
// allocation, external linking, service evaluation, discrete-flag updates,
// the four-step vectorized equation evaluation, and two-phase sparse Jacobian
// assembly (pattern once, in-place fill repeatedly).
//
// A System is single-threaded during a routine; distinct instances are
// independent. Compiled models are shared read-only.

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gridsym/compiled.hpp"
#include "gridsym/linalg.hpp"
#include "gridsym/program.hpp"

namespace gridsym {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using FieldValue = std::variant<double, std::string>;
using DeviceRow = std::map<std::string, FieldValue>;

/// Canonical text form of an idx value ("1" for 1.0, strings verbatim).
std::string canonical_idx(const FieldValue& v);

struct DaeArrays {
  std::vector<double> x, y;  // state / algebraic values
  std::vector<double> f, g;  // state / algebraic residuals
  int n_state = 0;
  int n_algeb = 0;
};

/// Which models take part in an evaluation or Jacobian pass.
enum class Scope { PowerFlow, Dynamic };

struct VarRuntime {
  std::vector<int> addr;       // global indices in the variable's class space
  int base = -1;               // internal vars: addr[i] == base + i
  std::vector<double> ext_v;   // external vars: gathered values
  std::vector<double> ext_e;   // external vars: local equation values
};

struct BoundProgram {
  Program program;
  std::vector<Program::Operand> operands;
  bool bound = false;
};

struct DiscreteRuntime {
  std::vector<double> zl, zi, zu;
  BoundProgram release;  // anti-windup: unconstrained residual of the input state
};

class System;
struct ModelRuntime;

using NativeInitFn = std::function<void(System&, ModelRuntime&)>;
/// Adds residual contributions for one model; same contract as generated
/// programs (read local values, add into the local equation arrays).
using NativeResidualFn = std::function<void(System&, ModelRuntime&)>;
/// Adds Jacobian values: callback receives (block, local row var, local col
/// var, per-device values) through the sink.
class NativeJacobianSink {
 public:
  virtual ~NativeJacobianSink() = default;
  virtual void add(JacBlock block, int row_var, int col_var,
                   std::span<const double> values) = 0;
};
using NativeJacobianFn = std::function<void(System&, ModelRuntime&, NativeJacobianSink&)>;

struct ModelRuntime {
  std::shared_ptr<const CompiledModel> owned_model;
  const CompiledModel* model = nullptr;
  int n = 0;  // device count

  std::vector<std::string> idx;
  std::map<std::string, int> idx_lookup;

  std::vector<std::vector<double>> params;            // per ParamSpec
  std::vector<std::vector<std::string>> idx_params;   // idx params, canonical text
  std::vector<std::vector<double>> services;          // reduce services may be shorter
  std::vector<DiscreteRuntime> discretes;
  std::vector<VarRuntime> vars;

  // programs bound to local storage
  std::vector<BoundProgram> residuals;                  // per var (empty if none)
  std::array<std::vector<BoundProgram>, 4> jac_values;  // per JacBlock entry
  std::vector<BoundProgram> seq_init;                   // per InitPlan entry
  std::vector<BoundProgram> iter_residual, iter_start;
  std::vector<BoundProgram> const_services;             // per service (Constant only)

  NativeInitFn native_init;
  NativeResidualFn native_residual;
  NativeJacobianFn native_jacobian;

  std::vector<double> scratch;  // device-length work buffer

  int param_index(const std::string& name) const;
  int var_index(const std::string& name) const;
  int service_index(const std::string& name) const;
  std::vector<double>& param_values(const std::string& name);
  const std::vector<double>& param_values(const std::string& name) const;

  bool in_scope(Scope s) const {
    return s == Scope::Dynamic ? model->dynamic : model->power_flow;
  }
};

/// Per-row ownership, for diagnostics and output column names.
struct RowOwner {
  std::string model;
  std::string var;
  std::string idx;
};

/// One binding anti-windup state: global state index and the active bound.
struct BindingState {
  int state_index;
  double bound;
};

class System {
 public:
  double base_mva = 100.0;
  double freq = 60.0;
  ExecPolicy exec_policy = ExecPolicy::Auto;

  DaeArrays dae;

  // -- setup ---------------------------------------------------------------
  void add_model(CompiledModel m);
  bool has_model(const std::string& name) const;
  ModelRuntime& model(const std::string& name);
  const ModelRuntime& model(const std::string& name) const;
  const std::vector<std::string>& model_order() const { return order_; }

  /// Populate the device table in row order. Unknown fields, duplicate idx,
  /// and non_zero violations are errors.
  void add_devices(const std::string& model, const std::vector<DeviceRow>& rows);

  void set_native_init(const std::string& model, NativeInitFn fn);
  void set_native_equations(const std::string& model, NativeResidualFn f, NativeJacobianFn j);

  /// Scale power-base / inverse-power-base parameters to the system base.
  /// Applying twice is an error.
  void per_unit_convert();
  bool per_unit_done() const { return per_unit_done_; }

  /// Contiguous block per internal variable, model by model, variable by
  /// variable in declaration order; states and algebraics each count from 0.
  void allocate_addresses();

  /// Resolve external variable addresses through idx parameters (model or
  /// group targets).
  void link_external();

  /// Constant services in declaration order, then reduce/repeat.
  void evaluate_services();
  /// Re-evaluate one model's constant and reduce/repeat services (after a
  /// parameter change such as a toggle).
  void refresh_services(const std::string& model);
  /// Copy external-service values (done once, at dynamic initialization).
  void copy_external_services(ModelRuntime& m);

  // -- evaluation ----------------------------------------------------------
  /// Gather external variable values from the DAE arrays into local storage.
  void gather_external(ModelRuntime& m);

  /// Hard limiters from input vs bounds (strict inequalities).
  void update_hard_limiters(ModelRuntime& m);
  /// Anti-windup limiters from state value and unconstrained residual sign;
  /// clamps the state and zeroes its residual while binding.
  void update_anti_windup(ModelRuntime& m);

  /// Full pass: zero f/g, then per model in order: gather externals, update
  /// hard limiters, run residual programs (internal rows written through
  /// views, external contributions accumulated locally), update anti-windup,
  /// merge external contributions.
  void evaluate_equations(Scope scope);

  /// Evaluate one model's equations into the global arrays (assumes f/g were
  /// zeroed by the caller; used by evaluate_equations).
  void evaluate_model_equations(ModelRuntime& m);

  // -- jacobians -----------------------------------------------------------
  /// Build zero-filled patterns and register fill slots. PowerFlow scope
  /// builds gy only (plus identity rows for out-of-scope algebraic
  /// variables); Dynamic scope builds all four blocks.
  void build_jacobian_pattern(Scope scope);

  /// Reset values (identity/diag_eps included) and add every triplet's value
  /// program over its devices. Performs no allocation.
  void fill_jacobian(bool with_diag_eps = true);

  SparseMatrix& jacobian(JacBlock b) { return jac_[static_cast<int>(b)]; }
  const SparseMatrix& jacobian(JacBlock b) const { return jac_[static_cast<int>(b)]; }
  Scope pattern_scope() const { return pattern_scope_; }
  bool pattern_built() const { return pattern_built_; }

  /// Sum of diag_eps contributions currently in the pattern, as (matrix,
  /// slot, value); lets tests compare against eps-free Jacobians.
  struct EpsSlot {
    JacBlock block;
    int slot;
    double eps;
  };
  const std::vector<EpsSlot>& eps_slots() const { return eps_slots_; }

  // -- discrete state ------------------------------------------------------
  /// Anti-windup states currently at a bound (for integrator row handling).
  std::vector<BindingState> binding_states() const;

  // -- lookup helpers ------------------------------------------------------
  /// Resolve a device by model-or-group name and idx.
  std::pair<ModelRuntime*, int> resolve_device(const std::string& target,
                                               const std::string& idx);
  /// Read a named value on a device: variable (from DAE or gathered external),
  /// then service, then parameter.
  double read_value(const ModelRuntime& m, int device, const std::string& name) const;

  const std::vector<RowOwner>& state_owners() const { return state_owners_; }
  const std::vector<RowOwner>& algeb_owners() const { return algeb_owners_; }
  std::string state_name(int i) const;
  std::string algeb_name(int i) const;

  /// Flip a device's online status u and refresh the model's services.
  void toggle_device(const std::string& model_or_group, const std::string& idx);

  bool addresses_allocated() const { return addresses_allocated_; }

 private:
  void bind_programs();
  BoundProgram bind(ModelRuntime& m, const ExprPtr& e);
  void bind_operands(ModelRuntime& m, BoundProgram& bp);
  void run_into(ModelRuntime& m, const BoundProgram& bp, double* out, bool accumulate);
  void evaluate_reduce_repeat(ModelRuntime& m);
  void check_finite(Scope scope);

  std::vector<std::unique_ptr<ModelRuntime>> models_;
  std::map<std::string, int> model_lookup_;
  std::vector<std::string> order_;
  std::map<std::string, std::map<std::string, std::pair<std::string, int>>> groups_;

  bool per_unit_done_ = false;
  bool addresses_allocated_ = false;
  bool programs_bound_ = false;

  std::array<SparseMatrix, 4> jac_;
  Scope pattern_scope_ = Scope::PowerFlow;
  bool pattern_built_ = false;
  // per model, per block, per entry: slots into the matrix values array
  struct EntrySlots {
    ModelRuntime* m;
    JacBlock block;
    int entry;
    std::vector<int> slots;
  };
  std::vector<EntrySlots> fill_slots_;
  std::vector<int> identity_slots_;  // gy slots set to 1 (out-of-scope rows)
  std::vector<EpsSlot> eps_slots_;

  std::vector<RowOwner> state_owners_, algeb_owners_;
};

}  // namespace gridsym
