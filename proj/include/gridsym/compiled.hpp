#pragma once

// Symbolic compilation: per model type, once, test-case independent. Produces
// the ordered variable vector, residual programs grouped into f (states) and
// g (algebraics), Jacobian triplets per block with local indices, the
// initialization plan, and the documentation bundle. Results serialize to a
// disk cache keyed by a hash of the schema source.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridsym/expr.hpp"
#include "gridsym/schema.hpp"

namespace gridsym {

struct CacheError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// d(f or g)/d(x or y); rows index equations of the class, columns variables
/// of the class, both local to the model and independent of any case.
enum class JacBlock : int { FX = 0, FY = 1, GX = 2, GY = 3 };

struct JacEntry {
  int row = 0;
  int col = 0;
  ExprPtr value;  // simplified derivative expression
};

struct CompiledVar {
  std::string name;
  VarKind kind = VarKind::Algebraic;
  bool external = false;
  ExternalLink link;
  int class_index = 0;  // position among vars of the same kind
  double diag_eps = 0.0;
  bool init_overwrite = false;
  ExprPtr rhs;      // simplified residual (null when the var has no e_str)
  ExprPtr rhs_raw;  // as parsed, declaration form kept for documentation
  std::string description, unit, tex_name;
};

struct SequentialInit {
  int var = 0;  // index into CompiledModel::vars
  ExprPtr value;
};

struct IterativeInit {
  int var = 0;
  ExprPtr residual;
  ExprPtr start;  // may be null (start from the variable's current value)
};

struct InitPlan {
  std::vector<SequentialInit> sequential;  // declaration order
  std::vector<IterativeInit> iterative;
  bool native_hook = false;  // a native init callback runs before sequential
};

struct CompiledService {
  std::string name;
  ServiceKind kind = ServiceKind::Constant;
  ExprPtr expr;           // Constant services with an expression
  bool assigned = false;  // Constant services set by a native hook
  ExternalLink link;
  std::string source;
  std::string group_indexer;
  std::string description, unit, tex_name;
};

struct CompiledDiscrete {
  std::string name;
  DiscreteKind kind = DiscreteKind::HardLimiter;
  int input_var = 0;  // index into vars
  std::string lower_param, upper_param;
  /// Anti-windup: the input state's residual with this limiter's flags forced
  /// to the released position (zi=1, zl=zu=0); used for the binding/release
  /// sign test.
  ExprPtr release_rhs;
};

struct CompiledModel {
  std::string name;
  std::string group;
  std::string description;
  bool power_flow = true;
  bool dynamic = true;
  bool native_equations = false;
  std::uint64_t schema_hash = 0;

  std::vector<ParamSpec> params;  // carried for the numeric layer and docs
  std::vector<CompiledVar> vars;  // declaration order
  int n_states = 0;               // vars of state kind (external included)
  int n_algebs = 0;

  std::array<std::vector<JacEntry>, 4> jac;  // indexed by JacBlock
  InitPlan init;
  std::vector<CompiledService> services;
  std::vector<CompiledDiscrete> discretes;
  std::string doc;  // rendered model reference (markdown + latex math)

  const std::vector<JacEntry>& jacobian(JacBlock b) const {
    return jac[static_cast<int>(b)];
  }
  int find_var(const std::string& n) const;
  int find_param(const std::string& n) const;
  int find_service(const std::string& n) const;
};

/// Stable hash of the schema source; any edit to declarations changes it.
std::uint64_t schema_hash(const ModelSchema& s);

/// Compile an expanded schema (no blocks left). Throws ModelError on
/// unresolvable symbols, reported with model and equation.
CompiledModel compile_model(const ModelSchema& s);

/// expand_blocks + compile_model.
CompiledModel compile(const ModelSchema& s);

/// The initialization plan alone (also embedded in CompiledModel::init).
InitPlan derive_init_plan(const ModelSchema& s);

/// Serialize / restore a compiled model. Round-trips to a structurally equal
/// model; load rejects version or hash mismatches with CacheError.
std::string cache_store(const CompiledModel& m);
CompiledModel cache_load(const std::string& bytes);

/// Model reference document (deterministic).
std::string render_docs(const CompiledModel& m);

}  // namespace gridsym
