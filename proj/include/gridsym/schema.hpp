#pragma once

// Declarative model schemas: typed elements (parameters, variables, discrete
// components, services, blocks) collected in declaration order, plus block
// expansion. A schema is test-case independent; compiling it touches no case
// data.

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gridsym {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PowerBase { None, Power, InversePower };

struct ParamSpec {
  std::string name;
  std::string description;
  std::string unit;
  double default_value = 0.0;
  bool non_zero = false;
  PowerBase base_scaling = PowerBase::None;
  bool is_idx = false;
  std::string idx_target;  // model or group name (is_idx only)
  std::string tex_name;
};

enum class VarKind { State, Algebraic };

struct ExternalLink {
  std::string model;    // target model or group name
  std::string src;      // source variable/service name on the target
  std::string indexer;  // idx param on this model selecting target devices
};

struct VarSpec {
  std::string name;
  VarKind kind = VarKind::Algebraic;
  bool external = false;
  ExternalLink link;
  std::string e_str;   // residual contribution added to this variable's equation
  std::string v_str;   // explicit (sequential) initialization
  std::string v_iter;  // implicit initialization residual, solved iteratively
  double diag_eps = 0.0;
  bool init_overwrite = false;  // external vars: v_str writes the linked address
  std::string description;
  std::string unit;
  std::string tex_name;
};

enum class DiscreteKind { HardLimiter, AntiWindup };

/// Exports three 0/1 flags named <name>_zl, <name>_zi, <name>_zu.
struct DiscreteSpec {
  std::string name;
  DiscreteKind kind = DiscreteKind::HardLimiter;
  std::string input;  // variable name
  std::string lower;  // param name
  std::string upper;  // param name
};

enum class ServiceKind { Constant, External, Reduce, Repeat };

struct ServiceSpec {
  std::string name;
  ServiceKind kind = ServiceKind::Constant;
  std::string e_str;          // Constant: expression over params/earlier services
  bool assigned = false;      // Constant: set by a native hook; never re-evaluated
  ExternalLink link;          // External: copied once at initialization
  std::string source;         // Reduce: param/service; Repeat: a reduce service
  std::string group_indexer;  // Reduce/Repeat: param whose values define groups
  std::string description;
  std::string unit;
  std::string tex_name;
};

enum class BlockKind { Gain, Lag, LeadLag, LagAntiWindup };

/// Transfer-function block; expansion exports <name>_y (and helpers).
struct BlockSpec {
  std::string name;
  BlockKind kind = BlockKind::Gain;
  std::string input;  // expression string
  std::string K = "1";
  std::string T = "1";
  std::string T1 = "1";
  std::string T2 = "1";
  std::string lower;  // param name, LagAntiWindup only
  std::string upper;  // param name, LagAntiWindup only
};

enum class ElementKind { Param, Var, Discrete, Service, Block };

struct ModelSchema {
  std::string name;
  std::string group;        // cross-model indexing group, e.g. "SynGen"
  std::string description;
  bool power_flow = true;   // participates in the power-flow routine
  bool dynamic = true;      // participates in dynamic routines
  bool native_init = false; // expects a registered native init hook
  bool native_equations = false;  // expects native residual/jacobian hooks

  std::vector<ParamSpec> params;
  std::vector<VarSpec> vars;
  std::vector<DiscreteSpec> discretes;
  std::vector<ServiceSpec> services;
  std::vector<BlockSpec> blocks;
  std::vector<std::pair<ElementKind, int>> declaration_order;

  ParamSpec& add_param(ParamSpec p);
  VarSpec& add_var(VarSpec v);
  DiscreteSpec& add_discrete(DiscreteSpec d);
  ServiceSpec& add_service(ServiceSpec s);
  BlockSpec& add_block(BlockSpec b);

  const ParamSpec* find_param(const std::string& n) const;
  const VarSpec* find_var(const std::string& n) const;
  const ServiceSpec* find_service(const std::string& n) const;
  bool owns_name(const std::string& n) const;  // any element or exported flag
};

/// Validate declarations: unique names, parseable equation strings, resolvable
/// references. Returns the schema unchanged on success; throws ModelError.
ModelSchema build_schema(ModelSchema declarations);

/// Replace every block with its element template, with placeholder symbols
/// substituted. The result contains no blocks and validates.
ModelSchema expand_blocks(const ModelSchema& s);

}  // namespace gridsym
