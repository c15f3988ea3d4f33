#pragma once

// Built-in model library: Bus, PQ, PV, Slack, Shunt, Line, GENCLS, TGOV1,
// declared through the symbolic layer, plus loading and per-unit utilities.

#include <string>
#include <vector>

#include "gridsym/compiled.hpp"
#include "gridsym/schema.hpp"
#include "gridsym/system.hpp"

namespace gridsym {

/// Schemas in registration order (power-flow models first, then dynamic).
std::vector<ModelSchema> builtin_schemas();
ModelSchema builtin_schema(const std::string& name);

/// Compile all built-in models (block expansion included).
std::vector<CompiledModel> compile_builtin_models();

/// Fresh system with all built-in models registered and native hooks
/// installed (classical generator initialization).
System make_builtin_system();
System make_builtin_system(const std::vector<CompiledModel>& compiled);

/// Install native hooks on a system that already has the models.
void install_builtin_hooks(System& sys);

/// Populate a device table; defaults (u=1, Sn=100, ...) applied.
void load_devices(System& sys, const std::string& model, const std::vector<DeviceRow>& rows);

/// Scale device-base parameters to the system MVA base.
void per_unit_convert(System& sys);

/// After a converged power flow: replace every PQ's constant-power injection
/// with the equivalent constant impedance at the solved voltage (g = p0/v^2,
/// b = -q0/v^2); the constant-power behavior is disabled for the dynamic run.
void convert_pq_to_shunt(System& sys);

}  // namespace gridsym
