#pragma once

// Case ingestion (native JSON format and a MATPOWER subset), simulation
// output files, and documentation export.

#include <string>
#include <vector>

#include "gridsym/routines.hpp"
#include "gridsym/system.hpp"

namespace gridsym {

struct CaseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CaseFile {
  double base_mva = 100.0;
  double freq = 60.0;
  // per-model device rows, keyed by model name, field names per table
  std::vector<std::pair<std::string, std::vector<DeviceRow>>> tables;

  const std::vector<DeviceRow>* find_table(const std::string& model) const;
};

/// Native format: JSON object with baseMVA / freq and one array of row
/// objects per model name. Unknown model names are rejected.
CaseFile load_case(const std::string& path);
CaseFile parse_case(const std::string& text, const std::string& origin = "<string>");
std::string write_case(const CaseFile& cf);

/// MATPOWER subset: mpc.baseMVA, mpc.bus, mpc.gen, mpc.branch matrices with
/// % comments. Bus types map 3 -> Slack, 2 -> PV, 1 with load -> PQ; GS/BS
/// become Shunt devices; branches become Line devices.
CaseFile load_matpower(const std::string& path);
CaseFile parse_matpower(const std::string& text, const std::string& origin = "<string>");

/// Build a ready-to-solve system: register built-in models, load devices
/// (GENROU table rows feed the classical machine parameters), convert to
/// per unit, allocate addresses, link, and evaluate services.
System build_system(const CaseFile& cf);
System build_system(const CaseFile& cf, const std::vector<CompiledModel>& compiled);

/// Time series as CSV: header `t,<model>.<var>[idx],...`, fixed decimal
/// format, column order = address order (states then algebraics).
void write_tds_csv(const TdsResult& result, const std::string& path);
std::string tds_csv(const TdsResult& result);

/// Power-flow solution as CSV (name,value) or JSON.
std::string pf_csv(const PowerFlowResult& result);
std::string pf_json(const PowerFlowResult& result);

/// S-plane scatter data: sigma, omega, zeta columns, one row per eigenvalue.
std::string eigen_csv(const EigenReport& report);

/// One markdown document per compiled model, written to dir/<Model>.md;
/// returns the written paths.
std::vector<std::string> export_model_docs(const std::vector<CompiledModel>& models,
                                           const std::string& dir);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace gridsym
