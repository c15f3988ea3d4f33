#include "gridsym/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "gridsym/models.hpp"

namespace gridsym {

using nlohmann::ordered_json;

namespace {

constexpr double kPi = 3.14159265358979323846;

const std::vector<std::string>& known_case_tables() {
  static const std::vector<std::string> names = {"Bus",   "PQ",   "PV",     "Slack", "Shunt",
                                                 "Line",  "GENCLS", "TGOV1", "GENROU"};
  return names;
}

bool is_known_table(const std::string& name) {
  const auto& k = known_case_tables();
  return std::find(k.begin(), k.end(), name) != k.end();
}

}  // namespace

const std::vector<DeviceRow>* CaseFile::find_table(const std::string& model) const {
  for (const auto& [name, rows] : tables) {
    if (name == model) return &rows;
  }
  return nullptr;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CaseError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CaseError("cannot write file '" + path + "'");
  out << content;
}

// ---------------------------------------------------------------------------
// Native JSON case format
// ---------------------------------------------------------------------------

CaseFile parse_case(const std::string& text, const std::string& origin) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    throw CaseError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw CaseError(origin + ": case file must be a JSON object");

  CaseFile cf;
  for (const auto& [key, value] : j.items()) {
    if (key == "baseMVA") {
      cf.base_mva = value.get<double>();
      continue;
    }
    if (key == "freq") {
      cf.freq = value.get<double>();
      continue;
    }
    if (!is_known_table(key)) {
      throw CaseError(origin + ": unknown model name '" + key + "'");
    }
    if (!value.is_array()) {
      throw CaseError(origin + ": model '" + key + "' must map to an array of rows");
    }
    std::vector<DeviceRow> rows;
    for (const auto& row : value) {
      if (!row.is_object()) {
        throw CaseError(origin + ": model '" + key + "' rows must be objects");
      }
      DeviceRow r;
      for (const auto& [field, cell] : row.items()) {
        if (cell.is_number()) {
          r[field] = cell.get<double>();
        } else if (cell.is_string()) {
          r[field] = cell.get<std::string>();
        } else {
          throw CaseError(origin + ": model '" + key + "' field '" + field +
                          "' must be a number or string");
        }
      }
      rows.push_back(std::move(r));
    }
    cf.tables.emplace_back(key, std::move(rows));
  }
  return cf;
}

CaseFile load_case(const std::string& path) { return parse_case(read_text_file(path), path); }

std::string write_case(const CaseFile& cf) {
  ordered_json j;
  j["baseMVA"] = cf.base_mva;
  j["freq"] = cf.freq;
  for (const auto& [name, rows] : cf.tables) {
    ordered_json arr = ordered_json::array();
    for (const auto& row : rows) {
      ordered_json r;
      for (const auto& [field, value] : row) {
        if (std::holds_alternative<double>(value)) {
          r[field] = std::get<double>(value);
        } else {
          r[field] = std::get<std::string>(value);
        }
      }
      arr.push_back(std::move(r));
    }
    j[name] = std::move(arr);
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// MATPOWER subset
// ---------------------------------------------------------------------------

namespace {

std::string strip_matpower_comments(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool in_comment = false;
  for (char c : text) {
    if (c == '%') in_comment = true;
    if (c == '\n') in_comment = false;
    out.push_back(in_comment ? ' ' : c);
  }
  return out;
}

double parse_scalar_field(const std::string& text, const std::string& name,
                          const std::string& origin) {
  auto pos = text.find("mpc." + name);
  if (pos == std::string::npos) throw CaseError(origin + ": missing mpc." + name);
  pos = text.find('=', pos);
  if (pos == std::string::npos) throw CaseError(origin + ": malformed mpc." + name);
  ++pos;
  while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  double v = 0.0;
  auto res = std::from_chars(text.data() + pos, text.data() + text.size(), v);
  if (res.ec != std::errc()) throw CaseError(origin + ": malformed value for mpc." + name);
  return v;
}

std::vector<std::vector<double>> parse_matrix_field(const std::string& text,
                                                    const std::string& name,
                                                    const std::string& origin) {
  auto pos = text.find("mpc." + name);
  if (pos == std::string::npos) throw CaseError(origin + ": missing block mpc." + name);
  pos = text.find('[', pos);
  if (pos == std::string::npos) throw CaseError(origin + ": missing '[' for mpc." + name);
  auto end = text.find(']', pos);
  if (end == std::string::npos) throw CaseError(origin + ": missing ']' for mpc." + name);

  std::vector<std::vector<double>> rows;
  std::vector<double> current;
  std::size_t i = pos + 1;
  while (i < end) {
    char c = text[i];
    if (c == ';' || c == '\n') {
      if (!current.empty()) rows.push_back(std::move(current));
      current.clear();
      ++i;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      ++i;
      continue;
    }
    double v = 0.0;
    auto res = std::from_chars(text.data() + i, text.data() + end, v);
    if (res.ec != std::errc()) {
      throw CaseError(origin + ": malformed matrix row in mpc." + name);
    }
    current.push_back(v);
    i = static_cast<std::size_t>(res.ptr - text.data());
  }
  if (!current.empty()) rows.push_back(std::move(current));

  if (!rows.empty()) {
    const std::size_t width = rows.front().size();
    for (const auto& r : rows) {
      if (r.size() != width) {
        throw CaseError(origin + ": ragged matrix rows in mpc." + name);
      }
    }
  }
  return rows;
}

}  // namespace

CaseFile parse_matpower(const std::string& text_in, const std::string& origin) {
  const std::string text = strip_matpower_comments(text_in);
  CaseFile cf;
  cf.base_mva = parse_scalar_field(text, "baseMVA", origin);
  const auto bus = parse_matrix_field(text, "bus", origin);
  const auto gen = parse_matrix_field(text, "gen", origin);
  const auto branch = parse_matrix_field(text, "branch", origin);

  std::vector<DeviceRow> buses, pqs, pvs, slacks, shunts, lines;
  std::map<long long, int> bus_type;
  std::map<long long, double> bus_va;

  for (const auto& r : bus) {
    if (r.size() < 13) throw CaseError(origin + ": bus row needs 13 columns");
    const long long id = std::llround(r[0]);
    bus_type[id] = static_cast<int>(std::llround(r[1]));
    const double va = r[8] * kPi / 180.0;
    bus_va[id] = va;
    buses.push_back({{"idx", static_cast<double>(id)},
                     {"Vn", r[9]},
                     {"v0", r[7]},
                     {"a0", va},
                     {"area", r[6]}});
    if (r[2] != 0.0 || r[3] != 0.0) {
      pqs.push_back({{"idx", "PQ_" + std::to_string(id)},
                     {"bus", static_cast<double>(id)},
                     {"p0", r[2] / cf.base_mva},
                     {"q0", r[3] / cf.base_mva}});
    }
    if (r[4] != 0.0 || r[5] != 0.0) {
      shunts.push_back({{"idx", "Shunt_" + std::to_string(id)},
                        {"bus", static_cast<double>(id)},
                        {"g", r[4] / cf.base_mva},
                        {"b", r[5] / cf.base_mva}});
    }
  }

  bool have_slack = false;
  int gen_count = 0;
  for (const auto& r : gen) {
    if (r.size() < 8) throw CaseError(origin + ": gen row needs at least 8 columns");
    ++gen_count;
    const long long bus_id = std::llround(r[0]);
    auto it = bus_type.find(bus_id);
    if (it == bus_type.end()) {
      throw CaseError(origin + ": generator references unknown bus " + std::to_string(bus_id));
    }
    DeviceRow row{{"idx", static_cast<double>(gen_count)},
                  {"bus", static_cast<double>(bus_id)},
                  {"p0", r[1] / cf.base_mva},
                  {"q0", r[2] / cf.base_mva},
                  {"v0", r[5]},
                  {"Sn", r[6] == 0.0 ? cf.base_mva : r[6]},
                  {"u", r[7] > 0 ? 1.0 : 0.0}};
    if (it->second == 3 && !have_slack) {
      row["a0"] = bus_va[bus_id];
      slacks.push_back(std::move(row));
      have_slack = true;
    } else {
      pvs.push_back(std::move(row));
    }
  }

  int line_count = 0;
  for (const auto& r : branch) {
    if (r.size() < 11) throw CaseError(origin + ": branch row needs at least 11 columns");
    ++line_count;
    lines.push_back({{"idx", "Line_" + std::to_string(line_count)},
                     {"bus1", r[0]},
                     {"bus2", r[1]},
                     {"r", r[2]},
                     {"x", r[3]},
                     {"b", r[4]},
                     {"tap", r[8] == 0.0 ? 1.0 : r[8]},
                     {"phi", r[9] * kPi / 180.0},
                     {"u", r[10] > 0 ? 1.0 : 0.0}});
  }

  cf.tables.emplace_back("Bus", std::move(buses));
  if (!pqs.empty()) cf.tables.emplace_back("PQ", std::move(pqs));
  if (!pvs.empty()) cf.tables.emplace_back("PV", std::move(pvs));
  if (!slacks.empty()) cf.tables.emplace_back("Slack", std::move(slacks));
  if (!shunts.empty()) cf.tables.emplace_back("Shunt", std::move(shunts));
  cf.tables.emplace_back("Line", std::move(lines));
  return cf;
}

CaseFile load_matpower(const std::string& path) {
  return parse_matpower(read_text_file(path), path);
}

// ---------------------------------------------------------------------------
// System building
// ---------------------------------------------------------------------------

namespace {

// The GENROU table carries the full machine data; the in-scope classical
// model consumes idx, bus, gen, M, D, xd1 (documented mapping) and the rest
// stays untouched in the CaseFile.
std::vector<DeviceRow> genrou_to_gencls(const std::vector<DeviceRow>& rows) {
  static const char* kept[] = {"idx", "bus", "gen", "M", "D", "xd1", "Sn", "u"};
  std::vector<DeviceRow> out;
  for (const auto& row : rows) {
    DeviceRow r;
    for (const char* field : kept) {
      auto it = row.find(field);
      if (it != row.end()) r[field] = it->second;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

System build_system(const CaseFile& cf) {
  return build_system(cf, compile_builtin_models());
}

System build_system(const CaseFile& cf, const std::vector<CompiledModel>& compiled) {
  System sys = make_builtin_system(compiled);
  sys.base_mva = cf.base_mva;
  sys.freq = cf.freq;

  for (const auto& name : std::vector<std::string>(sys.model_order())) {
    const std::vector<DeviceRow>* rows = cf.find_table(name);
    if (name == "GENCLS") {
      if (const auto* genrou = cf.find_table("GENROU")) {
        auto mapped = genrou_to_gencls(*genrou);
        if (rows) {
          mapped.insert(mapped.end(), rows->begin(), rows->end());
        }
        sys.add_devices(name, mapped);
        continue;
      }
    }
    if (rows) sys.add_devices(name, *rows);
  }

  // system frequency reaches models through their rated-frequency parameter
  if (sys.has_model("GENCLS")) {
    ModelRuntime& m = sys.model("GENCLS");
    int pi = m.param_index("fn");
    if (pi >= 0) {
      for (auto& v : m.params[pi]) {
        if (v == m.model->params[pi].default_value) v = sys.freq;
      }
    }
  }

  sys.per_unit_convert();
  sys.allocate_addresses();
  sys.link_external();
  sys.evaluate_services();
  return sys;
}

// ---------------------------------------------------------------------------
// Result files
// ---------------------------------------------------------------------------

namespace {

std::string fixed_decimal(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10f", v);
  return buf;
}

}  // namespace

std::string tds_csv(const TdsResult& result) {
  std::ostringstream out;
  out << "t";
  for (const auto& n : result.state_names) out << "," << n;
  for (const auto& n : result.algeb_names) out << "," << n;
  out << "\n";
  for (std::size_t k = 0; k < result.times.size(); ++k) {
    out << fixed_decimal(result.times[k]);
    for (double v : result.states[k]) out << "," << fixed_decimal(v);
    for (double v : result.algebs[k]) out << "," << fixed_decimal(v);
    out << "\n";
  }
  return out.str();
}

void write_tds_csv(const TdsResult& result, const std::string& path) {
  write_text_file(path, tds_csv(result));
}

std::string pf_csv(const PowerFlowResult& result) {
  std::ostringstream out;
  out << "name,value\n";
  for (std::size_t i = 0; i < result.algeb_names.size(); ++i) {
    out << result.algeb_names[i] << "," << fixed_decimal(result.y[i]) << "\n";
  }
  return out.str();
}

std::string pf_json(const PowerFlowResult& result) {
  ordered_json j;
  j["converged"] = result.converged;
  j["iterations"] = result.iterations;
  j["max_residual"] = result.max_residual;
  j["timings"] = {{"update_equations", result.timings.update_equations},
                  {"build_jacobians", result.timings.build_jacobians},
                  {"solve_equations", result.timings.solve_equations}};
  ordered_json sol;
  for (std::size_t i = 0; i < result.algeb_names.size(); ++i) {
    sol[result.algeb_names[i]] = result.y[i];
  }
  j["solution"] = std::move(sol);
  return j.dump(2) + "\n";
}

std::string eigen_csv(const EigenReport& report) {
  std::ostringstream out;
  out << "sigma,omega,zeta\n";
  for (std::size_t i = 0; i < report.eigenvalues.size(); ++i) {
    char buf[120];
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g\n", report.eigenvalues[i].real(),
                  report.eigenvalues[i].imag(), report.damping[i]);
    out << buf;
  }
  return out.str();
}

std::vector<std::string> export_model_docs(const std::vector<CompiledModel>& models,
                                           const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  std::ostringstream index;
  index << "# Model references\n\n";
  for (const auto& m : models) {
    const std::string path = dir + "/" + m.name + ".md";
    write_text_file(path, m.doc);
    index << "- [" << m.name << "](" << m.name << ".md)\n";
    paths.push_back(path);
  }
  const std::string index_path = dir + "/index.md";
  write_text_file(index_path, index.str());
  paths.push_back(index_path);
  return paths;
}

}  // namespace gridsym
