#include "gridsym/compiled.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gridsym {

using nlohmann::json;

int CompiledModel::find_var(const std::string& n) const {
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (vars[i].name == n) return static_cast<int>(i);
  }
  return -1;
}

int CompiledModel::find_param(const std::string& n) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name == n) return static_cast<int>(i);
  }
  return -1;
}

int CompiledModel::find_service(const std::string& n) const {
  for (std::size_t i = 0; i < services.size(); ++i) {
    if (services[i].name == n) return static_cast<int>(i);
  }
  return -1;
}

// ---------------------------------------------------------------------------
// Schema hash (FNV-1a over a canonical dump)
// ---------------------------------------------------------------------------

namespace {

struct Fnv {
  std::uint64_t h = 1469598103934665603ull;
  void feed(std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    feed_byte(0xff);
  }
  void feed_byte(unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  }
  void feed_num(double v) { feed(format_number(v)); }
};

}  // namespace

std::uint64_t schema_hash(const ModelSchema& s) {
  Fnv f;
  f.feed("gridsym-schema-v1");
  f.feed(s.name);
  f.feed(s.group);
  f.feed_byte(s.power_flow);
  f.feed_byte(s.dynamic);
  f.feed_byte(s.native_init);
  f.feed_byte(s.native_equations);
  for (const auto& p : s.params) {
    f.feed("P");
    f.feed(p.name);
    f.feed_num(p.default_value);
    f.feed_byte(p.non_zero);
    f.feed_byte(static_cast<unsigned char>(p.base_scaling));
    f.feed_byte(p.is_idx);
    f.feed(p.idx_target);
  }
  for (const auto& v : s.vars) {
    f.feed("V");
    f.feed(v.name);
    f.feed_byte(v.kind == VarKind::State);
    f.feed_byte(v.external);
    f.feed(v.link.model);
    f.feed(v.link.src);
    f.feed(v.link.indexer);
    f.feed(v.e_str);
    f.feed(v.v_str);
    f.feed(v.v_iter);
    f.feed_num(v.diag_eps);
    f.feed_byte(v.init_overwrite);
  }
  for (const auto& d : s.discretes) {
    f.feed("D");
    f.feed(d.name);
    f.feed_byte(static_cast<unsigned char>(d.kind));
    f.feed(d.input);
    f.feed(d.lower);
    f.feed(d.upper);
  }
  for (const auto& sv : s.services) {
    f.feed("S");
    f.feed(sv.name);
    f.feed_byte(static_cast<unsigned char>(sv.kind));
    f.feed_byte(sv.assigned);
    f.feed(sv.e_str);
    f.feed(sv.link.model);
    f.feed(sv.link.src);
    f.feed(sv.link.indexer);
    f.feed(sv.source);
    f.feed(sv.group_indexer);
  }
  for (const auto& b : s.blocks) {
    f.feed("B");
    f.feed(b.name);
    f.feed_byte(static_cast<unsigned char>(b.kind));
    f.feed(b.input);
    f.feed(b.K);
    f.feed(b.T);
    f.feed(b.T1);
    f.feed(b.T2);
    f.feed(b.lower);
    f.feed(b.upper);
  }
  return f.h;
}

// ---------------------------------------------------------------------------
// compile_model
// ---------------------------------------------------------------------------

namespace {

ExprPtr parse_checked(const ModelSchema& s, const std::string& text, const std::string& where) {
  try {
    return parse(text);
  } catch (const ParseError& e) {
    throw ModelError("model '" + s.name + "', " + where + ": " + e.what());
  }
}

}  // namespace

InitPlan derive_init_plan(const ModelSchema& s) {
  InitPlan plan;
  plan.native_hook = s.native_init;
  for (std::size_t i = 0; i < s.vars.size(); ++i) {
    const VarSpec& v = s.vars[i];
    if (!v.v_str.empty()) {
      plan.sequential.push_back(
          {static_cast<int>(i), parse_checked(s, v.v_str, "v_str of '" + v.name + "'")});
    }
    if (!v.v_iter.empty()) {
      ExprPtr start;
      if (!v.v_str.empty()) start = parse_checked(s, v.v_str, "v_str of '" + v.name + "'");
      plan.iterative.push_back(
          {static_cast<int>(i), parse_checked(s, v.v_iter, "v_iter of '" + v.name + "'"), start});
    }
  }
  return plan;
}

CompiledModel compile_model(const ModelSchema& schema) {
  if (!schema.blocks.empty()) {
    throw ModelError("model '" + schema.name + "': compile_model expects expanded blocks");
  }
  const ModelSchema s = build_schema(schema);

  CompiledModel m;
  m.name = s.name;
  m.group = s.group;
  m.description = s.description;
  m.power_flow = s.power_flow;
  m.dynamic = s.dynamic;
  m.native_equations = s.native_equations;
  m.schema_hash = schema_hash(s);
  m.params = s.params;

  // Ordered variable vector: declaration order, with per-class indices.
  for (const auto& v : s.vars) {
    CompiledVar cv;
    cv.name = v.name;
    cv.kind = v.kind;
    cv.external = v.external;
    cv.link = v.link;
    cv.diag_eps = v.diag_eps;
    cv.init_overwrite = v.init_overwrite;
    cv.description = v.description;
    cv.unit = v.unit;
    cv.tex_name = v.tex_name;
    cv.class_index = (v.kind == VarKind::State) ? m.n_states++ : m.n_algebs++;
    if (!v.e_str.empty()) {
      cv.rhs_raw = parse_checked(s, v.e_str, "e_str of '" + v.name + "'");
      cv.rhs = simplify(cv.rhs_raw);
    }
    m.vars.push_back(std::move(cv));
  }

  // Jacobian triplets: derive each residual against every variable of the
  // model. Params, services, and discrete flags stay symbolic constants.
  for (const auto& eq : m.vars) {
    if (!eq.rhs) continue;
    const bool f_row = (eq.kind == VarKind::State);
    for (const auto& wrt : m.vars) {
      ExprPtr d = simplify(differentiate(eq.rhs, wrt.name));
      if (d->is_constant(0.0)) continue;
      JacBlock block = f_row ? (wrt.kind == VarKind::State ? JacBlock::FX : JacBlock::FY)
                             : (wrt.kind == VarKind::State ? JacBlock::GX : JacBlock::GY);
      m.jac[static_cast<int>(block)].push_back({eq.class_index, wrt.class_index, d});
    }
  }

  m.init = derive_init_plan(s);

  for (const auto& sv : s.services) {
    CompiledService cs;
    cs.name = sv.name;
    cs.kind = sv.kind;
    cs.assigned = sv.assigned;
    if (sv.kind == ServiceKind::Constant && !sv.assigned) {
      cs.expr = parse_checked(s, sv.e_str, "service '" + sv.name + "'");
    }
    cs.link = sv.link;
    cs.source = sv.source;
    cs.group_indexer = sv.group_indexer;
    cs.description = sv.description;
    cs.unit = sv.unit;
    cs.tex_name = sv.tex_name;
    m.services.push_back(std::move(cs));
  }

  for (const auto& d : s.discretes) {
    CompiledDiscrete cd;
    cd.name = d.name;
    cd.kind = d.kind;
    cd.input_var = m.find_var(d.input);
    cd.lower_param = d.lower;
    cd.upper_param = d.upper;
    if (d.kind == DiscreteKind::AntiWindup) {
      const CompiledVar& in = m.vars[cd.input_var];
      if (in.rhs) {
        std::map<std::string, ExprPtr> released = {
            {d.name + "_zi", Expr::constant(1.0)},
            {d.name + "_zl", Expr::constant(0.0)},
            {d.name + "_zu", Expr::constant(0.0)},
        };
        cd.release_rhs = simplify(substitute(in.rhs, released));
      }
    }
    m.discretes.push_back(std::move(cd));
  }

  m.doc = render_docs(m);
  return m;
}

CompiledModel compile(const ModelSchema& s) { return compile_model(expand_blocks(s)); }

// ---------------------------------------------------------------------------
// Cache serialization
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCacheFormat = "gridsym-compiled";
constexpr int kCacheVersion = 1;

json expr_to_json(const ExprPtr& e) {
  if (!e) return nullptr;
  return render(e, RenderStyle::Plain);
}

ExprPtr expr_from_json(const json& j) {
  if (j.is_null()) return nullptr;
  return parse(j.get<std::string>());
}

json link_to_json(const ExternalLink& l) {
  return json{{"model", l.model}, {"src", l.src}, {"indexer", l.indexer}};
}

ExternalLink link_from_json(const json& j) {
  ExternalLink l;
  l.model = j.at("model").get<std::string>();
  l.src = j.at("src").get<std::string>();
  l.indexer = j.at("indexer").get<std::string>();
  return l;
}

}  // namespace

std::string cache_store(const CompiledModel& m) {
  json j;
  j["format"] = kCacheFormat;
  j["version"] = kCacheVersion;
  j["name"] = m.name;
  j["group"] = m.group;
  j["description"] = m.description;
  j["power_flow"] = m.power_flow;
  j["dynamic"] = m.dynamic;
  j["native_equations"] = m.native_equations;
  j["schema_hash"] = m.schema_hash;

  j["params"] = json::array();
  for (const auto& p : m.params) {
    j["params"].push_back({{"name", p.name},
                           {"description", p.description},
                           {"unit", p.unit},
                           {"default", p.default_value},
                           {"non_zero", p.non_zero},
                           {"base_scaling", static_cast<int>(p.base_scaling)},
                           {"is_idx", p.is_idx},
                           {"idx_target", p.idx_target},
                           {"tex_name", p.tex_name}});
  }

  j["vars"] = json::array();
  for (const auto& v : m.vars) {
    j["vars"].push_back({{"name", v.name},
                         {"state", v.kind == VarKind::State},
                         {"external", v.external},
                         {"link", link_to_json(v.link)},
                         {"class_index", v.class_index},
                         {"diag_eps", v.diag_eps},
                         {"init_overwrite", v.init_overwrite},
                         {"rhs", expr_to_json(v.rhs)},
                         {"rhs_raw", expr_to_json(v.rhs_raw)},
                         {"description", v.description},
                         {"unit", v.unit},
                         {"tex_name", v.tex_name}});
  }
  j["n_states"] = m.n_states;
  j["n_algebs"] = m.n_algebs;

  const char* block_names[] = {"fx", "fy", "gx", "gy"};
  for (int b = 0; b < 4; ++b) {
    json arr = json::array();
    for (const auto& e : m.jac[b]) {
      arr.push_back({{"row", e.row}, {"col", e.col}, {"value", expr_to_json(e.value)}});
    }
    j["jac"][block_names[b]] = std::move(arr);
  }

  j["init"]["native_hook"] = m.init.native_hook;
  j["init"]["sequential"] = json::array();
  for (const auto& st : m.init.sequential) {
    j["init"]["sequential"].push_back({{"var", st.var}, {"value", expr_to_json(st.value)}});
  }
  j["init"]["iterative"] = json::array();
  for (const auto& it : m.init.iterative) {
    j["init"]["iterative"].push_back({{"var", it.var},
                                      {"residual", expr_to_json(it.residual)},
                                      {"start", expr_to_json(it.start)}});
  }

  j["services"] = json::array();
  for (const auto& sv : m.services) {
    j["services"].push_back({{"name", sv.name},
                             {"kind", static_cast<int>(sv.kind)},
                             {"assigned", sv.assigned},
                             {"expr", expr_to_json(sv.expr)},
                             {"link", link_to_json(sv.link)},
                             {"source", sv.source},
                             {"group_indexer", sv.group_indexer},
                             {"description", sv.description},
                             {"unit", sv.unit},
                             {"tex_name", sv.tex_name}});
  }

  j["discretes"] = json::array();
  for (const auto& d : m.discretes) {
    j["discretes"].push_back({{"name", d.name},
                              {"kind", static_cast<int>(d.kind)},
                              {"input_var", d.input_var},
                              {"lower_param", d.lower_param},
                              {"upper_param", d.upper_param},
                              {"release_rhs", expr_to_json(d.release_rhs)}});
  }

  j["doc"] = m.doc;
  return j.dump();
}

CompiledModel cache_load(const std::string& bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::exception& e) {
    throw CacheError(std::string("corrupt cache payload: ") + e.what());
  }
  try {
    if (j.value("format", "") != kCacheFormat) throw CacheError("not a compiled-model cache");
    if (j.value("version", -1) != kCacheVersion) {
      throw CacheError("cache version mismatch (expected " + std::to_string(kCacheVersion) + ")");
    }
    CompiledModel m;
    m.name = j.at("name").get<std::string>();
    m.group = j.at("group").get<std::string>();
    m.description = j.at("description").get<std::string>();
    m.power_flow = j.at("power_flow").get<bool>();
    m.dynamic = j.at("dynamic").get<bool>();
    m.native_equations = j.at("native_equations").get<bool>();
    m.schema_hash = j.at("schema_hash").get<std::uint64_t>();

    for (const auto& pj : j.at("params")) {
      ParamSpec p;
      p.name = pj.at("name").get<std::string>();
      p.description = pj.at("description").get<std::string>();
      p.unit = pj.at("unit").get<std::string>();
      p.default_value = pj.at("default").get<double>();
      p.non_zero = pj.at("non_zero").get<bool>();
      p.base_scaling = static_cast<PowerBase>(pj.at("base_scaling").get<int>());
      p.is_idx = pj.at("is_idx").get<bool>();
      p.idx_target = pj.at("idx_target").get<std::string>();
      p.tex_name = pj.at("tex_name").get<std::string>();
      m.params.push_back(std::move(p));
    }

    for (const auto& vj : j.at("vars")) {
      CompiledVar v;
      v.name = vj.at("name").get<std::string>();
      v.kind = vj.at("state").get<bool>() ? VarKind::State : VarKind::Algebraic;
      v.external = vj.at("external").get<bool>();
      v.link = link_from_json(vj.at("link"));
      v.class_index = vj.at("class_index").get<int>();
      v.diag_eps = vj.at("diag_eps").get<double>();
      v.init_overwrite = vj.at("init_overwrite").get<bool>();
      v.rhs = expr_from_json(vj.at("rhs"));
      v.rhs_raw = expr_from_json(vj.at("rhs_raw"));
      v.description = vj.at("description").get<std::string>();
      v.unit = vj.at("unit").get<std::string>();
      v.tex_name = vj.at("tex_name").get<std::string>();
      m.vars.push_back(std::move(v));
    }
    m.n_states = j.at("n_states").get<int>();
    m.n_algebs = j.at("n_algebs").get<int>();

    const char* block_names[] = {"fx", "fy", "gx", "gy"};
    for (int b = 0; b < 4; ++b) {
      for (const auto& ej : j.at("jac").at(block_names[b])) {
        m.jac[b].push_back({ej.at("row").get<int>(), ej.at("col").get<int>(),
                            expr_from_json(ej.at("value"))});
      }
    }

    m.init.native_hook = j.at("init").at("native_hook").get<bool>();
    for (const auto& sj : j.at("init").at("sequential")) {
      m.init.sequential.push_back({sj.at("var").get<int>(), expr_from_json(sj.at("value"))});
    }
    for (const auto& ij : j.at("init").at("iterative")) {
      m.init.iterative.push_back({ij.at("var").get<int>(), expr_from_json(ij.at("residual")),
                                  expr_from_json(ij.at("start"))});
    }

    for (const auto& sj : j.at("services")) {
      CompiledService sv;
      sv.name = sj.at("name").get<std::string>();
      sv.kind = static_cast<ServiceKind>(sj.at("kind").get<int>());
      sv.assigned = sj.at("assigned").get<bool>();
      sv.expr = expr_from_json(sj.at("expr"));
      sv.link = link_from_json(sj.at("link"));
      sv.source = sj.at("source").get<std::string>();
      sv.group_indexer = sj.at("group_indexer").get<std::string>();
      sv.description = sj.at("description").get<std::string>();
      sv.unit = sj.at("unit").get<std::string>();
      sv.tex_name = sj.at("tex_name").get<std::string>();
      m.services.push_back(std::move(sv));
    }

    for (const auto& dj : j.at("discretes")) {
      CompiledDiscrete d;
      d.name = dj.at("name").get<std::string>();
      d.kind = static_cast<DiscreteKind>(dj.at("kind").get<int>());
      d.input_var = dj.at("input_var").get<int>();
      d.lower_param = dj.at("lower_param").get<std::string>();
      d.upper_param = dj.at("upper_param").get<std::string>();
      d.release_rhs = expr_from_json(dj.at("release_rhs"));
      m.discretes.push_back(std::move(d));
    }

    m.doc = j.at("doc").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    throw CacheError(std::string("malformed cache payload: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Documentation
// ---------------------------------------------------------------------------

namespace {

std::map<std::string, std::string> tex_table(const CompiledModel& m) {
  std::map<std::string, std::string> tex;
  for (const auto& p : m.params) {
    if (!p.tex_name.empty()) tex[p.name] = p.tex_name;
  }
  for (const auto& v : m.vars) {
    if (!v.tex_name.empty()) tex[v.name] = v.tex_name;
  }
  for (const auto& s : m.services) {
    if (!s.tex_name.empty()) tex[s.name] = s.tex_name;
  }
  return tex;
}

const char* power_base_name(PowerBase b) {
  switch (b) {
    case PowerBase::None: return "";
    case PowerBase::Power: return "power base";
    case PowerBase::InversePower: return "inverse power base";
  }
  return "";
}

std::string latex_name(const CompiledVar& v, const std::map<std::string, std::string>& tex) {
  return render_latex(Expr::symbol(v.name), tex);
}

}  // namespace

std::string render_docs(const CompiledModel& m) {
  const auto tex = tex_table(m);
  std::ostringstream out;
  out << "# " << m.name << "\n\n";
  if (!m.description.empty()) out << m.description << "\n\n";
  if (!m.group.empty()) out << "Group: " << m.group << "\n\n";

  out << "## Parameters\n\n";
  if (m.params.empty()) {
    out << "(none)\n\n";
  } else {
    out << "| Name | Default | Unit | Description | Properties |\n";
    out << "|------|---------|------|-------------|------------|\n";
    for (const auto& p : m.params) {
      std::string props;
      if (p.non_zero) props += "non-zero";
      if (p.base_scaling != PowerBase::None) {
        if (!props.empty()) props += ", ";
        props += power_base_name(p.base_scaling);
      }
      if (p.is_idx) {
        if (!props.empty()) props += ", ";
        props += "idx -> " + p.idx_target;
      }
      out << "| " << p.name << " | " << (p.is_idx ? std::string("-") : format_number(p.default_value))
          << " | " << p.unit << " | " << p.description << " | " << props << " |\n";
    }
    out << "\n";
  }

  out << "## Variables\n\n";
  if (m.vars.empty()) {
    out << "(none)\n\n";
  } else {
    out << "| Name | Kind | Initial value | Description |\n";
    out << "|------|------|---------------|-------------|\n";
    for (std::size_t i = 0; i < m.vars.size(); ++i) {
      const auto& v = m.vars[i];
      std::string init = "-";
      for (const auto& st : m.init.sequential) {
        if (st.var == static_cast<int>(i)) init = "$" + render_latex(st.value, tex) + "$";
      }
      std::string kind = v.kind == VarKind::State ? "state" : "algebraic";
      if (v.external) kind += " (external, " + v.link.model + "." + v.link.src + ")";
      out << "| " << v.name << " | " << kind << " | " << init << " | " << v.description
          << " |\n";
    }
    out << "\n";
  }

  if (!m.services.empty()) {
    out << "## Services\n\n";
    for (const auto& s : m.services) {
      out << "- " << s.name;
      switch (s.kind) {
        case ServiceKind::Constant:
          if (s.assigned) {
            out << " (computed at initialization)";
          } else {
            out << " = $" << render_latex(s.expr, tex) << "$";
          }
          break;
        case ServiceKind::External:
          out << " (copied from " << s.link.model << "." << s.link.src << ")";
          break;
        case ServiceKind::Reduce:
          out << " (sum of " << s.source << " grouped by " << s.group_indexer << ")";
          break;
        case ServiceKind::Repeat:
          out << " (" << s.source << " repeated over " << s.group_indexer << ")";
          break;
      }
      if (!s.description.empty()) out << " -- " << s.description;
      out << "\n";
    }
    out << "\n";
  }

  out << "## Differential equations\n\n";
  bool any = false;
  for (const auto& v : m.vars) {
    if (v.kind != VarKind::State || !v.rhs_raw) continue;
    any = true;
    out << "$$\\dot{" << latex_name(v, tex) << "} \\mathrel{+}= " << render_latex(v.rhs_raw, tex)
        << "$$\n";
  }
  if (!any) out << "(none)\n";
  out << "\n";

  out << "## Algebraic equations\n\n";
  any = false;
  for (const auto& v : m.vars) {
    if (v.kind != VarKind::Algebraic || !v.rhs_raw) continue;
    any = true;
    out << "$$0 \\mathrel{+}= " << render_latex(v.rhs_raw, tex) << "$$\n";
  }
  if (!any) out << "(none)\n";
  return out.str();
}

}  // namespace gridsym
