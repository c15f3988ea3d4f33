#include "gridsym/schema.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "gridsym/expr.hpp"

namespace gridsym {

ParamSpec& ModelSchema::add_param(ParamSpec p) {
  params.push_back(std::move(p));
  declaration_order.emplace_back(ElementKind::Param, static_cast<int>(params.size()) - 1);
  return params.back();
}

VarSpec& ModelSchema::add_var(VarSpec v) {
  vars.push_back(std::move(v));
  declaration_order.emplace_back(ElementKind::Var, static_cast<int>(vars.size()) - 1);
  return vars.back();
}

DiscreteSpec& ModelSchema::add_discrete(DiscreteSpec d) {
  discretes.push_back(std::move(d));
  declaration_order.emplace_back(ElementKind::Discrete, static_cast<int>(discretes.size()) - 1);
  return discretes.back();
}

ServiceSpec& ModelSchema::add_service(ServiceSpec s) {
  services.push_back(std::move(s));
  declaration_order.emplace_back(ElementKind::Service, static_cast<int>(services.size()) - 1);
  return services.back();
}

BlockSpec& ModelSchema::add_block(BlockSpec b) {
  blocks.push_back(std::move(b));
  declaration_order.emplace_back(ElementKind::Block, static_cast<int>(blocks.size()) - 1);
  return blocks.back();
}

const ParamSpec* ModelSchema::find_param(const std::string& n) const {
  for (const auto& p : params) {
    if (p.name == n) return &p;
  }
  return nullptr;
}

const VarSpec* ModelSchema::find_var(const std::string& n) const {
  for (const auto& v : vars) {
    if (v.name == n) return &v;
  }
  return nullptr;
}

const ServiceSpec* ModelSchema::find_service(const std::string& n) const {
  for (const auto& s : services) {
    if (s.name == n) return &s;
  }
  return nullptr;
}

bool ModelSchema::owns_name(const std::string& n) const {
  if (find_param(n) || find_var(n) || find_service(n)) return true;
  for (const auto& d : discretes) {
    if (d.name == n || d.name + "_zl" == n || d.name + "_zi" == n || d.name + "_zu" == n) {
      return true;
    }
  }
  for (const auto& b : blocks) {
    if (b.name == n) return true;
  }
  return false;
}

namespace {

[[noreturn]] void fail(const ModelSchema& s, const std::string& what) {
  throw ModelError("model '" + s.name + "': " + what);
}

void check_parses(const ModelSchema& s, const std::string& text, const std::string& where) {
  if (text.empty()) return;
  try {
    parse(text);
  } catch (const ParseError& e) {
    fail(s, where + ": " + e.what() + " in '" + text + "'");
  }
}

// Symbols an equation string may reference inside this model.
std::set<std::string> local_symbols(const ModelSchema& s) {
  std::set<std::string> names;
  for (const auto& p : s.params) {
    if (!p.is_idx) names.insert(p.name);
  }
  for (const auto& v : s.vars) names.insert(v.name);
  for (const auto& sv : s.services) names.insert(sv.name);
  for (const auto& d : s.discretes) {
    names.insert(d.name + "_zl");
    names.insert(d.name + "_zi");
    names.insert(d.name + "_zu");
  }
  return names;
}

void check_symbols(const ModelSchema& s, const std::string& text,
                   const std::set<std::string>& allowed, const std::string& where) {
  if (text.empty()) return;
  for (const auto& sym : parse(text)->symbols()) {
    if (!allowed.count(sym)) {
      fail(s, where + ": unresolvable symbol '" + sym + "' in '" + text + "'");
    }
  }
}

}  // namespace

ModelSchema build_schema(ModelSchema s) {
  if (!is_valid_identifier(s.name)) throw ModelError("invalid model name '" + s.name + "'");

  // unique names across all element kinds, including exported flags
  std::set<std::string> seen;
  auto claim = [&](const std::string& n, const char* kind) {
    if (!is_valid_identifier(n)) fail(s, std::string(kind) + " name '" + n + "' is not a valid identifier");
    if (!seen.insert(n).second) fail(s, std::string("duplicate element name '") + n + "'");
  };
  for (const auto& p : s.params) claim(p.name, "parameter");
  for (const auto& v : s.vars) claim(v.name, "variable");
  for (const auto& sv : s.services) claim(sv.name, "service");
  for (const auto& d : s.discretes) {
    claim(d.name, "discrete");
    claim(d.name + "_zl", "flag");
    claim(d.name + "_zi", "flag");
    claim(d.name + "_zu", "flag");
  }
  for (const auto& b : s.blocks) claim(b.name, "block");

  for (const auto& p : s.params) {
    if (p.is_idx && p.idx_target.empty()) {
      fail(s, "idx parameter '" + p.name + "' has no target model");
    }
  }

  const auto allowed = local_symbols(s);

  for (const auto& v : s.vars) {
    check_parses(s, v.e_str, "e_str of '" + v.name + "'");
    check_parses(s, v.v_str, "v_str of '" + v.name + "'");
    check_parses(s, v.v_iter, "v_iter of '" + v.name + "'");
    check_symbols(s, v.e_str, allowed, "e_str of '" + v.name + "'");
    check_symbols(s, v.v_str, allowed, "v_str of '" + v.name + "'");
    check_symbols(s, v.v_iter, allowed, "v_iter of '" + v.name + "'");
    if (v.external) {
      if (v.link.indexer.empty() || v.link.model.empty() || v.link.src.empty()) {
        fail(s, "external variable '" + v.name + "' needs model/src/indexer");
      }
      const ParamSpec* idx = s.find_param(v.link.indexer);
      if (!idx || !idx->is_idx) {
        fail(s, "external variable '" + v.name + "' indexer '" + v.link.indexer +
                    "' is not an idx parameter");
      }
    } else if (v.kind == VarKind::State && v.e_str.empty()) {
      fail(s, "state variable '" + v.name + "' has no differential equation");
    }
    if (v.init_overwrite && !v.external) {
      fail(s, "init_overwrite only applies to external variables ('" + v.name + "')");
    }
  }

  for (const auto& d : s.discretes) {
    const VarSpec* in = s.find_var(d.input);
    if (!in) fail(s, "discrete '" + d.name + "' input '" + d.input + "' is not a variable");
    if (!s.find_param(d.lower)) fail(s, "discrete '" + d.name + "' lower '" + d.lower + "' is not a parameter");
    if (!s.find_param(d.upper)) fail(s, "discrete '" + d.name + "' upper '" + d.upper + "' is not a parameter");
    if (d.kind == DiscreteKind::AntiWindup && in->kind != VarKind::State) {
      fail(s, "anti-windup '" + d.name + "' input '" + d.input + "' must be a state");
    }
  }

  // const services may only use params and services declared earlier (keeps
  // the dependency order acyclic by construction)
  std::set<std::string> service_scope;
  for (const auto& p : s.params) {
    if (!p.is_idx) service_scope.insert(p.name);
  }
  for (const auto& sv : s.services) {
    switch (sv.kind) {
      case ServiceKind::Constant:
        if (sv.assigned) break;  // set programmatically by a native hook
        if (sv.e_str.empty()) fail(s, "const service '" + sv.name + "' has no expression");
        check_parses(s, sv.e_str, "service '" + sv.name + "'");
        for (const auto& sym : parse(sv.e_str)->symbols()) {
          if (!service_scope.count(sym)) {
            fail(s, "service '" + sv.name + "': symbol '" + sym +
                        "' is not a parameter or earlier service (cyclic or forward reference)");
          }
          if (const ServiceSpec* dep = s.find_service(sym);
              dep && dep->kind == ServiceKind::Reduce) {
            fail(s, "service '" + sv.name + "': reduce service '" + sym +
                        "' must be repeated before use");
          }
        }
        break;
      case ServiceKind::External:
        if (sv.link.model.empty() || sv.link.src.empty() || sv.link.indexer.empty()) {
          fail(s, "external service '" + sv.name + "' needs model/src/indexer");
        }
        break;
      case ServiceKind::Reduce: {
        if (!s.find_param(sv.source) && !s.find_service(sv.source)) {
          fail(s, "reduce service '" + sv.name + "' source '" + sv.source + "' not found");
        }
        if (!s.find_param(sv.group_indexer)) {
          fail(s, "reduce service '" + sv.name + "' group indexer '" + sv.group_indexer +
                      "' is not a parameter");
        }
        break;
      }
      case ServiceKind::Repeat: {
        const ServiceSpec* src = s.find_service(sv.source);
        if (!src || src->kind != ServiceKind::Reduce) {
          fail(s, "repeat service '" + sv.name + "' source '" + sv.source +
                      "' is not a reduce service");
        }
        if (!s.find_param(sv.group_indexer)) {
          fail(s, "repeat service '" + sv.name + "' group indexer '" + sv.group_indexer +
                      "' is not a parameter");
        }
        break;
      }
    }
    service_scope.insert(sv.name);
  }

  for (const auto& b : s.blocks) {
    check_parses(s, b.input, "block '" + b.name + "' input");
    check_parses(s, b.K, "block '" + b.name + "' K");
    check_parses(s, b.T, "block '" + b.name + "' T");
    check_parses(s, b.T1, "block '" + b.name + "' T1");
    check_parses(s, b.T2, "block '" + b.name + "' T2");
    if (b.kind == BlockKind::LagAntiWindup) {
      if (!s.find_param(b.lower) || !s.find_param(b.upper)) {
        fail(s, "block '" + b.name + "' lower/upper must name parameters");
      }
    }
  }

  return s;
}

// ---------------------------------------------------------------------------
// Block expansion
// ---------------------------------------------------------------------------

namespace {

// Substitute placeholders into a template and print it back to an equation
// string. Splicing at tree level keeps parenthesization right regardless of
// what the input expression looks like.
std::string instantiate(const std::string& tmpl, const std::map<std::string, ExprPtr>& b) {
  return render(substitute(parse(tmpl), b), RenderStyle::Plain);
}

}  // namespace

ModelSchema expand_blocks(const ModelSchema& s) {
  if (s.blocks.empty()) return s;

  ModelSchema out;
  out.name = s.name;
  out.group = s.group;
  out.description = s.description;
  out.power_flow = s.power_flow;
  out.dynamic = s.dynamic;
  out.native_init = s.native_init;
  out.native_equations = s.native_equations;

  for (const auto& [kind, index] : s.declaration_order) {
    switch (kind) {
      case ElementKind::Param:
        out.add_param(s.params[index]);
        break;
      case ElementKind::Var:
        out.add_var(s.vars[index]);
        break;
      case ElementKind::Discrete:
        out.add_discrete(s.discretes[index]);
        break;
      case ElementKind::Service:
        out.add_service(s.services[index]);
        break;
      case ElementKind::Block: {
        const BlockSpec& b = s.blocks[index];
        const std::string y = b.name + "_y";
        const std::string x = b.name + "_x";
        const std::string lim = b.name + "_lim";
        for (const auto& exported : {y, x, lim}) {
          if (s.owns_name(exported)) {
            throw ModelError("model '" + s.name + "': block '" + b.name +
                             "' exports '" + exported + "' which collides with an existing element");
          }
        }
        std::map<std::string, ExprPtr> binds = {
            {"u", parse(b.input)},   {"K", parse(b.K)},   {"T", parse(b.T)},
            {"T1", parse(b.T1)},     {"T2", parse(b.T2)}, {"y", Expr::symbol(y)},
            {"x", Expr::symbol(x)},  {"zi", Expr::symbol(lim + "_zi")},
        };
        switch (b.kind) {
          case BlockKind::Gain:
            out.add_var({.name = y,
                         .kind = VarKind::Algebraic,
                         .e_str = instantiate("K*u - y", binds),
                         .v_str = instantiate("K*u", binds),
                         .description = "gain output of " + b.name});
            break;
          case BlockKind::Lag:
            out.add_var({.name = y,
                         .kind = VarKind::State,
                         .e_str = instantiate("(K*u - y)/T", binds),
                         .v_str = instantiate("K*u", binds),
                         .description = "lag state of " + b.name});
            break;
          case BlockKind::LeadLag:
            out.add_var({.name = x,
                         .kind = VarKind::State,
                         .e_str = instantiate("(u - x)/T2", binds),
                         .v_str = instantiate("u", binds),
                         .description = "lead-lag state of " + b.name});
            out.add_var({.name = y,
                         .kind = VarKind::Algebraic,
                         .e_str = instantiate("T1/T2*(u - x) + x - y", binds),
                         .v_str = instantiate("u", binds),
                         .description = "lead-lag output of " + b.name});
            break;
          case BlockKind::LagAntiWindup:
            out.add_var({.name = y,
                         .kind = VarKind::State,
                         .e_str = instantiate("zi*(K*u - y)/T", binds),
                         .v_str = instantiate("K*u", binds),
                         .description = "limited lag state of " + b.name});
            out.add_discrete({.name = lim,
                              .kind = DiscreteKind::AntiWindup,
                              .input = y,
                              .lower = b.lower,
                              .upper = b.upper});
            break;
        }
        break;
      }
    }
  }
  return build_schema(std::move(out));
}

}  // namespace gridsym
