#include "doctest.h"

#include <random>

#include "gridsym/compiled.hpp"
#include "gridsym/models.hpp"

using namespace gridsym;

namespace {

const JacEntry* find_entry(const std::vector<JacEntry>& entries, int row, int col) {
  for (const auto& e : entries) {
    if (e.row == row && e.col == col) return &e;
  }
  return nullptr;
}

double eval_at(const ExprPtr& e, const std::map<std::string, double>& point) {
  std::map<std::string, std::vector<double>> b;
  for (const auto& [k, v] : point) b[k] = {v};
  return evaluate(e, b, 1)[0];
}

}  // namespace

TEST_CASE("build_schema captures declarations and validates them") {
  auto shunt = build_schema(builtin_schema("Shunt"));
  CHECK(shunt.params.size() == 5);  // bus, u, Vn, g, b
  int externals = 0;
  for (const auto& v : shunt.vars) externals += v.external;
  CHECK(externals == 2);

  // empty model is valid
  ModelSchema empty;
  empty.name = "Empty";
  CHECK_NOTHROW(build_schema(empty));
  auto compiled = compile(empty);
  CHECK(compiled.n_states == 0);
  CHECK(compiled.n_algebs == 0);

  // TGOV1 declarations: 1 const + 1 external service, 2 external vars,
  // 5 internal algebraics, 2 states, 1 anti-windup
  auto gov = build_schema(builtin_schema("TGOV1"));
  int const_services = 0, ext_services = 0;
  for (const auto& sv : gov.services) {
    const_services += sv.kind == ServiceKind::Constant;
    ext_services += sv.kind == ServiceKind::External;
  }
  CHECK(const_services == 1);
  CHECK(ext_services == 1);
  int ext_vars = 0, states = 0, algebs = 0;
  for (const auto& v : gov.vars) {
    if (v.external) {
      ++ext_vars;
    } else if (v.kind == VarKind::State) {
      ++states;
    } else {
      ++algebs;
    }
  }
  CHECK(ext_vars == 2);
  CHECK(states == 2);
  CHECK(algebs == 5);
  CHECK(gov.discretes.size() == 1);
  CHECK(gov.discretes[0].kind == DiscreteKind::AntiWindup);
}

TEST_CASE("build_schema rejects bad declarations") {
  ModelSchema s;
  s.name = "Bad";
  s.add_param({.name = "k", .default_value = 1});
  s.add_param({.name = "k", .default_value = 2});
  CHECK_THROWS_AS(build_schema(s), ModelError);

  ModelSchema s2;
  s2.name = "Bad2";
  s2.add_var({.name = "x", .kind = VarKind::Algebraic, .e_str = "k*(x"});
  CHECK_THROWS_AS(build_schema(s2), ModelError);

  ModelSchema s3;
  s3.name = "Bad3";
  s3.add_var({.name = "x", .kind = VarKind::Algebraic, .e_str = "missing - x"});
  CHECK_THROWS_AS(build_schema(s3), ModelError);

  // state without a differential equation
  ModelSchema s4;
  s4.name = "Bad4";
  s4.add_var({.name = "x", .kind = VarKind::State});
  CHECK_THROWS_AS(build_schema(s4), ModelError);

  // forward service reference
  ModelSchema s5;
  s5.name = "Bad5";
  s5.add_service({.name = "s1", .kind = ServiceKind::Constant, .e_str = "s2 + 1"});
  s5.add_service({.name = "s2", .kind = ServiceKind::Constant, .e_str = "2"});
  CHECK_THROWS_AS(build_schema(s5), ModelError);
}

TEST_CASE("block expansion produces the documented templates") {
  ModelSchema s;
  s.name = "Chain";
  s.add_param({.name = "K", .default_value = 2});
  s.add_param({.name = "T", .default_value = 0.5, .non_zero = true});
  s.add_param({.name = "T1", .default_value = 1});
  s.add_param({.name = "T2", .default_value = 4, .non_zero = true});
  s.add_var({.name = "uin", .kind = VarKind::Algebraic, .e_str = "1 - uin", .v_str = "1"});
  s.add_block({.name = "LG", .kind = BlockKind::Lag, .input = "uin", .K = "K", .T = "T"});
  s.add_block({.name = "LL", .kind = BlockKind::LeadLag, .input = "LG_y", .T1 = "T1", .T2 = "T2"});

  auto expanded = expand_blocks(s);
  CHECK(expanded.blocks.empty());
  // chained lag -> lead-lag: two states and one extra algebraic
  const VarSpec* lg_y = expanded.find_var("LG_y");
  REQUIRE(lg_y != nullptr);
  CHECK(lg_y->kind == VarKind::State);
  CHECK(equal(parse(lg_y->e_str), parse("(K*uin - LG_y)/T")));
  CHECK(equal(parse(lg_y->v_str), parse("K*uin")));

  const VarSpec* ll_x = expanded.find_var("LL_x");
  REQUIRE(ll_x != nullptr);
  CHECK(ll_x->kind == VarKind::State);
  CHECK(equal(parse(ll_x->e_str), parse("(LG_y - LL_x)/T2")));

  const VarSpec* ll_y = expanded.find_var("LL_y");
  REQUIRE(ll_y != nullptr);
  CHECK(ll_y->kind == VarKind::Algebraic);
  CHECK(equal(parse(ll_y->e_str), parse("T1/T2*(LG_y - LL_x) + LL_x - LL_y")));

  int states = 0, algebs = 0;
  for (const auto& v : expanded.vars) {
    (v.kind == VarKind::State ? states : algebs) += 1;
  }
  CHECK(states == 2);
  CHECK(algebs == 2);  // uin + LL_y
}

TEST_CASE("block expansion handles expression inputs and anti-windup") {
  ModelSchema s;
  s.name = "Gov";
  s.add_param({.name = "G", .default_value = 20});
  s.add_param({.name = "T1", .default_value = 0.5, .non_zero = true});
  s.add_param({.name = "VMIN", .default_value = 0});
  s.add_param({.name = "VMAX", .default_value = 1.2});
  s.add_var({.name = "wd", .kind = VarKind::Algebraic, .e_str = "0 - wd"});
  s.add_var({.name = "pref", .kind = VarKind::Algebraic, .e_str = "0.5 - pref", .v_str = "0.5"});
  s.add_block({.name = "GA", .kind = BlockKind::Gain, .input = "wd + pref", .K = "G"});
  s.add_block({.name = "LG", .kind = BlockKind::LagAntiWindup, .input = "GA_y", .K = "1",
               .T = "T1", .lower = "VMIN", .upper = "VMAX"});

  auto expanded = expand_blocks(s);
  const VarSpec* ga_y = expanded.find_var("GA_y");
  REQUIRE(ga_y != nullptr);
  CHECK(ga_y->kind == VarKind::Algebraic);
  CHECK(equal(parse(ga_y->e_str), parse("G*(wd + pref) - GA_y")));

  const VarSpec* lg_y = expanded.find_var("LG_y");
  REQUIRE(lg_y != nullptr);
  CHECK(equal(parse(lg_y->e_str), parse("LG_lim_zi*(1*(GA_y) - LG_y)/T1")));
  REQUIRE(expanded.discretes.size() == 1);
  CHECK(expanded.discretes[0].name == "LG_lim");
  CHECK(expanded.discretes[0].input == "LG_y");
  CHECK(expanded.discretes[0].lower == "VMIN");
  CHECK(expanded.discretes[0].upper == "VMAX");

  // expansion collides with an existing name
  ModelSchema bad = s;
  bad.add_var({.name = "GB_y", .kind = VarKind::Algebraic, .e_str = "0 - GB_y"});
  bad.add_block({.name = "GB", .kind = BlockKind::Gain, .input = "wd"});
  CHECK_THROWS_AS(expand_blocks(bad), ModelError);
}

TEST_CASE("lead-lag expansion satisfies its defining relation exactly") {
  // y = T1/T2 (u - x) + x at any (u, x): the algebraic residual vanishes
  ModelSchema s;
  s.name = "LLCheck";
  s.add_param({.name = "T1", .default_value = 2});
  s.add_param({.name = "T2", .default_value = 5, .non_zero = true});
  s.add_var({.name = "uin", .kind = VarKind::Algebraic, .e_str = "0 - uin"});
  s.add_block({.name = "LL", .kind = BlockKind::LeadLag, .input = "uin", .T1 = "T1", .T2 = "T2"});
  auto expanded = expand_blocks(s);
  const VarSpec* ll_y = expanded.find_var("LL_y");
  REQUIRE(ll_y != nullptr);
  std::mt19937 rng(12);
  std::uniform_real_distribution<double> d(-3, 3);
  for (int i = 0; i < 20; ++i) {
    const double u = d(rng), x = d(rng), t1 = 2, t2 = 5;
    const double y = t1 / t2 * (u - x) + x;
    const double res = eval_at(parse(ll_y->e_str),
                               {{"uin", u}, {"LL_x", x}, {"LL_y", y}, {"T1", t1}, {"T2", t2}});
    CHECK(res == doctest::Approx(0.0).epsilon(1e-14));
  }
}

TEST_CASE("compiling the shunt model reproduces the documented triplets") {
  auto compiled = compile(builtin_schema("Shunt"));
  // variables in declaration order: a then v
  REQUIRE(compiled.vars.size() == 2);
  CHECK(compiled.vars[0].name == "a");
  CHECK(compiled.vars[0].class_index == 0);
  CHECK(compiled.vars[1].name == "v");
  CHECK(compiled.vars[1].class_index == 1);

  // dg/dy holds exactly two triplets: (0,1) = 2*v*g and (1,1) = -2*v*b
  const auto& gy = compiled.jacobian(JacBlock::GY);
  REQUIRE(gy.size() == 2);
  const JacEntry* e01 = find_entry(gy, 0, 1);
  REQUIRE(e01 != nullptr);
  CHECK(equal(e01->value, simplify(parse("2*v*g"))));
  const JacEntry* e11 = find_entry(gy, 1, 1);
  REQUIRE(e11 != nullptr);
  CHECK(equal(e11->value, simplify(parse("-2*v*b"))));
  CHECK(compiled.jacobian(JacBlock::FX).empty());
  CHECK(compiled.jacobian(JacBlock::GX).empty());
}

TEST_CASE("compiling a single linear state gives the expected fx") {
  ModelSchema s;
  s.name = "Decay";
  s.add_var({.name = "x", .kind = VarKind::State, .e_str = "-x"});
  auto compiled = compile(s);
  REQUIRE(compiled.jacobian(JacBlock::FX).size() == 1);
  const auto& e = compiled.jacobian(JacBlock::FX)[0];
  CHECK(e.row == 0);
  CHECK(e.col == 0);
  CHECK(e.value->is_constant(-1.0));
}

TEST_CASE("TGOV1 compiles into the governor equations") {
  auto compiled = compile(builtin_schema("TGOV1"));
  CHECK(compiled.n_states == 3);   // omega (external), LG_y, LL_x
  CHECK(compiled.n_algebs == 6);   // tm (external), pref, wd, pd, LL_y, pout

  // six algebraic residual contributions and two state residuals
  int f_rows = 0, g_rows = 0;
  for (const auto& v : compiled.vars) {
    if (!v.rhs) continue;
    (v.kind == VarKind::State ? f_rows : g_rows) += 1;
  }
  CHECK(f_rows == 2);
  CHECK(g_rows == 6);

  // hand-derived: d(pd-equation)/d(wd) = G
  int pd = compiled.find_var("pd");
  int wd = compiled.find_var("wd");
  REQUIRE(pd >= 0);
  REQUIRE(wd >= 0);
  const JacEntry* entry = find_entry(compiled.jacobian(JacBlock::GY),
                                     compiled.vars[pd].class_index,
                                     compiled.vars[wd].class_index);
  REQUIRE(entry != nullptr);
  CHECK(equal(entry->value, parse("G")));

  // flags are treated as constants: the LG_y row keeps LG_lim_zi symbolic
  int lg = compiled.find_var("LG_y");
  const JacEntry* de = find_entry(compiled.jacobian(JacBlock::FX),
                                  compiled.vars[lg].class_index,
                                  compiled.vars[lg].class_index);
  REQUIRE(de != nullptr);
  CHECK(de->value->symbols().count("LG_lim_zi") == 1);

  // anti-windup release expression: flags substituted out
  REQUIRE(compiled.discretes.size() == 1);
  REQUIRE(compiled.discretes[0].release_rhs != nullptr);
  CHECK(compiled.discretes[0].release_rhs->symbols().count("LG_lim_zi") == 0);
}

TEST_CASE("hand-derived TGOV1 jacobian entries") {
  auto compiled = compile(builtin_schema("TGOV1"));
  auto entry_value = [&](JacBlock block, const char* eq, const char* wrt,
                         const std::map<std::string, double>& at) {
    int ei = compiled.find_var(eq);
    int wi = compiled.find_var(wrt);
    REQUIRE(ei >= 0);
    REQUIRE(wi >= 0);
    const JacEntry* e = find_entry(compiled.jacobian(block), compiled.vars[ei].class_index,
                                   compiled.vars[wi].class_index);
    REQUIRE(e != nullptr);
    return eval_at(e->value, at);
  };
  // governor equations differentiated by hand:
  // d(wd-row)/d(omega) = -1
  CHECK(entry_value(JacBlock::GX, "wd", "omega", {}) == doctest::Approx(-1.0));
  // d(LL_y-row)/d(LG_y) = T2/T3
  CHECK(entry_value(JacBlock::GX, "LL_y", "LG_y", {{"T2", 2.1}, {"T3", 7.0}}) ==
        doctest::Approx(0.3));
  // d(LG_y-row)/d(pd) = zi/T1
  CHECK(entry_value(JacBlock::FY, "LG_y", "pd", {{"LG_lim_zi", 1.0}, {"T1", 0.49}}) ==
        doctest::Approx(1.0 / 0.49));
  // d(tm-row)/d(pout) = u
  CHECK(entry_value(JacBlock::GY, "tm", "pout", {{"u", 1.0}}) == doctest::Approx(1.0));
}

TEST_CASE("triplet completeness against finite differences of the residuals") {
  // assemble the local jacobian of each builtin model from its triplets and
  // compare with central finite differences of the residual programs
  std::mt19937 rng(2718);
  std::uniform_real_distribution<double> val(0.6, 1.4);
  for (const auto& compiled : compile_builtin_models()) {
    std::map<std::string, double> point;
    for (const auto& p : compiled.params) {
      if (!p.is_idx) point[p.name] = p.default_value != 0 ? p.default_value : 0.7;
    }
    for (const auto& v : compiled.vars) point[v.name] = val(rng);
    for (const auto& sv : compiled.services) point[sv.name] = val(rng);
    for (const auto& d : compiled.discretes) {
      point[d.name + "_zl"] = 0;
      point[d.name + "_zi"] = 1;
      point[d.name + "_zu"] = 0;
    }

    for (const auto& eq : compiled.vars) {
      if (!eq.rhs) continue;
      for (const auto& wrt : compiled.vars) {
        JacBlock block = eq.kind == VarKind::State
                             ? (wrt.kind == VarKind::State ? JacBlock::FX : JacBlock::FY)
                             : (wrt.kind == VarKind::State ? JacBlock::GX : JacBlock::GY);
        const JacEntry* entry =
            find_entry(compiled.jacobian(block), eq.class_index, wrt.class_index);
        const double sym = entry ? eval_at(entry->value, point) : 0.0;

        auto pp = point, pm = point;
        const double h = 1e-6;
        pp[wrt.name] += h;
        pm[wrt.name] -= h;
        const double fd = (eval_at(eq.rhs, pp) - eval_at(eq.rhs, pm)) / (2 * h);
        CHECK(std::abs(sym - fd) / std::max(1.0, std::abs(sym)) < 1e-6);
      }
    }
  }
}

TEST_CASE("compilation is deterministic and case-independent") {
  auto a = compile(builtin_schema("TGOV1"));
  auto b = compile(builtin_schema("TGOV1"));
  CHECK(a.schema_hash == b.schema_hash);
  REQUIRE(a.jacobian(JacBlock::GY).size() == b.jacobian(JacBlock::GY).size());
  for (std::size_t i = 0; i < a.jacobian(JacBlock::GY).size(); ++i) {
    const auto& ea = a.jacobian(JacBlock::GY)[i];
    const auto& eb = b.jacobian(JacBlock::GY)[i];
    CHECK(ea.row == eb.row);
    CHECK(ea.col == eb.col);
    CHECK(equal(ea.value, eb.value));
  }
  CHECK(a.doc == b.doc);

  // declaration-order stability: class index equals declaration position
  // within the class
  int next_state = 0, next_algeb = 0;
  for (const auto& v : a.vars) {
    int& counter = (v.kind == VarKind::State) ? next_state : next_algeb;
    CHECK(v.class_index == counter);
    ++counter;
  }
}

TEST_CASE("init plan follows the declaration chain") {
  auto compiled = compile(builtin_schema("TGOV1"));
  // sequential targets in declaration order
  std::vector<std::pair<std::string, std::string>> expect = {
      {"pref", "tm0*R"}, {"pd", "tm0"},   {"LG_y", "pd"},
      {"LL_x", "LG_y"},  {"LL_y", "LG_y"}, {"pout", "tm0"},
  };
  REQUIRE(compiled.init.sequential.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const auto& st = compiled.init.sequential[i];
    CHECK(compiled.vars[st.var].name == expect[i].first);
    CHECK(equal(st.value, parse(expect[i].second)));
  }
  CHECK(compiled.init.iterative.empty());

  // v_iter entries end up in the iterative set
  ModelSchema s;
  s.name = "Iter";
  s.add_var({.name = "z", .kind = VarKind::Algebraic, .e_str = "z*z - 4",
             .v_str = "1", .v_iter = "z*z - 4"});
  auto plan = derive_init_plan(s);
  REQUIRE(plan.iterative.size() == 1);
  CHECK(equal(plan.iterative[0].residual, parse("z*z - 4")));
  REQUIRE(plan.iterative[0].start != nullptr);
}

TEST_CASE("cache round-trips and invalidates on edits") {
  auto original = compile(builtin_schema("Shunt"));
  auto bytes = cache_store(original);
  auto restored = cache_load(bytes);
  CHECK(restored.name == original.name);
  CHECK(restored.schema_hash == original.schema_hash);
  REQUIRE(restored.vars.size() == original.vars.size());
  for (std::size_t i = 0; i < original.vars.size(); ++i) {
    CHECK(restored.vars[i].name == original.vars[i].name);
    if (original.vars[i].rhs) {
      CHECK(equal(restored.vars[i].rhs, original.vars[i].rhs));
    }
  }
  REQUIRE(restored.jacobian(JacBlock::GY).size() == original.jacobian(JacBlock::GY).size());
  for (std::size_t i = 0; i < original.jacobian(JacBlock::GY).size(); ++i) {
    CHECK(equal(restored.jacobian(JacBlock::GY)[i].value,
                original.jacobian(JacBlock::GY)[i].value));
  }
  CHECK(restored.doc == original.doc);

  // an equation edit changes the hash (stale cache detection)
  auto edited = builtin_schema("Shunt");
  for (auto& v : edited.vars) {
    if (v.name == "a") v.e_str = "2*g*v*v";
  }
  CHECK(schema_hash(expand_blocks(edited)) != original.schema_hash);

  // corrupt payloads fail loudly, callers fall back to compiling
  CHECK_THROWS_AS(cache_load("this is not json"), CacheError);
  CHECK_THROWS_AS(cache_load("{\"format\":\"gridsym-compiled\",\"version\":99}"), CacheError);
}

TEST_CASE("model reference documents") {
  auto shunt = compile(builtin_schema("Shunt"));
  CHECK(shunt.doc.find("v^{2} g") != std::string::npos);
  CHECK(shunt.doc.find("## Parameters") != std::string::npos);

  ModelSchema empty;
  empty.name = "Empty";
  auto edoc = compile(empty).doc;
  CHECK(edoc.find("(none)") != std::string::npos);

  auto gov = compile(builtin_schema("TGOV1"));
  // six algebraic equations listed
  std::size_t count = 0, pos = 0;
  while ((pos = gov.doc.find("$$0 \\mathrel{+}=", pos)) != std::string::npos) {
    ++count;
    pos += 4;
  }
  CHECK(count == 6);
  CHECK(gov.doc.find("\\frac{T_{2}}{T_{3}}") != std::string::npos);
}
