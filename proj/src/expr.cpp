#include "gridsym/expr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

namespace gridsym {

const char* func_name(Func f) {
  switch (f) {
    case Func::Sin: return "sin";
    case Func::Cos: return "cos";
    case Func::Exp: return "exp";
    case Func::Log: return "log";
    case Func::Sqrt: return "sqrt";
    case Func::Abs: return "abs";
    case Func::Sign: return "sign";
  }
  return "?";
}

bool is_valid_identifier(std::string_view s) {
  if (s.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

std::string format_number(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------------------
// Factories
// ---------------------------------------------------------------------------

ExprPtr Expr::constant(double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("expression constants must be finite");
  if (v == 0.0) v = 0.0;  // normalize -0
  auto p = std::shared_ptr<Expr>(new Expr());
  p->kind_ = ExprKind::Constant;
  p->value_ = v;
  return p;
}

ExprPtr Expr::symbol(std::string name) {
  if (!is_valid_identifier(name)) {
    throw std::invalid_argument("invalid identifier: '" + name + "'");
  }
  auto p = std::shared_ptr<Expr>(new Expr());
  p->kind_ = ExprKind::Symbol;
  p->name_ = std::move(name);
  return p;
}

ExprPtr Expr::negate(ExprPtr e) {
  if (e->kind() == ExprKind::Constant) return constant(-e->value());
  if (e->kind() == ExprKind::Negate) return e->child(0);
  if (e->kind() == ExprKind::Product) {
    // Fold the sign into the leading constant so products stay sign-free.
    std::vector<ExprPtr> kids(e->children().begin(), e->children().end());
    if (kids.front()->kind() == ExprKind::Constant) {
      kids.front() = constant(-kids.front()->value());
    } else {
      kids.insert(kids.begin(), constant(-1.0));
    }
    return product(std::move(kids));
  }
  auto p = std::shared_ptr<Expr>(new Expr());
  p->kind_ = ExprKind::Negate;
  p->children_.push_back(std::move(e));
  return p;
}

ExprPtr Expr::sum(std::vector<ExprPtr> terms) {
  std::vector<ExprPtr> flat;
  flat.reserve(terms.size());
  for (auto& t : terms) {
    if (t->kind() == ExprKind::Sum) {
      for (const auto& c : t->children()) flat.push_back(c);
    } else {
      flat.push_back(std::move(t));
    }
  }
  if (flat.empty()) return constant(0.0);
  if (flat.size() == 1) return flat.front();
  auto p = std::shared_ptr<Expr>(new Expr());
  p->kind_ = ExprKind::Sum;
  p->children_ = std::move(flat);
  return p;
}

ExprPtr Expr::product(std::vector<ExprPtr> factors) {
  std::vector<ExprPtr> flat;
  flat.reserve(factors.size());
  bool negative = false;
  for (auto& t : factors) {
    if (t->kind() == ExprKind::Product) {
      for (const auto& c : t->children()) flat.push_back(c);
    } else if (t->kind() == ExprKind::Negate) {
      negative = !negative;
      flat.push_back(t->child(0));
    } else {
      flat.push_back(std::move(t));
    }
  }
  if (negative) {
    if (!flat.empty() && flat.front()->kind() == ExprKind::Constant) {
      flat.front() = constant(-flat.front()->value());
    } else {
      flat.insert(flat.begin(), constant(-1.0));
    }
  }
  if (flat.empty()) return constant(1.0);
  if (flat.size() == 1) return flat.front();
  auto p = std::shared_ptr<Expr>(new Expr());
  p->kind_ = ExprKind::Product;
  p->children_ = std::move(flat);
  return p;
}

ExprPtr Expr::quotient(ExprPtr num, ExprPtr den) {
  auto p = std::shared_ptr<Expr>(new Expr());
  p->kind_ = ExprKind::Quotient;
  p->children_.push_back(std::move(num));
  p->children_.push_back(std::move(den));
  return p;
}

ExprPtr Expr::power(ExprPtr base, ExprPtr exponent) {
  auto p = std::shared_ptr<Expr>(new Expr());
  p->kind_ = ExprKind::Power;
  p->children_.push_back(std::move(base));
  p->children_.push_back(std::move(exponent));
  return p;
}

ExprPtr Expr::call(Func f, ExprPtr arg) {
  auto p = std::shared_ptr<Expr>(new Expr());
  p->kind_ = ExprKind::Call;
  p->func_ = f;
  p->children_.push_back(std::move(arg));
  return p;
}

void Expr::collect_symbols(std::set<std::string>& out) const {
  if (kind_ == ExprKind::Symbol) {
    out.insert(name_);
    return;
  }
  for (const auto& c : children_) c->collect_symbols(out);
}

std::set<std::string> Expr::symbols() const {
  std::set<std::string> out;
  collect_symbols(out);
  return out;
}

// ---------------------------------------------------------------------------
// Equality and canonical order
// ---------------------------------------------------------------------------

bool equal(const Expr& a, const Expr& b) {
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case ExprKind::Constant: return a.value() == b.value();
    case ExprKind::Symbol: return a.name() == b.name();
    case ExprKind::Call:
      if (a.func() != b.func()) return false;
      break;
    default: break;
  }
  if (a.children().size() != b.children().size()) return false;
  for (std::size_t i = 0; i < a.children().size(); ++i) {
    if (!equal(*a.child(i), *b.child(i))) return false;
  }
  return true;
}

int compare(const Expr& a, const Expr& b) {
  auto rank = [](ExprKind k) { return static_cast<int>(k); };
  if (rank(a.kind()) != rank(b.kind())) return rank(a.kind()) < rank(b.kind()) ? -1 : 1;
  switch (a.kind()) {
    case ExprKind::Constant:
      if (a.value() < b.value()) return -1;
      if (a.value() > b.value()) return 1;
      return 0;
    case ExprKind::Symbol:
      return a.name().compare(b.name());
    case ExprKind::Call:
      if (a.func() != b.func()) return a.func() < b.func() ? -1 : 1;
      break;
    default: break;
  }
  const std::size_t n = std::min(a.children().size(), b.children().size());
  for (std::size_t i = 0; i < n; ++i) {
    int c = compare(*a.child(i), *b.child(i));
    if (c != 0) return c;
  }
  if (a.children().size() != b.children().size()) {
    return a.children().size() < b.children().size() ? -1 : 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  ExprPtr run() {
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError("empty expression", 0);
    ExprPtr e = parse_sum();
    skip_ws();
    if (pos_ < text_.size()) throw ParseError("unexpected trailing input", pos_);
    return e;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  bool accept(char c) {
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  ExprPtr parse_sum() {
    std::vector<ExprPtr> terms;
    terms.push_back(parse_term());
    for (;;) {
      char c = peek();
      if (c == '+') {
        ++pos_;
        terms.push_back(parse_term());
      } else if (c == '-') {
        ++pos_;
        terms.push_back(Expr::negate(parse_term()));
      } else {
        break;
      }
    }
    return Expr::sum(std::move(terms));
  }

  // Left-associative chain of * and /. Plain factors accumulate into one
  // product; '/' wraps the accumulator into a quotient.
  ExprPtr parse_term() {
    ExprPtr acc = parse_unary();
    for (;;) {
      skip_ws();
      if (pos_ + 1 < text_.size() && text_[pos_] == '*' && text_[pos_ + 1] == '*') break;
      char c = peek();
      if (c == '*') {
        ++pos_;
        ExprPtr rhs = parse_unary();
        acc = Expr::product({std::move(acc), std::move(rhs)});
      } else if (c == '/') {
        ++pos_;
        ExprPtr rhs = parse_unary();
        acc = Expr::quotient(std::move(acc), std::move(rhs));
      } else {
        break;
      }
    }
    return acc;
  }

  ExprPtr parse_unary() {
    if (peek() == '-') {
      ++pos_;
      return Expr::negate(parse_unary());
    }
    return parse_power();
  }

  ExprPtr parse_power() {
    ExprPtr base = parse_primary();
    skip_ws();
    if (pos_ + 1 < text_.size() && text_[pos_] == '*' && text_[pos_ + 1] == '*') {
      pos_ += 2;
      return Expr::power(std::move(base), parse_unary());
    }
    if (peek() == '^') {
      ++pos_;
      return Expr::power(std::move(base), parse_unary());
    }
    return base;
  }

  ExprPtr parse_primary() {
    char c = peek();
    if (c == '(') {
      std::size_t open = pos_;
      ++pos_;
      ExprPtr e = parse_sum();
      if (!accept(')')) throw ParseError("unmatched '('", open);
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_name();
    throw ParseError(std::string("unexpected character '") + c + "'", pos_);
  }

  ExprPtr parse_number() {
    const char* begin = text_.data() + pos_;
    const char* end = text_.data() + text_.size();
    double v = 0.0;
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc()) throw ParseError("malformed number", pos_);
    pos_ += static_cast<std::size_t>(res.ptr - begin);
    return Expr::constant(v);
  }

  ExprPtr parse_name() {
    std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
    }
    std::string name(text_.substr(start, pos_ - start));
    if (peek() == '(') {
      static const std::pair<const char*, Func> kFuncs[] = {
          {"sin", Func::Sin}, {"cos", Func::Cos},   {"exp", Func::Exp},
          {"log", Func::Log}, {"sqrt", Func::Sqrt}, {"abs", Func::Abs},
          {"sign", Func::Sign}};
      for (const auto& [fname, f] : kFuncs) {
        if (name == fname) {
          std::size_t open = pos_;
          ++pos_;
          ExprPtr arg = parse_sum();
          if (!accept(')')) throw ParseError("unmatched '(' in call", open);
          return Expr::call(f, std::move(arg));
        }
      }
      throw ParseError("unknown function '" + name + "'", start);
    }
    return Expr::symbol(std::move(name));
  }
};

}  // namespace

ExprPtr parse(std::string_view text) { return Parser(text).run(); }

// ---------------------------------------------------------------------------
// Differentiation
// ---------------------------------------------------------------------------

ExprPtr differentiate(const ExprPtr& e, std::string_view s) {
  using E = Expr;
  switch (e->kind()) {
    case ExprKind::Constant:
      return E::constant(0.0);
    case ExprKind::Symbol:
      return E::constant(e->name() == s ? 1.0 : 0.0);
    case ExprKind::Negate:
      return E::negate(differentiate(e->child(0), s));
    case ExprKind::Sum: {
      std::vector<ExprPtr> terms;
      for (const auto& c : e->children()) {
        auto d = differentiate(c, s);
        if (!d->is_constant(0.0)) terms.push_back(std::move(d));
      }
      return E::sum(std::move(terms));
    }
    case ExprKind::Product: {
      std::vector<ExprPtr> terms;
      const auto kids = e->children();
      for (std::size_t i = 0; i < kids.size(); ++i) {
        auto d = differentiate(kids[i], s);
        if (d->is_constant(0.0)) continue;
        std::vector<ExprPtr> factors;
        for (std::size_t j = 0; j < kids.size(); ++j) {
          factors.push_back(j == i ? d : kids[j]);
        }
        terms.push_back(E::product(std::move(factors)));
      }
      return E::sum(std::move(terms));
    }
    case ExprKind::Quotient: {
      const auto& u = e->child(0);
      const auto& v = e->child(1);
      auto du = differentiate(u, s);
      auto dv = differentiate(v, s);
      if (dv->is_constant(0.0)) return E::quotient(std::move(du), v);
      auto num = E::sum({E::product({du, v}), E::negate(E::product({u, dv}))});
      return E::quotient(std::move(num), E::power(v, E::constant(2.0)));
    }
    case ExprKind::Power: {
      const auto& u = e->child(0);
      const auto& v = e->child(1);
      auto du = differentiate(u, s);
      if (v->kind() == ExprKind::Constant) {
        const double n = v->value();
        if (du->is_constant(0.0)) return E::constant(0.0);
        return E::product({E::constant(n), E::power(u, E::constant(n - 1.0)), du});
      }
      auto dv = differentiate(v, s);
      // d(u^v) = u^v * (dv*log u + v*du/u)
      std::vector<ExprPtr> terms;
      if (!dv->is_constant(0.0)) terms.push_back(E::product({dv, E::call(Func::Log, u)}));
      if (!du->is_constant(0.0)) terms.push_back(E::quotient(E::product({v, du}), u));
      return E::product({e, E::sum(std::move(terms))});
    }
    case ExprKind::Call: {
      const auto& u = e->child(0);
      auto du = differentiate(u, s);
      if (du->is_constant(0.0)) return E::constant(0.0);
      switch (e->func()) {
        case Func::Sin: return E::product({E::call(Func::Cos, u), du});
        case Func::Cos: return E::negate(E::product({E::call(Func::Sin, u), du}));
        case Func::Exp: return E::product({e, du});
        case Func::Log: return E::quotient(du, u);
        case Func::Sqrt: return E::quotient(du, E::product({E::constant(2.0), e}));
        case Func::Abs: return E::product({E::call(Func::Sign, u), du});
        case Func::Sign: return E::constant(0.0);
      }
      return E::constant(0.0);
    }
  }
  return Expr::constant(0.0);
}

// ---------------------------------------------------------------------------
// Simplification
// ---------------------------------------------------------------------------

namespace {

double fold_call(Func f, double x) {
  switch (f) {
    case Func::Sin: return std::sin(x);
    case Func::Cos: return std::cos(x);
    case Func::Exp: return std::exp(x);
    case Func::Log: return std::log(x);
    case Func::Sqrt: return std::sqrt(x);
    case Func::Abs: return std::abs(x);
    case Func::Sign: return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
  }
  return 0.0;
}

// Split a normalized term into (coefficient, key) for like-term collection.
// The key is null for pure constants.
std::pair<double, ExprPtr> split_coefficient(const ExprPtr& t) {
  switch (t->kind()) {
    case ExprKind::Constant:
      return {t->value(), nullptr};
    case ExprKind::Negate: {
      auto [c, k] = split_coefficient(t->child(0));
      return {-c, std::move(k)};
    }
    case ExprKind::Product: {
      if (t->child(0)->kind() == ExprKind::Constant) {
        std::vector<ExprPtr> rest(t->children().begin() + 1, t->children().end());
        return {t->child(0)->value(), Expr::product(std::move(rest))};
      }
      return {1.0, t};
    }
    default:
      return {1.0, t};
  }
}

ExprPtr rebuild_term(double coeff, const ExprPtr& key) {
  if (coeff == 0.0) return Expr::constant(0.0);
  if (coeff == 1.0) return key;
  if (coeff == -1.0) return Expr::negate(key);
  return Expr::product({Expr::constant(coeff), key});
}

ExprPtr simplify_node(const ExprPtr& e);

ExprPtr simplify_sum(const ExprPtr& e) {
  std::vector<ExprPtr> kids;
  for (const auto& c : e->children()) kids.push_back(simplify_node(c));
  ExprPtr flat = Expr::sum(std::move(kids));
  if (flat->kind() != ExprKind::Sum) return flat;

  double constant_term = 0.0;
  std::vector<std::pair<ExprPtr, double>> groups;  // key -> coefficient
  for (const auto& c : flat->children()) {
    auto [coeff, key] = split_coefficient(c);
    if (!key) {
      constant_term += coeff;
      continue;
    }
    bool found = false;
    for (auto& [gk, gc] : groups) {
      if (equal(gk, key)) {
        gc += coeff;
        found = true;
        break;
      }
    }
    if (!found) groups.emplace_back(std::move(key), coeff);
  }

  std::vector<ExprPtr> terms;
  for (const auto& [key, coeff] : groups) {
    if (coeff == 0.0) continue;
    terms.push_back(rebuild_term(coeff, key));
  }
  if (constant_term != 0.0 || terms.empty()) terms.push_back(Expr::constant(constant_term));
  std::sort(terms.begin(), terms.end(),
            [](const ExprPtr& a, const ExprPtr& b) { return compare(*a, *b) < 0; });
  return Expr::sum(std::move(terms));
}

ExprPtr simplify_product(const ExprPtr& e) {
  std::vector<ExprPtr> kids;
  for (const auto& c : e->children()) kids.push_back(simplify_node(c));
  ExprPtr flat = Expr::product(std::move(kids));
  if (flat->kind() != ExprKind::Product) return flat;

  double coeff = 1.0;
  std::vector<ExprPtr> factors;
  for (const auto& c : flat->children()) {
    if (c->kind() == ExprKind::Constant) {
      coeff *= c->value();
    } else {
      factors.push_back(c);
    }
  }
  if (coeff == 0.0) return Expr::constant(0.0);
  std::sort(factors.begin(), factors.end(),
            [](const ExprPtr& a, const ExprPtr& b) { return compare(*a, *b) < 0; });
  if (factors.empty()) return Expr::constant(coeff);
  if (coeff == -1.0 && factors.size() == 1) return Expr::negate(factors.front());
  if (coeff != 1.0) factors.insert(factors.begin(), Expr::constant(coeff));
  return Expr::product(std::move(factors));
}

ExprPtr simplify_node(const ExprPtr& e) {
  switch (e->kind()) {
    case ExprKind::Constant:
    case ExprKind::Symbol:
      return e;
    case ExprKind::Negate:
      return Expr::negate(simplify_node(e->child(0)));
    case ExprKind::Sum:
      return simplify_sum(e);
    case ExprKind::Product:
      return simplify_product(e);
    case ExprKind::Quotient: {
      auto num = simplify_node(e->child(0));
      auto den = simplify_node(e->child(1));
      if (num->is_constant(0.0)) return num;
      if (den->is_constant(1.0)) return num;
      if (num->kind() == ExprKind::Constant && den->kind() == ExprKind::Constant &&
          den->value() != 0.0) {
        double v = num->value() / den->value();
        if (std::isfinite(v)) return Expr::constant(v);
      }
      return Expr::quotient(std::move(num), std::move(den));
    }
    case ExprKind::Power: {
      auto base = simplify_node(e->child(0));
      auto exp = simplify_node(e->child(1));
      if (exp->is_constant(0.0)) return Expr::constant(1.0);
      if (exp->is_constant(1.0)) return base;
      if (base->kind() == ExprKind::Constant && exp->kind() == ExprKind::Constant) {
        double v = std::pow(base->value(), exp->value());
        if (std::isfinite(v)) return Expr::constant(v);
      }
      return Expr::power(std::move(base), std::move(exp));
    }
    case ExprKind::Call: {
      auto arg = simplify_node(e->child(0));
      if (arg->kind() == ExprKind::Constant) {
        double v = fold_call(e->func(), arg->value());
        if (std::isfinite(v)) return Expr::constant(v);
      }
      return Expr::call(e->func(), std::move(arg));
    }
  }
  return e;
}

}  // namespace

ExprPtr simplify(const ExprPtr& e) {
  // Two bottom-up passes; the second catches cancellations exposed by the
  // first (e.g. like terms that only align after child simplification).
  return simplify_node(simplify_node(e));
}

// ---------------------------------------------------------------------------
// Substitution
// ---------------------------------------------------------------------------

ExprPtr substitute(const ExprPtr& e, const std::map<std::string, ExprPtr>& bindings) {
  switch (e->kind()) {
    case ExprKind::Constant:
      return e;
    case ExprKind::Symbol: {
      auto it = bindings.find(e->name());
      return it == bindings.end() ? e : it->second;
    }
    case ExprKind::Negate:
      return Expr::negate(substitute(e->child(0), bindings));
    case ExprKind::Sum: {
      std::vector<ExprPtr> kids;
      for (const auto& c : e->children()) kids.push_back(substitute(c, bindings));
      return Expr::sum(std::move(kids));
    }
    case ExprKind::Product: {
      std::vector<ExprPtr> kids;
      for (const auto& c : e->children()) kids.push_back(substitute(c, bindings));
      return Expr::product(std::move(kids));
    }
    case ExprKind::Quotient:
      return Expr::quotient(substitute(e->child(0), bindings),
                            substitute(e->child(1), bindings));
    case ExprKind::Power:
      return Expr::power(substitute(e->child(0), bindings),
                         substitute(e->child(1), bindings));
    case ExprKind::Call:
      return Expr::call(e->func(), substitute(e->child(0), bindings));
  }
  return e;
}

ExprPtr substitute_symbols(const ExprPtr& e,
                           const std::map<std::string, std::string>& renames) {
  std::map<std::string, ExprPtr> bindings;
  for (const auto& [from, to] : renames) {
    bindings.emplace(from, Expr::symbol(to));
  }
  return substitute(e, bindings);
}

// ---------------------------------------------------------------------------
// Evaluation (reference tree-walk; the hot path lives in program.cpp)
// ---------------------------------------------------------------------------

namespace {

using Bindings = std::map<std::string, std::vector<double>>;

std::vector<double> eval_node(const ExprPtr& e, const Bindings& b, std::size_t n) {
  switch (e->kind()) {
    case ExprKind::Constant:
      return std::vector<double>(n, e->value());
    case ExprKind::Symbol: {
      auto it = b.find(e->name());
      if (it == b.end()) throw EvalError("unbound symbol '" + e->name() + "'");
      const auto& v = it->second;
      if (v.size() == n) return v;
      if (v.size() == 1) return std::vector<double>(n, v[0]);
      throw EvalError("length mismatch for symbol '" + e->name() + "': got " +
                      std::to_string(v.size()) + ", expected " + std::to_string(n));
    }
    case ExprKind::Negate: {
      auto out = eval_node(e->child(0), b, n);
      for (auto& x : out) x = -x;
      return out;
    }
    case ExprKind::Sum: {
      auto out = eval_node(e->child(0), b, n);
      for (std::size_t k = 1; k < e->children().size(); ++k) {
        auto rhs = eval_node(e->child(k), b, n);
        for (std::size_t i = 0; i < n; ++i) out[i] += rhs[i];
      }
      return out;
    }
    case ExprKind::Product: {
      auto out = eval_node(e->child(0), b, n);
      for (std::size_t k = 1; k < e->children().size(); ++k) {
        auto rhs = eval_node(e->child(k), b, n);
        for (std::size_t i = 0; i < n; ++i) out[i] *= rhs[i];
      }
      return out;
    }
    case ExprKind::Quotient: {
      auto out = eval_node(e->child(0), b, n);
      auto den = eval_node(e->child(1), b, n);
      for (std::size_t i = 0; i < n; ++i) out[i] /= den[i];
      return out;
    }
    case ExprKind::Power: {
      auto out = eval_node(e->child(0), b, n);
      auto ex = eval_node(e->child(1), b, n);
      for (std::size_t i = 0; i < n; ++i) out[i] = std::pow(out[i], ex[i]);
      return out;
    }
    case ExprKind::Call: {
      auto out = eval_node(e->child(0), b, n);
      for (auto& x : out) x = fold_call(e->func(), x);
      return out;
    }
  }
  return {};
}

}  // namespace

std::vector<double> evaluate(const ExprPtr& e, const Bindings& bindings, std::size_t n) {
  auto out = eval_node(e, bindings, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(out[i])) {
      std::ostringstream msg;
      msg << "non-finite result at element " << i << "; symbols involved: {";
      bool first = true;
      for (const auto& s : e->symbols()) {
        if (!first) msg << ", ";
        msg << s;
        first = false;
      }
      msg << "}";
      throw EvalError(msg.str());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace {

// Plain-style precedence levels; parenthesize when a child binds looser than
// its context requires.
constexpr int kPrecSum = 10;
constexpr int kPrecProduct = 20;
constexpr int kPrecNegate = 25;
constexpr int kPrecPower = 30;
constexpr int kPrecAtom = 40;

int precedence(const Expr& e) {
  switch (e.kind()) {
    case ExprKind::Sum: return kPrecSum;
    case ExprKind::Product:
    case ExprKind::Quotient: return kPrecProduct;
    case ExprKind::Negate: return kPrecNegate;
    case ExprKind::Power: return kPrecPower;
    default: return kPrecAtom;
  }
}

void render_plain(const ExprPtr& e, std::string& out);

void render_wrapped(const ExprPtr& e, int min_prec, std::string& out) {
  if (precedence(*e) < min_prec) {
    out += '(';
    render_plain(e, out);
    out += ')';
  } else {
    render_plain(e, out);
  }
}

void render_plain(const ExprPtr& e, std::string& out) {
  switch (e->kind()) {
    case ExprKind::Constant:
      out += format_number(e->value());
      return;
    case ExprKind::Symbol:
      out += e->name();
      return;
    case ExprKind::Negate:
      out += '-';
      // keep -x**2 but wrap -(a/b), -(a + b) so re-parsing restores the tree
      render_wrapped(e->child(0), kPrecPower, out);
      return;
    case ExprKind::Sum: {
      const auto kids = e->children();
      render_wrapped(kids[0], kPrecSum, out);
      for (std::size_t i = 1; i < kids.size(); ++i) {
        const auto& c = kids[i];
        if (c->kind() == ExprKind::Negate) {
          out += " - ";
          render_wrapped(c->child(0), kPrecPower, out);
        } else if (c->kind() == ExprKind::Constant && c->value() < 0) {
          out += " - ";
          out += format_number(-c->value());
        } else if (c->kind() == ExprKind::Product &&
                   c->child(0)->kind() == ExprKind::Constant && c->child(0)->value() < 0) {
          out += " - ";
          std::vector<ExprPtr> rest(c->children().begin(), c->children().end());
          if (rest.front()->value() == -1.0) {
            rest.erase(rest.begin());
          } else {
            rest.front() = Expr::constant(-rest.front()->value());
          }
          render_plain(Expr::product(std::move(rest)), out);
        } else {
          out += " + ";
          render_wrapped(c, kPrecProduct, out);
        }
      }
      return;
    }
    case ExprKind::Product: {
      const auto kids = e->children();
      std::size_t start = 0;
      if (kids[0]->is_constant(-1.0)) {
        out += '-';
        start = 1;
      }
      for (std::size_t i = start; i < kids.size(); ++i) {
        if (i > start) out += '*';
        const auto& c = kids[i];
        // Quotients need parens in two spots: non-leading ("a*(b/c)" differs
        // from "a*b/c"), and right after the sign prefix, where a bare
        // "-2/x" would fold the minus into the numerator literal on re-parse.
        const bool quoted_quotient =
            c->kind() == ExprKind::Quotient && (i > start || start == 1);
        if (quoted_quotient) {
          out += '(';
          render_plain(c, out);
          out += ')';
        } else {
          render_wrapped(c, kPrecProduct, out);
        }
      }
      return;
    }
    case ExprKind::Quotient: {
      render_wrapped(e->child(0), kPrecProduct, out);
      out += '/';
      const auto& den = e->child(1);
      if (precedence(*den) <= kPrecNegate) {
        out += '(';
        render_plain(den, out);
        out += ')';
      } else {
        render_plain(den, out);
      }
      return;
    }
    case ExprKind::Power: {
      const auto& base = e->child(0);
      if (precedence(*base) <= kPrecPower) {
        out += '(';
        render_plain(base, out);
        out += ')';
      } else {
        render_plain(base, out);
      }
      out += "**";
      const auto& exp = e->child(1);
      if (precedence(*exp) <= kPrecProduct) {
        out += '(';
        render_plain(exp, out);
        out += ')';
      } else {
        render_plain(exp, out);
      }
      return;
    }
    case ExprKind::Call:
      out += func_name(e->func());
      out += '(';
      render_plain(e->child(0), out);
      out += ')';
      return;
  }
}

// --- latex ---

const std::set<std::string>& greek_names() {
  static const std::set<std::string> names = {
      "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
      "iota",  "kappa", "lambda", "mu",  "nu",      "xi",   "pi",  "rho",
      "sigma", "tau",  "phi",   "chi",  "psi",     "omega", "Omega", "Delta"};
  return names;
}

std::string latex_symbol(const std::string& name,
                         const std::map<std::string, std::string>& tex) {
  if (auto it = tex.find(name); it != tex.end()) return it->second;
  if (greek_names().count(name)) return "\\" + name;
  auto underscore = name.find('_');
  if (underscore != std::string::npos && underscore + 1 < name.size()) {
    std::string base = name.substr(0, underscore);
    std::string sub = name.substr(underscore + 1);
    std::replace(sub.begin(), sub.end(), '_', ' ');
    if (greek_names().count(base)) base = "\\" + base;
    return base + "_{" + sub + "}";
  }
  // trailing digits become a subscript: T2 -> T_{2}
  std::size_t digits = name.size();
  while (digits > 0 && std::isdigit(static_cast<unsigned char>(name[digits - 1]))) --digits;
  if (digits > 0 && digits < name.size()) {
    return name.substr(0, digits) + "_{" + name.substr(digits) + "}";
  }
  return name;
}

struct LatexRenderer {
  const std::map<std::string, std::string>& tex;

  std::string render(const ExprPtr& e) const {
    switch (e->kind()) {
      case ExprKind::Constant:
        return format_number(e->value());
      case ExprKind::Symbol:
        return latex_symbol(e->name(), tex);
      case ExprKind::Negate:
        return "- " + wrap(e->child(0), kPrecProduct);
      case ExprKind::Sum: {
        std::string out = wrap(e->child(0), kPrecSum);
        for (std::size_t i = 1; i < e->children().size(); ++i) {
          const auto& c = e->child(i);
          if (c->kind() == ExprKind::Negate) {
            out += " - " + wrap(c->child(0), kPrecProduct);
          } else if (c->kind() == ExprKind::Constant && c->value() < 0) {
            out += " - " + format_number(-c->value());
          } else if (c->kind() == ExprKind::Product &&
                     c->child(0)->kind() == ExprKind::Constant &&
                     c->child(0)->value() < 0) {
            std::vector<ExprPtr> rest(c->children().begin(), c->children().end());
            if (rest.front()->value() == -1.0) {
              rest.erase(rest.begin());
            } else {
              rest.front() = Expr::constant(-rest.front()->value());
            }
            out += " - " + render(Expr::product(std::move(rest)));
          } else {
            out += " + " + wrap(c, kPrecProduct);
          }
        }
        return out;
      }
      case ExprKind::Product:
        return render_product(e);
      case ExprKind::Quotient:
        return "\\frac{" + render(e->child(0)) + "}{" + render(e->child(1)) + "}";
      case ExprKind::Power: {
        std::string base = wrap(e->child(0), kPrecPower + 1);
        return base + "^{" + render(e->child(1)) + "}";
      }
      case ExprKind::Call:
        switch (e->func()) {
          case Func::Sqrt: return "\\sqrt{" + render(e->child(0)) + "}";
          case Func::Abs: return "\\left|" + render(e->child(0)) + "\\right|";
          case Func::Sign: return "\\operatorname{sign}\\left(" + render(e->child(0)) + "\\right)";
          default:
            return std::string("\\") + func_name(e->func()) + "\\left(" +
                   render(e->child(0)) + "\\right)";
        }
    }
    return {};
  }

  std::string wrap(const ExprPtr& e, int min_prec) const {
    if (precedence(*e) < min_prec) return "\\left(" + render(e) + "\\right)";
    return render(e);
  }

  // Repeated factors group into powers; grouped factors print with higher
  // exponents first (g*v*v -> "v^{2} g").
  std::string render_product(const ExprPtr& e) const {
    double coeff = 1.0;
    std::vector<std::pair<ExprPtr, int>> grouped;
    for (const auto& c : e->children()) {
      if (c->kind() == ExprKind::Constant) {
        coeff *= c->value();
        continue;
      }
      bool merged = false;
      for (auto& [g, count] : grouped) {
        if (equal(g, c)) {
          ++count;
          merged = true;
          break;
        }
      }
      if (!merged) grouped.emplace_back(c, 1);
    }
    std::stable_sort(grouped.begin(), grouped.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::string out;
    if (coeff == -1.0) {
      out += "- ";
    } else if (coeff != 1.0) {
      out += format_number(coeff) + " ";
    }
    bool first = true;
    for (const auto& [g, count] : grouped) {
      if (!first) out += " ";
      first = false;
      if (count == 1) {
        out += wrap(g, kPrecProduct + 1);
      } else {
        out += wrap(g, kPrecPower + 1) + "^{" + std::to_string(count) + "}";
      }
    }
    if (grouped.empty()) out += format_number(coeff);
    return out;
  }
};

}  // namespace

std::string render(const ExprPtr& e, RenderStyle style) {
  if (style == RenderStyle::Plain) {
    std::string out;
    render_plain(e, out);
    return out;
  }
  static const std::map<std::string, std::string> empty;
  return LatexRenderer{empty}.render(e);
}

std::string render_latex(const ExprPtr& e,
                         const std::map<std::string, std::string>& tex_names) {
  return LatexRenderer{tex_names}.render(e);
}

}  // namespace gridsym
