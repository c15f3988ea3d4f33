#pragma once

// Expression language for equation strings: parsing, symbolic differentiation,
// simplification, substitution, vector evaluation, and rendering.
//
// Expr values are immutable after construction and safe to share across
// threads; every operation below is a pure function.
//
// Trees built through the factory functions satisfy a few normal-form
// invariants that the renderer relies on for plain-text round-trips:
//   - sums and products are flattened (no Sum directly inside Sum, etc.)
//   - a product never holds a Negate child; its sign lives in an optional
//     leading constant
//   - Negate never wraps a constant, another Negate, or a product
// parse() and simplify() both produce trees in this form.

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gridsym {

enum class ExprKind : std::uint8_t {
  Constant,
  Symbol,
  Negate,
  Sum,
  Product,
  Quotient,
  Power,
  Call,
};

enum class Func : std::uint8_t { Sin, Cos, Exp, Log, Sqrt, Abs, Sign };

const char* func_name(Func f);

class Expr;
using ExprPtr = std::shared_ptr<const Expr>;

class Expr {
 public:
  // Normalizing factories. These are the only way to build nodes.
  static ExprPtr constant(double v);
  static ExprPtr symbol(std::string name);
  static ExprPtr negate(ExprPtr e);
  static ExprPtr sum(std::vector<ExprPtr> terms);
  static ExprPtr product(std::vector<ExprPtr> factors);
  static ExprPtr quotient(ExprPtr num, ExprPtr den);
  static ExprPtr power(ExprPtr base, ExprPtr exponent);
  static ExprPtr call(Func f, ExprPtr arg);

  ExprKind kind() const { return kind_; }
  double value() const { return value_; }
  const std::string& name() const { return name_; }
  Func func() const { return func_; }
  std::span<const ExprPtr> children() const { return children_; }
  const ExprPtr& child(std::size_t i) const { return children_[i]; }

  bool is_constant(double v) const {
    return kind_ == ExprKind::Constant && value_ == v;
  }

  void collect_symbols(std::set<std::string>& out) const;
  std::set<std::string> symbols() const;

 private:
  Expr() = default;

  ExprKind kind_ = ExprKind::Constant;
  double value_ = 0.0;
  std::string name_;
  Func func_ = Func::Sin;
  std::vector<ExprPtr> children_;
};

/// Structural equality (order-sensitive).
bool equal(const Expr& a, const Expr& b);
inline bool equal(const ExprPtr& a, const ExprPtr& b) { return equal(*a, *b); }

/// Canonical total order used to sort commutative children. Returns <0, 0, >0.
int compare(const Expr& a, const Expr& b);

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (at offset " + std::to_string(offset) + ")"),
        offset(offset) {}
  std::size_t offset;
};

/// Parse an equation string. Grammar (see docs/grammar.md):
/// infix + - * / ** (^ accepted for power), unary minus, parentheses,
/// function calls over {sin, cos, exp, log, sqrt, abs, sign}, real literals.
/// Precedence: power > unary minus > product/quotient > sum; - and / are
/// left-associative, ** is right-associative.
ExprPtr parse(std::string_view text);

/// Exact partial derivative with respect to symbol `s`. Total over valid
/// expressions; symbols absent from the tree give zero.
ExprPtr differentiate(const ExprPtr& e, std::string_view s);

/// Constant folding, neutral/annihilator identities, flattening, like-term
/// collection in sums, and canonical child ordering. Value-preserving.
ExprPtr simplify(const ExprPtr& e);

/// Rename symbols. Targets must be valid identifiers.
ExprPtr substitute_symbols(const ExprPtr& e,
                           const std::map<std::string, std::string>& renames);

/// Replace symbols by whole expressions (used by block expansion).
ExprPtr substitute(const ExprPtr& e,
                   const std::map<std::string, ExprPtr>& bindings);

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Element-wise evaluation over n devices. Every symbol must be bound to a
/// vector of length n or of length 1 (broadcast). Non-finite results raise
/// EvalError naming the symbols involved and the first offending element.
std::vector<double> evaluate(const ExprPtr& e,
                             const std::map<std::string, std::vector<double>>& bindings,
                             std::size_t n);

enum class RenderStyle { Plain, Latex };

/// Plain style re-parses to a structurally equal tree; latex style emits
/// \frac / superscript notation.
std::string render(const ExprPtr& e, RenderStyle style);

/// Latex rendering with per-symbol display-name overrides.
std::string render_latex(const ExprPtr& e,
                         const std::map<std::string, std::string>& tex_names);

bool is_valid_identifier(std::string_view s);

/// Shortest decimal text that round-trips through parse().
std::string format_number(double v);

}  // namespace gridsym
