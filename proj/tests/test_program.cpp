#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "gridsym/program.hpp"

using namespace gridsym;

namespace {

ExprPtr random_expr(std::mt19937& rng, int depth) {
  std::uniform_int_distribution<int> kind(0, depth <= 0 ? 1 : 6);
  std::uniform_real_distribution<double> cval(0.25, 2.0);
  static const char* syms[] = {"p", "q", "r"};
  switch (kind(rng)) {
    case 0: return Expr::constant(cval(rng));
    case 1: return Expr::symbol(syms[rng() % 3]);
    case 2: return Expr::negate(random_expr(rng, depth - 1));
    case 3:
      return Expr::sum({random_expr(rng, depth - 1), random_expr(rng, depth - 1)});
    case 4:
      return Expr::product({random_expr(rng, depth - 1), random_expr(rng, depth - 1)});
    case 5:
      return Expr::quotient(random_expr(rng, depth - 1), random_expr(rng, depth - 1));
    default: {
      Func fs[] = {Func::Sin, Func::Cos, Func::Exp, Func::Sqrt, Func::Abs};
      return Expr::call(fs[rng() % 5], random_expr(rng, depth - 1));
    }
  }
}

}  // namespace

TEST_CASE("compiled programs agree with the tree evaluator") {
  std::mt19937 rng(404);
  std::uniform_real_distribution<double> val(0.3, 1.7);
  const std::size_t n = 17;
  for (int trial = 0; trial < 100; ++trial) {
    auto e = random_expr(rng, 4);
    Program prog = Program::compile(e);

    std::map<std::string, std::vector<double>> bindings;
    std::vector<std::vector<double>> storage;
    for (const auto& s : prog.symbols()) {
      std::vector<double> v(n);
      for (auto& x : v) x = val(rng);
      bindings[s] = v;
      storage.push_back(std::move(v));
    }
    std::vector<Program::Operand> ops;
    for (std::size_t k = 0; k < prog.symbols().size(); ++k) {
      ops.push_back({storage[k].data(), 1});
    }

    std::vector<double> ref;
    try {
      ref = evaluate(e, bindings, n);
    } catch (const EvalError&) {
      continue;  // non-finite sample; both paths would reject it
    }
    std::vector<double> out(n, 0.0);
    prog.run(ops, out.data(), n, false, ExecPolicy::Serial);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-14));
    }
  }
}

TEST_CASE("serial and OpenMP kernels produce bit-identical results") {
  std::mt19937 rng(911);
  std::uniform_real_distribution<double> val(0.2, 2.2);
  const std::size_t n = 10000;
  for (int trial = 0; trial < 10; ++trial) {
    auto e = random_expr(rng, 5);
    Program prog = Program::compile(e);
    std::vector<std::vector<double>> storage;
    std::vector<Program::Operand> ops;
    for (std::size_t k = 0; k < prog.symbols().size(); ++k) {
      std::vector<double> v(n);
      for (auto& x : v) x = val(rng);
      storage.push_back(std::move(v));
    }
    for (auto& s : storage) ops.push_back({s.data(), 1});

    std::vector<double> serial(n, 0.0), parallel(n, 0.0);
    prog.run(ops, serial.data(), n, false, ExecPolicy::Serial);
    prog.run(ops, parallel.data(), n, false, ExecPolicy::Parallel);
    // bitwise comparison: identical per-element instruction sequences (and it
    // stays valid when a sample happens to produce NaN)
    CHECK(std::memcmp(serial.data(), parallel.data(), n * sizeof(double)) == 0);
  }
}

TEST_CASE("accumulate mode adds instead of storing") {
  auto e = parse("a + 1");
  Program prog = Program::compile(e);
  std::vector<double> a{1, 2, 3};
  std::vector<Program::Operand> ops{{a.data(), 1}};
  std::vector<double> out{10, 10, 10};
  prog.run(ops, out.data(), 3, true, ExecPolicy::Serial);
  CHECK(out == std::vector<double>{12, 13, 14});
  prog.run(ops, out.data(), 3, true, ExecPolicy::Serial);
  CHECK(out == std::vector<double>{14, 16, 18});
}

TEST_CASE("scalar operands broadcast through stride zero") {
  auto e = parse("k*x");
  Program prog = Program::compile(e);
  double k = 2.5;
  std::vector<double> x{1, 2, 4};
  std::vector<Program::Operand> ops;
  for (const auto& s : prog.symbols()) {
    if (s == "k") {
      ops.push_back({&k, 0});
    } else {
      ops.push_back({x.data(), 1});
    }
  }
  std::vector<double> out(3);
  prog.run(ops, out.data(), 3, false);
  CHECK(out == std::vector<double>{2.5, 5.0, 10.0});
}

TEST_CASE("small integer powers use the fast path and match std::pow") {
  for (const char* text : {"x**2", "x**3", "x**-2", "x**8"}) {
    Program prog = Program::compile(parse(text));
    std::vector<double> x{0.5, 1.3, 2.7};
    std::vector<Program::Operand> ops{{x.data(), 1}};
    std::vector<double> out(3);
    prog.run(ops, out.data(), 3, false);
    auto ref = evaluate(parse(text), {{"x", x}}, 3);
    for (int i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-14));
  }
}
