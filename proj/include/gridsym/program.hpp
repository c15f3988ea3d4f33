#pragma once

// Compiled equation programs: an Expr is lowered once into a flat postfix
// instruction stream whose operands are bound to per-device arrays, then
// executed element-wise over all devices of a model. This is the numeric
// layer's hot path; everything else calls it.
//
// Two execution kernels produce bit-identical results:
//   - a serial reference loop, kept for testing and small device counts
//   - an OpenMP parallel-for over devices
// Elements are independent (no reductions), so the parallel kernel needs no
// synchronization and matches the serial one exactly.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gridsym/expr.hpp"

namespace gridsym {

enum class ExecPolicy { Serial, Parallel, Auto };

/// Device count at or above which Auto switches to the OpenMP kernel.
std::size_t parallel_threshold();
void set_parallel_threshold(std::size_t n);

class Program {
 public:
  /// An operand bound to storage: stride 1 reads data[i] for device i,
  /// stride 0 broadcasts a scalar.
  struct Operand {
    const double* data = nullptr;
    std::ptrdiff_t stride = 1;
  };

  static Program compile(const ExprPtr& e);

  /// Symbols in slot order; operands passed to run() must follow it.
  const std::vector<std::string>& symbols() const { return symbols_; }
  int stack_depth() const { return stack_depth_; }
  bool empty() const { return code_.empty(); }

  /// Evaluate element i with the given operand bindings.
  double run_scalar(std::span<const Operand> operands, std::size_t i) const;

  /// Evaluate elements 0..n-1. With accumulate, out[i] += value; otherwise
  /// out[i] = value. Policy picks the kernel; Auto uses the threshold above.
  void run(std::span<const Operand> operands, double* out, std::size_t n,
           bool accumulate, ExecPolicy policy = ExecPolicy::Auto) const;

 private:
  enum class Op : std::uint8_t {
    PushConst,
    PushOperand,
    Neg,
    Add,
    Mul,
    Div,
    Pow,
    PowInt,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sign,
  };

  struct Instr {
    Op op;
    std::int32_t arg = 0;
    double constant = 0.0;
  };

  void emit(const ExprPtr& e, std::vector<std::string>& slots);

  template <bool Accumulate>
  void run_serial(std::span<const Operand> operands, double* out, std::size_t begin,
                  std::size_t end) const;

  std::vector<Instr> code_;
  std::vector<std::string> symbols_;
  int stack_depth_ = 0;
};

}  // namespace gridsym
