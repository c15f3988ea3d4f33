#include "gridsym/program.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

namespace gridsym {

namespace {

std::atomic<std::size_t> g_parallel_threshold{4096};

constexpr int kMaxStack = 64;

}  // namespace

std::size_t parallel_threshold() { return g_parallel_threshold.load(); }
void set_parallel_threshold(std::size_t n) { g_parallel_threshold.store(n); }

Program Program::compile(const ExprPtr& e) {
  Program p;
  std::vector<std::string> slots;
  p.emit(e, slots);
  p.symbols_ = std::move(slots);

  int depth = 0, max_depth = 0;
  for (const auto& ins : p.code_) {
    switch (ins.op) {
      case Op::PushConst:
      case Op::PushOperand:
        ++depth;
        break;
      case Op::Add:
      case Op::Mul:
      case Op::Div:
      case Op::Pow:
        --depth;
        break;
      default:
        break;  // unary: depth unchanged
    }
    max_depth = std::max(max_depth, depth);
  }
  p.stack_depth_ = max_depth;
  if (max_depth > kMaxStack) {
    throw std::runtime_error("expression too deep to compile (stack depth " +
                             std::to_string(max_depth) + ")");
  }
  return p;
}

void Program::emit(const ExprPtr& e, std::vector<std::string>& slots) {
  switch (e->kind()) {
    case ExprKind::Constant:
      code_.push_back({Op::PushConst, 0, e->value()});
      return;
    case ExprKind::Symbol: {
      auto it = std::find(slots.begin(), slots.end(), e->name());
      std::int32_t idx;
      if (it == slots.end()) {
        idx = static_cast<std::int32_t>(slots.size());
        slots.push_back(e->name());
      } else {
        idx = static_cast<std::int32_t>(it - slots.begin());
      }
      code_.push_back({Op::PushOperand, idx, 0.0});
      return;
    }
    case ExprKind::Negate:
      emit(e->child(0), slots);
      code_.push_back({Op::Neg, 0, 0.0});
      return;
    case ExprKind::Sum:
      emit(e->child(0), slots);
      for (std::size_t i = 1; i < e->children().size(); ++i) {
        emit(e->child(i), slots);
        code_.push_back({Op::Add, 0, 0.0});
      }
      return;
    case ExprKind::Product:
      emit(e->child(0), slots);
      for (std::size_t i = 1; i < e->children().size(); ++i) {
        emit(e->child(i), slots);
        code_.push_back({Op::Mul, 0, 0.0});
      }
      return;
    case ExprKind::Quotient:
      emit(e->child(0), slots);
      emit(e->child(1), slots);
      code_.push_back({Op::Div, 0, 0.0});
      return;
    case ExprKind::Power: {
      emit(e->child(0), slots);
      const auto& exp = e->child(1);
      if (exp->kind() == ExprKind::Constant) {
        double v = exp->value();
        double rounded = std::round(v);
        if (v == rounded && std::abs(v) <= 8.0) {
          code_.push_back({Op::PowInt, static_cast<std::int32_t>(rounded), 0.0});
          return;
        }
      }
      emit(exp, slots);
      code_.push_back({Op::Pow, 0, 0.0});
      return;
    }
    case ExprKind::Call: {
      emit(e->child(0), slots);
      Op op;
      switch (e->func()) {
        case Func::Sin: op = Op::Sin; break;
        case Func::Cos: op = Op::Cos; break;
        case Func::Exp: op = Op::Exp; break;
        case Func::Log: op = Op::Log; break;
        case Func::Sqrt: op = Op::Sqrt; break;
        case Func::Abs: op = Op::Abs; break;
        case Func::Sign: op = Op::Sign; break;
        default: throw std::logic_error("unhandled function");
      }
      code_.push_back({op, 0, 0.0});
      return;
    }
  }
}

namespace {

inline double pow_int(double x, std::int32_t n) {
  if (n < 0) return 1.0 / pow_int(x, -n);
  double r = 1.0;
  while (n > 0) {
    if (n & 1) r *= x;
    x *= x;
    n >>= 1;
  }
  return r;
}

}  // namespace

double Program::run_scalar(std::span<const Operand> operands, std::size_t i) const {
  double stack[kMaxStack];
  int sp = 0;
  for (const auto& ins : code_) {
    switch (ins.op) {
      case Op::PushConst: stack[sp++] = ins.constant; break;
      case Op::PushOperand: {
        const Operand& o = operands[static_cast<std::size_t>(ins.arg)];
        stack[sp++] = o.data[o.stride * static_cast<std::ptrdiff_t>(i)];
        break;
      }
      case Op::Neg: stack[sp - 1] = -stack[sp - 1]; break;
      case Op::Add: stack[sp - 2] += stack[sp - 1]; --sp; break;
      case Op::Mul: stack[sp - 2] *= stack[sp - 1]; --sp; break;
      case Op::Div: stack[sp - 2] /= stack[sp - 1]; --sp; break;
      case Op::Pow: stack[sp - 2] = std::pow(stack[sp - 2], stack[sp - 1]); --sp; break;
      case Op::PowInt: stack[sp - 1] = pow_int(stack[sp - 1], ins.arg); break;
      case Op::Sin: stack[sp - 1] = std::sin(stack[sp - 1]); break;
      case Op::Cos: stack[sp - 1] = std::cos(stack[sp - 1]); break;
      case Op::Exp: stack[sp - 1] = std::exp(stack[sp - 1]); break;
      case Op::Log: stack[sp - 1] = std::log(stack[sp - 1]); break;
      case Op::Sqrt: stack[sp - 1] = std::sqrt(stack[sp - 1]); break;
      case Op::Abs: stack[sp - 1] = std::abs(stack[sp - 1]); break;
      case Op::Sign:
        stack[sp - 1] = stack[sp - 1] > 0 ? 1.0 : (stack[sp - 1] < 0 ? -1.0 : 0.0);
        break;
    }
  }
  return stack[0];
}

template <bool Accumulate>
void Program::run_serial(std::span<const Operand> operands, double* out,
                         std::size_t begin, std::size_t end) const {
  for (std::size_t i = begin; i < end; ++i) {
    double v = run_scalar(operands, i);
    if constexpr (Accumulate) {
      out[i] += v;
    } else {
      out[i] = v;
    }
  }
}

void Program::run(std::span<const Operand> operands, double* out, std::size_t n,
                  bool accumulate, ExecPolicy policy) const {
  bool parallel = false;
  switch (policy) {
    case ExecPolicy::Serial: parallel = false; break;
    case ExecPolicy::Parallel: parallel = true; break;
    case ExecPolicy::Auto: parallel = n >= parallel_threshold(); break;
  }
#ifndef _OPENMP
  parallel = false;
#endif
  if (!parallel) {
    if (accumulate) {
      run_serial<true>(operands, out, 0, n);
    } else {
      run_serial<false>(operands, out, 0, n);
    }
    return;
  }
#ifdef _OPENMP
  const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(n);
  if (accumulate) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      out[i] += run_scalar(operands, static_cast<std::size_t>(i));
    }
  } else {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      out[i] = run_scalar(operands, static_cast<std::size_t>(i));
    }
  }
#endif
}

}  // namespace gridsym
