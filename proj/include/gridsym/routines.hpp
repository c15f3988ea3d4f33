#pragma once

// Numerical analyses over a loaded System: Newton-Raphson power flow,
// dynamic initialization, fixed-step implicit trapezoidal time-domain
// simulation with toggle events, and small-signal eigenvalue analysis.

#include <complex>
#include <string>
#include <vector>

#include "gridsym/linalg.hpp"
#include "gridsym/system.hpp"

namespace gridsym {

struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Accumulated wall time per phase, mirroring the usual profiling split.
struct PhaseTimings {
  double update_equations = 0.0;  // residual evaluation
  double build_jacobians = 0.0;   // fill + assembly
  double solve_equations = 0.0;   // factor + triangular solves
};

struct PowerFlowConfig {
  double tol = 1e-8;          // on max |g|
  int max_iter = 20;
  bool flat_start = false;
  bool honest_jacobian = true;  // false: factor once, reuse across iterations
};

struct PowerFlowResult {
  bool converged = false;
  int iterations = 0;
  double max_residual = 0.0;
  PhaseTimings timings;
  std::vector<std::string> algeb_names;
  std::vector<double> y;  // algebraic solution snapshot
};

PowerFlowResult solve_power_flow(System& sys, const PowerFlowConfig& cfg = {});

/// After a converged power flow: per dynamic model, copy external services,
/// run the native hook, execute sequential assignments, then solve the
/// gathered implicit initializers with a damped Newton (tol 1e-10). Verifies
/// max(|f|, |g|) < 1e-8 on the full residual.
void initialize_dynamics(System& sys);

struct Event {
  std::string model;  // model or group name
  std::string idx;
  double time = 0.0;
};

struct TdsConfig {
  double h = 1.0 / 30.0;
  double t_end = 10.0;
  double tol = 1e-8;
  int max_newton_iter = 15;
  std::vector<Event> events;  // applied at step boundaries (times snapped)
};

struct TdsResult {
  std::vector<double> times;
  std::vector<std::vector<double>> states;  // x snapshot per recorded step
  std::vector<std::vector<double>> algebs;  // y snapshot per recorded step
  std::vector<std::string> state_names;
  std::vector<std::string> algeb_names;
  PhaseTimings timings;
  int total_newton_iterations = 0;
};

/// Implicit trapezoidal integrator with a fixed step. The Newton iteration
/// matrix is [[I - h/2 fx, -h/2 fy], [gx, gy]]; anti-windup flags update
/// inside every Newton pass, and binding states solve x = bound exactly.
class TrapezoidalStepper {
 public:
  TrapezoidalStepper(System& sys, double h, double tol, int max_iter);

  /// Advance one step; throws ConvergenceError (with the time stamp) if the
  /// Newton loop does not converge. Returns Newton iterations taken.
  int step(double t, PhaseTimings* timings = nullptr);

  /// Recompute residuals and refresh history after an external change
  /// (event application or initialization).
  void refresh_history();

  /// Solve g(x, y) = 0 for y with states frozen (post-event consistency).
  void resolve_algebraics(double tol = 1e-10, int max_iter = 20);

 private:
  void assemble_residual(std::vector<double>& r) const;

  System& sys_;
  double h_, tol_;
  int max_iter_;
  SparseMatrix iteration_matrix_;
  LuSymbolic symbolic_;
  bool have_symbolic_ = false;
  std::vector<int> map_fx_, map_fy_, map_gx_, map_gy_, identity_slots_;
  std::vector<double> x0_, f0_, rhs_, delta_;
};

TdsResult run_tds(System& sys, const TdsConfig& cfg = {});

/// A = fx - fy gy^{-1} gx at the current operating point, via sparse solves
/// of gy against the columns of gx.
DenseMatrix compute_state_matrix(System& sys);

struct EigenReport {
  std::vector<std::complex<double>> eigenvalues;  // sorted by damping, ascending
  std::vector<double> damping;                    // zeta = -Re / |lambda|
};

EigenReport eigen_report(const DenseMatrix& a);

/// Damping ratio of one eigenvalue (1.0 for non-oscillatory real modes).
double damping_ratio(std::complex<double> lambda);

}  // namespace gridsym
