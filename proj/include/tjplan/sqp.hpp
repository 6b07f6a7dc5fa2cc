#pragma once

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace tjplan::sqp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// min f(x) s.t. c_eq(x) = 0, c_in(x) >= 0, lower <= x <= upper.
///
/// Gradient and Jacobian callbacks are optional; when empty the solver
/// falls back to central differences and flags the result.
struct NlpProblem {
  Eigen::Index n = 0;
  Eigen::Index n_eq = 0;
  Eigen::Index n_ineq = 0;
  std::function<double(const VectorXd&)> objective;
  std::function<VectorXd(const VectorXd&)> gradient;
  std::function<VectorXd(const VectorXd&)> eq_constraints;
  std::function<MatrixXd(const VectorXd&)> eq_jacobian;
  std::function<VectorXd(const VectorXd&)> ineq_constraints;
  std::function<MatrixXd(const VectorXd&)> ineq_jacobian;
  /// Optional Hessian of the Lagrangian f - mu_eq'c_eq - mu_in'c_in. When
  /// set it replaces the BFGS approximation; the QP shifts it if indefinite.
  std::function<MatrixXd(const VectorXd&, const VectorXd&, const VectorXd&)> hessian;
  /// Optional map applied to the start and every trial point, e.g. to re-solve variables
  /// that the equalities determine. Must leave points on the constraint
  /// linearization unchanged to first order. Failures fall back to the raw point.
  std::function<VectorXd(const VectorXd&)> project;
  VectorXd lower;  ///< size n, -inf allowed; empty means unbounded
  VectorXd upper;  ///< size n, +inf allowed; empty means unbounded
};

struct SqpSettings {
  int max_iterations = 200;
  double kkt_tolerance = 1e-6;
  double constraint_tolerance = 1e-8;
  double penalty_growth = 10.0;
  double backtrack_ratio = 0.5;
  double armijo = 1e-4;
  double min_step = 1e-12;
  double fd_step = 1e-7;
  bool second_order_correction = true;
  bool record_trace = false;

  void validate() const;
};

enum class SqpStatus { Converged, MaxIterations, LineSearchFailure, QpInfeasible, NumericalBreakdown };

[[nodiscard]] std::string to_string(SqpStatus s);

struct TraceRow {
  int iteration = 0;
  double objective = 0.0;
  double violation = 0.0;
  double step_length = 0.0;
  double penalty = 0.0;
  double merit_before = 0.0;  ///< merit at the previous iterate, same penalty
  double merit_after = 0.0;
  bool restoration = false;
};

struct SqpResult {
  VectorXd x;
  double objective = 0.0;
  double kkt_residual = 0.0;
  double violation = 0.0;  ///< infinity norm over all constraints
  int iterations = 0;      ///< QP subproblems solved
  SqpStatus status = SqpStatus::MaxIterations;
  VectorXd eq_multipliers;
  VectorXd ineq_multipliers;
  double penalty = 0.0;
  bool start_clamped = false;
  bool numeric_derivatives = false;
  std::vector<TraceRow> trace;
};

SqpResult solve(const NlpProblem& problem, const VectorXd& x0, const SqpSettings& settings = {});

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

// ---------------------------------------------------------------------------
// Building blocks, exposed for testing.

/// Linearized subproblem:
///   min 1/2 d'Hd + g'd  s.t.  eq_jac d + eq_res = 0,
///                             ineq_jac d + ineq_res >= 0,
///                             lower <= d <= upper.
struct QpSubproblem {
  MatrixXd H;
  VectorXd g;
  MatrixXd eq_jac;
  VectorXd eq_res;
  MatrixXd ineq_jac;
  VectorXd ineq_res;
  VectorXd lower;  ///< may be empty
  VectorXd upper;  ///< may be empty
};

enum class QpStatus { Solved, Infeasible, IterationLimit };

struct QpStep {
  QpStatus status = QpStatus::Solved;
  VectorXd d;
  VectorXd eq_multipliers;
  VectorXd ineq_multipliers;
  VectorXd lower_multipliers;
  VectorXd upper_multipliers;
  /// When infeasible: step minimizing the worst linearized violation.
  VectorXd restoration_step;
  int iterations = 0;
  /// Added to the reduced Hessian to make it positive definite; 0 when none was needed.
  double hessian_shift = 0.0;
};

/// Null-space elimination of equalities, then a primal active-set method
/// started from a phase-one feasible point. H only needs to be positive
/// definite on the equality null space; otherwise that block is shifted.
[[nodiscard]] QpStep qp_step(const QpSubproblem& qp);

/// Powell-damped BFGS update; returns H unchanged for a degenerate step.
[[nodiscard]] MatrixXd bfgs_update(const MatrixXd& H, const VectorXd& s, const VectorXd& y);

struct LineSearchResult {
  double alpha = 0.0;
  double penalty = 0.0;
  bool success = false;
  int evaluations = 0;
};

/// Backtracking Armijo search on f + penalty * ||violation||_1 along d.
/// Raises the penalty first if d is not a descent direction of the merit.
[[nodiscard]] LineSearchResult merit_line_search(const NlpProblem& problem, const VectorXd& x,
                                                 const VectorXd& d, double penalty,
                                                 const SqpSettings& settings);

/// l1 merit value f(x) + penalty * violation_l1(x).
[[nodiscard]] double merit(const NlpProblem& problem, const VectorXd& x, double penalty);

/// Sum of equality magnitudes, inequality shortfalls and bound violations.
[[nodiscard]] double violation_l1(const NlpProblem& problem, const VectorXd& x);

/// Central differences; throws NumericalBreakdown on NaN.
[[nodiscard]] VectorXd finite_diff_gradient(const std::function<double(const VectorXd&)>& f,
                                            const VectorXd& x, double h);

[[nodiscard]] MatrixXd finite_diff_jacobian(const std::function<VectorXd(const VectorXd&)>& f,
                                            const VectorXd& x, double h);

/// max of ||grad f - J'lambda||_inf and complementarity ||lambda_i c_i||_inf,
/// evaluated independently from the callbacks.
[[nodiscard]] double kkt_residual(const NlpProblem& problem, const VectorXd& x,
                                  const VectorXd& eq_multipliers, const VectorXd& ineq_multipliers);

}  // namespace tjplan::sqp
