#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <ostream>
#include <vector>

#include "tjplan/errors.hpp"
#include "tjplan/sqp.hpp"

namespace tjplan::sqp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool all_finite(const VectorXd& v) { return v.allFinite(); }

/// Thrown internally when a callback returns NaN/Inf; turned into a status.
struct NonFinite {};

/// Callback wrapper adding length checks, finite-difference fallback and
/// iterate context on failures.
class Evaluator {
 public:
  Evaluator(const NlpProblem& p, const SqpSettings& s) : p_(p), s_(s) {}

  struct Values {
    double f = 0.0;
    VectorXd c_eq;
    VectorXd c_in;
  };
  struct Derivatives {
    VectorXd grad;
    MatrixXd J_eq;
    MatrixXd J_in;
  };

  int iteration = 0;
  bool numeric = false;

  Values values(const VectorXd& x) {
    Values v;
    v.f = call("objective", [&] { return p_.objective(x); });
    v.c_eq = constraints(p_.eq_constraints, p_.n_eq, x, "equality constraints");
    v.c_in = constraints(p_.ineq_constraints, p_.n_ineq, x, "inequality constraints");
    if (!std::isfinite(v.f) || !all_finite(v.c_eq) || !all_finite(v.c_in)) throw NonFinite{};
    return v;
  }

  Derivatives derivatives(const VectorXd& x) {
    Derivatives d;
    if (p_.gradient) {
      d.grad = call("gradient", [&] { return p_.gradient(x); });
    } else {
      numeric = true;
      d.grad = call("gradient", [&] { return finite_diff_gradient(p_.objective, x, s_.fd_step); });
    }
    if (d.grad.size() != p_.n) throw ParameterError("gradient callback returned wrong length");
    d.J_eq = jacobian(p_.eq_jacobian, p_.eq_constraints, p_.n_eq, x, "equality Jacobian");
    d.J_in = jacobian(p_.ineq_jacobian, p_.ineq_constraints, p_.n_ineq, x, "inequality Jacobian");
    if (!all_finite(d.grad) || !d.J_eq.allFinite() || !d.J_in.allFinite()) throw NonFinite{};
    return d;
  }

 private:
  template <typename F>
  auto call(const char* what, F&& f) -> decltype(f()) {
    try {
      return f();
    } catch (const SolverError&) {
      throw;
    } catch (const std::exception& e) {
      throw SolverError(std::string(what) + " callback failed at iteration " +
                        std::to_string(iteration) + ": " + e.what());
    }
  }

  VectorXd constraints(const std::function<VectorXd(const VectorXd&)>& fn, Eigen::Index count,
                       const VectorXd& x, const char* what) {
    if (count == 0) return VectorXd(0);
    VectorXd c = call(what, [&] { return fn(x); });
    if (c.size() != count) throw ParameterError(std::string(what) + " callback returned wrong length");
    return c;
  }

  MatrixXd jacobian(const std::function<MatrixXd(const VectorXd&)>& jac,
                    const std::function<VectorXd(const VectorXd&)>& fn, Eigen::Index count,
                    const VectorXd& x, const char* what) {
    if (count == 0) return MatrixXd(0, p_.n);
    MatrixXd J;
    if (jac) {
      J = call(what, [&] { return jac(x); });
    } else {
      numeric = true;
      J = call(what, [&] { return finite_diff_jacobian(fn, x, s_.fd_step); });
    }
    if (J.rows() != count || J.cols() != p_.n) throw ParameterError(std::string(what) + " has wrong shape");
    return J;
  }

  const NlpProblem& p_;
  const SqpSettings& s_;
};

double bound_violation(const NlpProblem& p, const VectorXd& x) {
  double v = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (p.lower.size() == x.size() && x(j) < p.lower(j)) v += p.lower(j) - x(j);
    if (p.upper.size() == x.size() && x(j) > p.upper(j)) v += x(j) - p.upper(j);
  }
  return v;
}

double violation_l1_of(const Evaluator::Values& v) {
  double s = v.c_eq.cwiseAbs().sum();
  for (Eigen::Index i = 0; i < v.c_in.size(); ++i) s += std::max(0.0, -v.c_in(i));
  return s;
}

double violation_inf_of(const Evaluator::Values& v) {
  double s = v.c_eq.size() ? v.c_eq.lpNorm<Eigen::Infinity>() : 0.0;
  for (Eigen::Index i = 0; i < v.c_in.size(); ++i) s = std::max(s, -v.c_in(i));
  return s;
}

VectorXd lagrangian_gradient(const Evaluator::Derivatives& d, const VectorXd& mu_eq, const VectorXd& mu_in) {
  VectorXd g = d.grad;
  if (mu_eq.size()) g -= d.J_eq.transpose() * mu_eq;
  if (mu_in.size()) g -= d.J_in.transpose() * mu_in;
  return g;
}

QpSubproblem make_qp(const NlpProblem& p, const MatrixXd& H, const VectorXd& x,
                     const Evaluator::Values& v, const Evaluator::Derivatives& d) {
  QpSubproblem qp;
  qp.H = H;
  qp.g = d.grad;
  qp.eq_jac = d.J_eq;
  qp.eq_res = v.c_eq;
  qp.ineq_jac = d.J_in;
  qp.ineq_res = v.c_in;
  if (p.lower.size() == x.size()) qp.lower = p.lower - x;
  if (p.upper.size() == x.size()) qp.upper = p.upper - x;
  return qp;
}

/// KKT residual from already-evaluated quantities; bound multipliers are
/// implied by the sign of the Lagrangian gradient at active bounds.
double kkt_from(const NlpProblem& p, const VectorXd& x, const VectorXd& grad, const MatrixXd& J_eq,
                const MatrixXd& J_in, const VectorXd& c_in, const VectorXd& mu_eq, const VectorXd& mu_in) {
  VectorXd r = grad;
  if (mu_eq.size()) r -= J_eq.transpose() * mu_eq;
  if (mu_in.size()) r -= J_in.transpose() * mu_in;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double tol = 1e-12 * (1.0 + std::abs(x(j)));
    if (p.lower.size() == x.size() && x(j) <= p.lower(j) + tol && r(j) > 0.0) r(j) = 0.0;
    if (p.upper.size() == x.size() && x(j) >= p.upper(j) - tol && r(j) < 0.0) r(j) = 0.0;
  }
  double res = r.size() ? r.lpNorm<Eigen::Infinity>() : 0.0;
  for (Eigen::Index i = 0; i < mu_in.size(); ++i) {
    res = std::max(res, std::abs(mu_in(i) * c_in(i)));
    res = std::max(res, -mu_in(i));
  }
  return res;
}

MatrixXd exact_hessian(const NlpProblem& p, const VectorXd& x, const VectorXd& mu_eq, const VectorXd& mu_in) {
  MatrixXd H = p.hessian(x, mu_eq, mu_in);
  if (H.rows() != p.n || H.cols() != p.n) throw ParameterError("Hessian callback returned wrong shape");
  if (!H.allFinite()) throw NonFinite{};
  H = 0.5 * (H + H.transpose());
  return H;
}

struct SearchOutcome {
  double alpha = 0.0;
  bool success = false;
  int evaluations = 0;
};

/// Armijo backtracking on phi(alpha) starting from `alpha0`.
template <typename Phi>
SearchOutcome backtrack(const Phi& phi, double phi0, double slope, double alpha0, const SqpSettings& s) {
  SearchOutcome out;
  for (double alpha = alpha0; alpha >= s.min_step; alpha *= s.backtrack_ratio) {
    ++out.evaluations;
    const double value = phi(alpha);
    if (std::isfinite(value) && value <= phi0 + s.armijo * alpha * slope) {
      out.alpha = alpha;
      out.success = true;
      return out;
    }
  }
  return out;
}

}  // namespace

std::string to_string(SqpStatus s) {
  switch (s) {
    case SqpStatus::Converged: return "Converged";
    case SqpStatus::MaxIterations: return "MaxIterations";
    case SqpStatus::LineSearchFailure: return "LineSearchFailure";
    case SqpStatus::QpInfeasible: return "QpInfeasible";
    case SqpStatus::NumericalBreakdown: return "NumericalBreakdown";
  }
  return "Unknown";
}

void SqpSettings::validate() const {
  if (max_iterations < 1) throw ParameterError("max_iterations must be positive");
  if (!(kkt_tolerance > 0.0) || !(constraint_tolerance > 0.0) || !(min_step > 0.0) || !(fd_step > 0.0))
    throw ParameterError("tolerances must be positive");
  if (!(backtrack_ratio > 0.0 && backtrack_ratio < 1.0)) throw ParameterError("backtrack ratio must lie in (0,1)");
  if (!(armijo > 0.0 && armijo < 1.0)) throw ParameterError("Armijo constant must lie in (0,1)");
  if (!(penalty_growth > 1.0)) throw ParameterError("penalty growth must exceed 1");
}

VectorXd finite_diff_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h) {
  if (!(h > 0.0)) throw ParameterError("finite-difference step must be positive");
  VectorXd g(x.size());
  VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x(i);
    xp(i) = xi + h;
    const double fp = f(xp);
    xp(i) = xi - h;
    const double fm = f(xp);
    xp(i) = xi;
    g(i) = (fp - fm) / (2.0 * h);
    if (!std::isfinite(g(i))) throw NumericalBreakdown("non-finite value in finite-difference gradient");
  }
  return g;
}

MatrixXd finite_diff_jacobian(const std::function<VectorXd(const VectorXd&)>& f, const VectorXd& x, double h) {
  if (!(h > 0.0)) throw ParameterError("finite-difference step must be positive");
  const VectorXd f0 = f(x);
  MatrixXd J(f0.size(), x.size());
  VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x(i);
    xp(i) = xi + h;
    const VectorXd fp = f(xp);
    xp(i) = xi - h;
    const VectorXd fm = f(xp);
    xp(i) = xi;
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  if (!J.allFinite()) throw NumericalBreakdown("non-finite value in finite-difference Jacobian");
  return J;
}

double violation_l1(const NlpProblem& problem, const VectorXd& x) {
  SqpSettings s;
  Evaluator ev(problem, s);
  return violation_l1_of(ev.values(x)) + bound_violation(problem, x);
}

double merit(const NlpProblem& problem, const VectorXd& x, double penalty) {
  SqpSettings s;
  Evaluator ev(problem, s);
  const auto v = ev.values(x);
  return v.f + penalty * (violation_l1_of(v) + bound_violation(problem, x));
}

namespace {

/// Residual with multipliers fitted by least squares to the gradient over
/// the QP's active set. Rows at an active bound are left to kkt_from.
double least_squares_kkt(const NlpProblem& p, const VectorXd& x, const Evaluator::Derivatives& d,
                         const Evaluator::Values& v, const QpStep& step, VectorXd& mu_eq, VectorXd& mu_in) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < v.c_in.size(); ++i)
    if (step.ineq_multipliers(i) > 0.0) active.push_back(i);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double tol = 1e-12 * (1.0 + std::abs(x(j)));
    const bool at_lo = p.lower.size() == n && x(j) <= p.lower(j) + tol;
    const bool at_hi = p.upper.size() == n && x(j) >= p.upper(j) - tol;
    if (!at_lo && !at_hi) rows.push_back(j);
  }
  const Eigen::Index ne = d.J_eq.rows();
  const auto na = static_cast<Eigen::Index>(active.size());
  MatrixXd A(static_cast<Eigen::Index>(rows.size()), ne + na);
  VectorXd g(A.rows());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const Eigen::Index j = rows[static_cast<std::size_t>(r)];
    g(r) = d.grad(j);
    for (Eigen::Index e = 0; e < ne; ++e) A(r, e) = d.J_eq(e, j);
    for (Eigen::Index a = 0; a < na; ++a) A(r, ne + a) = d.J_in(active[static_cast<std::size_t>(a)], j);
  }
  VectorXd lam = A.cols() ? VectorXd(A.completeOrthogonalDecomposition().solve(g)) : VectorXd();
  mu_eq = lam.head(ne);
  mu_in = VectorXd::Zero(v.c_in.size());
  for (Eigen::Index a = 0; a < na; ++a) mu_in(active[static_cast<std::size_t>(a)]) = lam(ne + a);
  return kkt_from(p, x, d.grad, d.J_eq, d.J_in, v.c_in, mu_eq, mu_in);
}

}  // namespace

double kkt_residual(const NlpProblem& problem, const VectorXd& x, const VectorXd& eq_multipliers,
                    const VectorXd& ineq_multipliers) {
  SqpSettings s;
  Evaluator ev(problem, s);
  const auto v = ev.values(x);
  const auto d = ev.derivatives(x);
  return kkt_from(problem, x, d.grad, d.J_eq, d.J_in, v.c_in, eq_multipliers, ineq_multipliers);
}

LineSearchResult merit_line_search(const NlpProblem& problem, const VectorXd& x, const VectorXd& d,
                                   double penalty, const SqpSettings& settings) {
  Evaluator ev(problem, settings);
  const auto v0 = ev.values(x);
  const auto d0 = ev.derivatives(x);
  const double viol0 = violation_l1_of(v0) + bound_violation(problem, x);
  const double gd = d0.grad.dot(d);
  LineSearchResult out;
  out.penalty = penalty;
  double slope = gd - penalty * viol0;
  if (slope >= 0.0) {
    if (viol0 <= 0.0) return out;
    out.penalty = std::max(penalty * settings.penalty_growth, 2.0 * gd / viol0);
    slope = gd - out.penalty * viol0;
  }
  const double phi0 = v0.f + out.penalty * viol0;
  auto phi = [&](double alpha) {
    const VectorXd xt = x + alpha * d;
    try {
      const auto vt = ev.values(xt);
      return vt.f + out.penalty * (violation_l1_of(vt) + bound_violation(problem, xt));
    } catch (const NonFinite&) {
      return kInf;
    }
  };
  const auto sr = backtrack(phi, phi0, slope, 1.0, settings);
  out.alpha = sr.alpha;
  out.success = sr.success;
  out.evaluations = sr.evaluations;
  return out;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "iteration,objective,violation,step_length,penalty\n";
  const auto prec = out.precision(17);
  for (const auto& r : trace)
    out << r.iteration << ',' << r.objective << ',' << r.violation << ',' << r.step_length << ','
        << r.penalty << '\n';
  out.precision(prec);
}

SqpResult solve(const NlpProblem& problem, const VectorXd& x0, const SqpSettings& settings) {
  settings.validate();
  if (x0.size() != problem.n) throw ParameterError("x0 has wrong dimension");
  if (!problem.objective) throw ParameterError("objective callback is required");
  if ((problem.n_eq > 0 && !problem.eq_constraints) || (problem.n_ineq > 0 && !problem.ineq_constraints))
    throw ParameterError("constraint callbacks are required for declared constraints");
  if ((problem.lower.size() && problem.lower.size() != problem.n) ||
      (problem.upper.size() && problem.upper.size() != problem.n))
    throw ParameterError("bounds have wrong dimension");

  SqpResult result;
  VectorXd x = x0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double xj = x(j);
    if (problem.lower.size() && xj < problem.lower(j)) xj = problem.lower(j);
    if (problem.upper.size() && xj > problem.upper(j)) xj = problem.upper(j);
    if (xj != x(j)) result.start_clamped = true;
    x(j) = xj;
  }

  auto settled = [&](const VectorXd& xt) -> VectorXd {
    if (!problem.project) return xt;
    try {
      VectorXd out = problem.project(xt);
      if (out.size() == xt.size() && out.allFinite()) return out;
    } catch (const std::exception&) {
    }
    return xt;
  };

  Evaluator ev(problem, settings);
  Evaluator::Values val;
  Evaluator::Derivatives der;
  Evaluator::Values val_start;
  const VectorXd x_start = x;
  try {
    val_start = ev.values(x_start);
    x = settled(x_start);
    val = x == x_start ? val_start : ev.values(x);
    der = ev.derivatives(x);
  } catch (const NonFinite&) {
    result.x = x;
    result.status = SqpStatus::NumericalBreakdown;
    result.objective = std::numeric_limits<double>::quiet_NaN();
    return result;
  }

  MatrixXd H = MatrixXd::Identity(problem.n, problem.n);
  bool hessian_scaled = false;
  // Levenberg-style term on the exact Hessian: grows while the line search
  // cuts steps, decays once full steps are accepted.
  double regularization = 0.0;
  double penalty = 0.0;
  VectorXd mu_eq = VectorXd::Zero(problem.n_eq);
  VectorXd mu_in = VectorXd::Zero(problem.n_ineq);
  result.status = SqpStatus::MaxIterations;

  auto full_violation = [&](const Evaluator::Values& v, const VectorXd& at) {
    return violation_l1_of(v) + bound_violation(problem, at);
  };

  for (int k = 0; k < settings.max_iterations; ++k) {
    ev.iteration = k;
    if (problem.hessian) {
      try {
        H = exact_hessian(problem, x, mu_eq, mu_in);
        if (regularization > 0.0) H.diagonal().array() += regularization;
      } catch (const NonFinite&) {
        result.status = SqpStatus::NumericalBreakdown;
        break;
      }
    }
    const QpSubproblem qp = make_qp(problem, H, x, val, der);
    QpStep step = qp_step(qp);
    result.iterations = k + 1;

    if (step.status == QpStatus::Infeasible) {
      // Feasibility restoration: reduce the l1 violation along the
      // least-violation step of the linearization.
      // The phase-one step treats bounds as soft, so trial points are clipped.
      const VectorXd& d = step.restoration_step;
      const double v0 = full_violation(val, x);
      double alpha_ok = 0.0;
      VectorXd x_ok;
      Evaluator::Values trial;
      for (double alpha = 1.0; alpha >= settings.min_step; alpha *= settings.backtrack_ratio) {
        VectorXd xt = x + alpha * d;
        if (problem.lower.size()) xt = xt.cwiseMax(problem.lower);
        if (problem.upper.size()) xt = xt.cwiseMin(problem.upper);
        xt = settled(xt);
        try {
          trial = ev.values(xt);
        } catch (const NonFinite&) {
          continue;
        }
        if (full_violation(trial, xt) < v0 * (1.0 - settings.armijo * alpha)) {
          alpha_ok = alpha;
          x_ok = std::move(xt);
          break;
        }
      }
      if (alpha_ok == 0.0) {
        result.status = SqpStatus::QpInfeasible;
        break;
      }
      x = std::move(x_ok);
      val = trial;
      try {
        der = ev.derivatives(x);
      } catch (const NonFinite&) {
        result.status = SqpStatus::NumericalBreakdown;
        break;
      }
      if (settings.record_trace)
        result.trace.push_back({k + 1, val.f, violation_inf_of(val), alpha_ok, penalty, 0.0, 0.0, true});
      continue;
    }

    mu_eq = step.eq_multipliers;
    mu_in = step.ineq_multipliers;
    VectorXd mu_bounds = step.lower_multipliers - step.upper_multipliers;

    double kkt = kkt_from(problem, x, der.grad, der.J_eq, der.J_in, val.c_in, mu_eq, mu_in);
    const double viol_inf = std::max(violation_inf_of(val), bound_violation(problem, x));
    if (kkt > settings.kkt_tolerance && viol_inf <= settings.constraint_tolerance) {
      // QP multipliers carry the error of H; least-squares multipliers on
      // the same active set do not.
      VectorXd ls_eq, ls_in;
      const double kkt_ls = least_squares_kkt(problem, x, der, val, step, ls_eq, ls_in);
      if (kkt_ls < kkt) {
        kkt = kkt_ls;
        mu_eq = ls_eq;
        mu_in = ls_in;
      }
    }
    if (kkt <= settings.kkt_tolerance && viol_inf <= settings.constraint_tolerance) {
      result.status = SqpStatus::Converged;
      break;
    }

    double mult_max = 0.0;
    if (mu_eq.size()) mult_max = std::max(mult_max, mu_eq.lpNorm<Eigen::Infinity>());
    if (mu_in.size()) mult_max = std::max(mult_max, mu_in.lpNorm<Eigen::Infinity>());
    if (mu_bounds.size()) mult_max = std::max(mult_max, mu_bounds.lpNorm<Eigen::Infinity>());
    if (penalty <= mult_max) penalty = std::max(penalty, settings.penalty_growth * mult_max);

    const VectorXd& d = step.d;
    const double viol1 = full_violation(val, x);
    double slope = der.grad.dot(d) - penalty * viol1;
    if (slope >= 0.0 && viol1 > 0.0) {
      penalty = std::max(penalty * settings.penalty_growth, 2.0 * der.grad.dot(d) / viol1);
      slope = der.grad.dot(d) - penalty * viol1;
    }
    const double phi0 = val.f + penalty * viol1;

    Evaluator::Values trial;
    auto phi_at = [&](const VectorXd& xt) {
      try {
        trial = ev.values(xt);
        return trial.f + penalty * full_violation(trial, xt);
      } catch (const NonFinite&) {
        return kInf;
      }
    };

    VectorXd x_new;
    double alpha = 1.0;
    bool accepted = false;
    const double phi_full = phi_at(settled(x + d));
    if (std::isfinite(phi_full) && phi_full <= phi0 + settings.armijo * slope) {
      x_new = settled(x + d);
      accepted = true;
    } else if (settings.second_order_correction && std::isfinite(phi_full)) {
      // Second-order correction: re-linearize the constraints with the
      // curvature error observed at x + d.
      QpSubproblem soc = make_qp(problem, H, x, val, der);
      soc.eq_res = trial.c_eq - der.J_eq * d;
      soc.ineq_res = trial.c_in - der.J_in * d;
      const QpStep corrected = qp_step(soc);
      if (corrected.status != QpStatus::Infeasible) {
        const VectorXd xs = settled(x + corrected.d);
        const double phi_soc = phi_at(xs);
        if (std::isfinite(phi_soc) && phi_soc <= phi0 + settings.armijo * slope) {
          x_new = xs;
          accepted = true;
        }
      }
    }
    if (!accepted) {
      auto phi = [&](double a) { return phi_at(settled(x + a * d)); };
      const auto sr = backtrack(phi, phi0, slope, settings.backtrack_ratio, settings);
      if (!sr.success) {
        result.status = SqpStatus::LineSearchFailure;
        break;
      }
      alpha = sr.alpha;
      x_new = settled(x + alpha * d);
    }

    Evaluator::Values val_new;
    Evaluator::Derivatives der_new;
    try {
      val_new = ev.values(x_new);
      der_new = ev.derivatives(x_new);
    } catch (const NonFinite&) {
      result.status = SqpStatus::NumericalBreakdown;
      break;
    }

    const VectorXd s = x_new - x;
    const VectorXd y = lagrangian_gradient(der_new, mu_eq, mu_in) - lagrangian_gradient(der, mu_eq, mu_in);
    if (!problem.hessian && !hessian_scaled) {
      const double sy = s.dot(y);
      if (sy > 0.0) {
        H = MatrixXd::Identity(problem.n, problem.n) * (y.squaredNorm() / sy);
        hessian_scaled = true;
      }
    }
    if (!problem.hessian) H = bfgs_update(H, s, y);
    if (problem.hessian) {
      if (alpha < 0.5) {
        const double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
        regularization = std::max(4.0 * regularization, 1e-4 * scale);
      } else {
        regularization = regularization > 1e-10 ? 0.25 * regularization : 0.0;
      }
    }

    x = x_new;
    val = std::move(val_new);
    der = std::move(der_new);
    if (settings.record_trace)
      result.trace.push_back({k + 1, val.f, std::max(violation_inf_of(val), bound_violation(problem, x)), alpha,
                              penalty, phi0, val.f + penalty * full_violation(val, x), false});
  }

  // Never hand back something worse than the start under the final merit.
  const double phi_end = val.f + penalty * full_violation(val, x);
  const double phi_begin = val_start.f + penalty * full_violation(val_start, x_start);
  if (result.status != SqpStatus::Converged && phi_begin < phi_end) {
    x = x_start;
    val = val_start;
    der = ev.derivatives(x);
  }

  result.x = x;
  result.objective = val.f;
  result.violation = std::max(violation_inf_of(val), bound_violation(problem, x));
  result.kkt_residual = kkt_from(problem, x, der.grad, der.J_eq, der.J_in, val.c_in, mu_eq, mu_in);
  result.eq_multipliers = mu_eq;
  result.ineq_multipliers = mu_in;
  result.penalty = penalty;
  result.numeric_derivatives = ev.numeric;
  return result;
}

}  // namespace tjplan::sqp
