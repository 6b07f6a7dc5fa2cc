#pragma once

// NLP test problems with independently known optima, and a brute-force
// active-set enumeration oracle for small convex QPs.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "tjplan/sqp.hpp"

namespace problems {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using tjplan::sqp::NlpProblem;

struct TestProblem {
  std::string name;
  NlpProblem nlp;
  VectorXd x0;
  double f_star = 0.0;
  VectorXd x_star;  ///< empty when only the optimal value is known
};

/// Convex QP data: min 1/2 x'Hx + g'x s.t. E x = e, A x >= b.
struct ConvexQp {
  MatrixXd H;
  VectorXd g;
  MatrixXd E;
  VectorXd e;
  MatrixXd A;
  VectorXd b;
};

struct QpSolution {
  VectorXd x;
  double objective = std::numeric_limits<double>::infinity();
  bool found = false;
};

/// Tries every subset of inequalities as the active set and keeps the
/// KKT-consistent candidate with the lowest objective.
inline QpSolution enumerate_qp(const ConvexQp& qp) {
  const Eigen::Index n = qp.H.rows();
  const Eigen::Index p = qp.E.rows();
  const Eigen::Index m = qp.A.rows();
  QpSolution best;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<Eigen::Index> act;
    for (Eigen::Index i = 0; i < m; ++i)
      if (mask & (1u << i)) act.push_back(i);
    const auto a = static_cast<Eigen::Index>(act.size());
    const Eigen::Index dim = n + p + a;
    MatrixXd K = MatrixXd::Zero(dim, dim);
    VectorXd rhs = VectorXd::Zero(dim);
    K.topLeftCorner(n, n) = qp.H;
    rhs.head(n) = -qp.g;
    if (p > 0) {
      K.block(0, n, n, p) = -qp.E.transpose();
      K.block(n, 0, p, n) = qp.E;
      rhs.segment(n, p) = qp.e;
    }
    for (Eigen::Index j = 0; j < a; ++j) {
      K.block(0, n + p + j, n, 1) = -qp.A.row(act[j]).transpose();
      K.block(n + p + j, 0, 1, n) = qp.A.row(act[j]);
      rhs(n + p + j) = qp.b(act[j]);
    }
    Eigen::FullPivLU<MatrixXd> lu(K);
    if (!lu.isInvertible()) continue;
    const VectorXd sol = lu.solve(rhs);
    const VectorXd x = sol.head(n);
    if (m > 0 && ((qp.A * x - qp.b).array() < -1e-10).any()) continue;
    if (a > 0 && (sol.tail(a).array() < -1e-10).any()) continue;
    const double obj = 0.5 * x.dot(qp.H * x) + qp.g.dot(x);
    if (obj < best.objective) {
      best.objective = obj;
      best.x = x;
      best.found = true;
    }
  }
  return best;
}

inline double unif(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Random strictly convex QP whose feasible set contains a known point.
inline ConvexQp random_qp(std::mt19937_64& rng, Eigen::Index n, Eigen::Index p, Eigen::Index m) {
  ConvexQp qp;
  MatrixXd B(n, n);
  for (Eigen::Index i = 0; i < B.size(); ++i) B(i) = unif(rng, -1.0, 1.0);
  qp.H = B.transpose() * B + 0.5 * MatrixXd::Identity(n, n);
  qp.g.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) qp.g(i) = unif(rng, -3.0, 3.0);
  VectorXd xf(n);
  for (Eigen::Index i = 0; i < n; ++i) xf(i) = unif(rng, -1.0, 1.0);
  qp.E.resize(p, n);
  for (Eigen::Index i = 0; i < qp.E.size(); ++i) qp.E(i) = unif(rng, -1.0, 1.0);
  qp.e = qp.E * xf;
  qp.A.resize(m, n);
  for (Eigen::Index i = 0; i < qp.A.size(); ++i) qp.A(i) = unif(rng, -1.0, 1.0);
  qp.b.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) qp.b(i) = qp.A.row(i).dot(xf) - unif(rng, 0.0, 0.5);
  return qp;
}

inline NlpProblem as_nlp(const ConvexQp& qp, bool exact_hessian) {
  NlpProblem nlp;
  nlp.n = qp.H.rows();
  nlp.n_eq = qp.E.rows();
  nlp.n_ineq = qp.A.rows();
  nlp.objective = [qp](const VectorXd& x) { return 0.5 * x.dot(qp.H * x) + qp.g.dot(x); };
  nlp.gradient = [qp](const VectorXd& x) -> VectorXd { return qp.H * x + qp.g; };
  nlp.eq_constraints = [qp](const VectorXd& x) -> VectorXd { return qp.E * x - qp.e; };
  nlp.eq_jacobian = [qp](const VectorXd&) -> MatrixXd { return qp.E; };
  nlp.ineq_constraints = [qp](const VectorXd& x) -> VectorXd { return qp.A * x - qp.b; };
  nlp.ineq_jacobian = [qp](const VectorXd&) -> MatrixXd { return qp.A; };
  if (exact_hessian) nlp.hessian = [qp](const VectorXd&, const VectorXd&, const VectorXd&) { return qp.H; };
  return nlp;
}

inline double rosenbrock(double x, double y) { return (1 - x) * (1 - x) + 100 * (y - x * x) * (y - x * x); }

/// Grid search over the disk x^2 + y^2 <= r2, refined around the incumbent.
inline VectorXd rosenbrock_disk_oracle(double r2) {
  const double r = std::sqrt(r2);
  double bx = 0.0;
  double by = 0.0;
  double best = rosenbrock(bx, by);
  double half = r;
  for (int level = 0; level < 40; ++level) {
    const int n = 200;
    const double cx = bx;
    const double cy = by;
    for (int i = 0; i <= n; ++i) {
      for (int j = 0; j <= n; ++j) {
        const double x = cx - half + 2.0 * half * i / n;
        const double y = cy - half + 2.0 * half * j / n;
        if (x * x + y * y > r2) continue;
        const double f = rosenbrock(x, y);
        if (f < best) {
          best = f;
          bx = x;
          by = y;
        }
      }
    }
    half *= 0.1;
  }
  VectorXd out(2);
  out << bx, by;
  return out;
}

inline TestProblem shifted_parabola() {
  TestProblem t;
  t.name = "parabola";
  t.nlp.n = 1;
  t.nlp.objective = [](const VectorXd& x) { return (x(0) - 3) * (x(0) - 3); };
  t.nlp.gradient = [](const VectorXd& x) { return VectorXd::Constant(1, 2 * (x(0) - 3)); };
  t.x0 = VectorXd::Zero(1);
  t.f_star = 0.0;
  t.x_star = VectorXd::Constant(1, 3.0);
  return t;
}

inline TestProblem circle_line() {
  TestProblem t;
  t.name = "sum-of-squares on a line";
  t.nlp.n = 2;
  t.nlp.n_eq = 1;
  t.nlp.objective = [](const VectorXd& x) { return x.squaredNorm(); };
  t.nlp.gradient = [](const VectorXd& x) -> VectorXd { return 2 * x; };
  t.nlp.eq_constraints = [](const VectorXd& x) { return VectorXd::Constant(1, x(0) + x(1) - 1); };
  t.nlp.eq_jacobian = [](const VectorXd&) { return MatrixXd::Ones(1, 2); };
  t.x0 = VectorXd::Zero(2);
  t.f_star = 0.5;
  t.x_star = VectorXd::Constant(2, 0.5);
  return t;
}

inline TestProblem rosenbrock_disk() {
  TestProblem t;
  t.name = "rosenbrock on a disk";
  t.nlp.n = 2;
  t.nlp.n_ineq = 1;
  t.nlp.objective = [](const VectorXd& x) { return rosenbrock(x(0), x(1)); };
  t.nlp.gradient = [](const VectorXd& x) {
    VectorXd g(2);
    g(0) = -2 * (1 - x(0)) - 400 * x(0) * (x(1) - x(0) * x(0));
    g(1) = 200 * (x(1) - x(0) * x(0));
    return g;
  };
  t.nlp.ineq_constraints = [](const VectorXd& x) { return VectorXd::Constant(1, 1.5 - x.squaredNorm()); };
  t.nlp.ineq_jacobian = [](const VectorXd& x) -> MatrixXd { return -2 * x.transpose(); };
  t.x0 = VectorXd::Zero(2);
  t.x_star = rosenbrock_disk_oracle(1.5);
  t.f_star = rosenbrock(t.x_star(0), t.x_star(1));
  return t;
}

/// Hock-Schittkowski 71 with its published optimum.
inline TestProblem hs071() {
  TestProblem t;
  t.name = "hs071";
  t.nlp.n = 4;
  t.nlp.n_eq = 1;
  t.nlp.n_ineq = 1;
  t.nlp.objective = [](const VectorXd& x) { return x(0) * x(3) * (x(0) + x(1) + x(2)) + x(2); };
  t.nlp.gradient = [](const VectorXd& x) {
    VectorXd g(4);
    g << x(3) * (2 * x(0) + x(1) + x(2)), x(0) * x(3), x(0) * x(3) + 1, x(0) * (x(0) + x(1) + x(2));
    return g;
  };
  t.nlp.eq_constraints = [](const VectorXd& x) { return VectorXd::Constant(1, x.squaredNorm() - 40); };
  t.nlp.eq_jacobian = [](const VectorXd& x) -> MatrixXd { return 2 * x.transpose(); };
  t.nlp.ineq_constraints = [](const VectorXd& x) { return VectorXd::Constant(1, x.prod() - 25); };
  t.nlp.ineq_jacobian = [](const VectorXd& x) {
    MatrixXd J(1, 4);
    J << x(1) * x(2) * x(3), x(0) * x(2) * x(3), x(0) * x(1) * x(3), x(0) * x(1) * x(2);
    return J;
  };
  t.nlp.lower = VectorXd::Constant(4, 1.0);
  t.nlp.upper = VectorXd::Constant(4, 5.0);
  t.x0.resize(4);
  t.x0 << 1, 5, 5, 1;
  t.f_star = 17.0140172891563;
  t.x_star.resize(4);
  t.x_star << 1.0, 4.74299963, 3.82114998, 1.37940829;
  return t;
}

/// Parabola-constrained projection whose optimum solves a quadratic by hand:
/// min (x-2)^2 + (y-1)^2 s.t. x - 2y + 1 = 0, 1 - x^2/4 - y^2 >= 0.
inline TestProblem ellipse_projection() {
  TestProblem t;
  t.name = "ellipse projection";
  t.nlp.n = 2;
  t.nlp.n_eq = 1;
  t.nlp.n_ineq = 1;
  t.nlp.objective = [](const VectorXd& x) { return (x(0) - 2) * (x(0) - 2) + (x(1) - 1) * (x(1) - 1); };
  t.nlp.gradient = [](const VectorXd& x) {
    VectorXd g(2);
    g << 2 * (x(0) - 2), 2 * (x(1) - 1);
    return g;
  };
  t.nlp.eq_constraints = [](const VectorXd& x) { return VectorXd::Constant(1, x(0) - 2 * x(1) + 1); };
  t.nlp.eq_jacobian = [](const VectorXd&) {
    MatrixXd J(1, 2);
    J << 1, -2;
    return J;
  };
  t.nlp.ineq_constraints = [](const VectorXd& x) {
    return VectorXd::Constant(1, 1 - x(0) * x(0) / 4 - x(1) * x(1));
  };
  t.nlp.ineq_jacobian = [](const VectorXd& x) {
    MatrixXd J(1, 2);
    J << -x(0) / 2, -2 * x(1);
    return J;
  };
  t.x0 = VectorXd::Constant(2, 2.0);
  // On the line x = 2y - 1 the ellipse is active: 2y^2 - y - 3/4 = 0 (after
  // substitution), positive root y = (1 + sqrt 7) / 4.
  const double y = (1 + std::sqrt(7.0)) / 4;
  t.x_star.resize(2);
  t.x_star << 2 * y - 1, y;
  t.f_star = (t.x_star(0) - 2) * (t.x_star(0) - 2) + (t.x_star(1) - 1) * (t.x_star(1) - 1);
  return t;
}

/// Convex quadratic with bounds: min 9 - 8x - 6y - 4z + 2x^2 + 2y^2 + z^2 + 2xy + 2xz
/// s.t. x + y + 2z <= 3, x, y, z >= 0; optimum (4/3, 7/9, 4/9), f = 1/9.
inline TestProblem bounded_quadratic() {
  TestProblem t;
  t.name = "bounded quadratic";
  t.nlp.n = 3;
  t.nlp.n_ineq = 1;
  t.nlp.objective = [](const VectorXd& x) {
    return 9 - 8 * x(0) - 6 * x(1) - 4 * x(2) + 2 * x(0) * x(0) + 2 * x(1) * x(1) + x(2) * x(2) +
           2 * x(0) * x(1) + 2 * x(0) * x(2);
  };
  t.nlp.gradient = [](const VectorXd& x) {
    VectorXd g(3);
    g << -8 + 4 * x(0) + 2 * x(1) + 2 * x(2), -6 + 4 * x(1) + 2 * x(0), -4 + 2 * x(2) + 2 * x(0);
    return g;
  };
  t.nlp.ineq_constraints = [](const VectorXd& x) { return VectorXd::Constant(1, 3 - x(0) - x(1) - 2 * x(2)); };
  t.nlp.ineq_jacobian = [](const VectorXd&) {
    MatrixXd J(1, 3);
    J << -1, -1, -2;
    return J;
  };
  t.nlp.lower = VectorXd::Zero(3);
  t.nlp.upper = VectorXd::Constant(3, std::numeric_limits<double>::infinity());
  t.x0 = VectorXd::Constant(3, 0.5);
  t.x_star.resize(3);
  t.x_star << 4.0 / 3, 7.0 / 9, 4.0 / 9;
  t.f_star = 1.0 / 9;
  return t;
}

inline std::vector<TestProblem> classic_problems() {
  return {shifted_parabola(), circle_line(), rosenbrock_disk(), hs071(), ellipse_projection(), bounded_quadratic()};
}

}  // namespace problems
