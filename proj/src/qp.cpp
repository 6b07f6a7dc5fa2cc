#include <algorithm>
#include <cmath>
#include <limits>

#include "tjplan/errors.hpp"
#include "tjplan/sqp.hpp"

namespace tjplan::sqp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Weight on the artificial violation variable in phase one.
constexpr double kPhaseOneWeight = 1e6;

struct ActiveSetResult {
  VectorXd z;
  std::vector<Eigen::Index> working;
  VectorXd working_multipliers;
  int iterations = 0;
  bool optimal = false;
};

/// Primal active-set method for min 1/2 z'Gz + c'z s.t. A z >= b, started
/// from a feasible z. Constraints enter the working set one at a time
/// through the ratio test and leave by most negative multiplier.
ActiveSetResult primal_active_set(const MatrixXd& G, const VectorXd& c, const MatrixXd& A,
                                  const VectorXd& b, VectorXd z, int max_iterations) {
  const Eigen::Index r = G.rows();
  const Eigen::Index m = A.rows();
  Eigen::LLT<MatrixXd> llt(G);
  if (llt.info() != Eigen::Success) throw NumericalBreakdown("QP Hessian is not positive definite");

  VectorXd row_norm(m);
  for (Eigen::Index i = 0; i < m; ++i) row_norm(i) = A.row(i).norm();
  std::vector<char> in_working(static_cast<std::size_t>(m), 0);

  ActiveSetResult res;
  res.working.reserve(static_cast<std::size_t>(r));
  VectorXd lambda;
  // Bland's smallest-index rule while steps stay degenerate, against cycling.
  int degenerate_steps = 0;
  bool bland = false;
  for (int it = 0; it < max_iterations; ++it) {
    res.iterations = it + 1;
    const VectorXd grad = G * z + c;
    const auto w = static_cast<Eigen::Index>(res.working.size());
    const VectorXd u = llt.solve(grad);
    VectorXd p;
    if (w == 0) {
      p = -u;
      lambda.resize(0);
    } else {
      // Null-space step from a QR of the working rows: p is exactly zero on
      // a full working set and rows dependent on it never look blocking.
      MatrixXd AWt(r, w);
      for (Eigen::Index j = 0; j < w; ++j) AWt.col(j) = A.row(res.working[static_cast<std::size_t>(j)]).transpose();
      const Eigen::HouseholderQR<MatrixXd> qr(AWt);
      const MatrixXd Q = qr.householderQ();
      const VectorXd Qg = Q.transpose() * grad;
      if (w < r) {
        const auto Zw = Q.rightCols(r - w);
        const MatrixXd Gz = Zw.transpose() * G * Zw;
        p = -(Zw * Gz.llt().solve(Qg.tail(r - w)));
      } else {
        p = VectorXd::Zero(r);
      }
      const MatrixXd R = qr.matrixQR().topRows(w).triangularView<Eigen::Upper>();
      lambda = R.triangularView<Eigen::Upper>().solve(Qg.head(w));
    }

    const double pnorm = p.lpNorm<Eigen::Infinity>();
    // p is a difference of terms as large as u, so judge it against both.
    const double p_floor = 1e-13 * (1.0 + z.lpNorm<Eigen::Infinity>()) + 1e-12 * u.lpNorm<Eigen::Infinity>();
    if (pnorm <= p_floor) {
      // Stationary on the working set: check multiplier signs.
      Eigen::Index drop = -1;
      double most_negative = 0.0;
      const double scale = w > 0 ? std::max(1.0, lambda.lpNorm<Eigen::Infinity>()) : 1.0;
      for (Eigen::Index j = 0; j < w; ++j) {
        if (lambda(j) >= -1e-11 * scale) continue;
        if (bland) {
          // smallest row index among negative multipliers
          if (drop < 0 || res.working[static_cast<std::size_t>(j)] < res.working[static_cast<std::size_t>(drop)]) drop = j;
        } else if (lambda(j) < most_negative) {
          most_negative = lambda(j);
          drop = j;
        }
      }
      if (drop < 0) {
        res.optimal = true;
        break;
      }
      in_working[static_cast<std::size_t>(res.working[static_cast<std::size_t>(drop)])] = 0;
      res.working.erase(res.working.begin() + drop);
      continue;
    }

    double alpha = 1.0;
    Eigen::Index blocking = -1;
    const VectorXd Ap = A * p;
    const VectorXd Az = A * z;
    const double pn = p.norm();
    auto ratio = [&](Eigen::Index i) {
      if (in_working[static_cast<std::size_t>(i)] || !(Ap(i) < -1e-14 * row_norm(i) * pn)) return kInf;
      return std::max(0.0, Az(i) - b(i)) / -Ap(i);
    };
    for (Eigen::Index i = 0; i < m; ++i) {
      const double ai = ratio(i);
      if (ai < alpha) {
        alpha = ai;
        blocking = i;
      }
    }
    if (bland && blocking >= 0) {
      // ties go to the smallest row index
      for (Eigen::Index i = 0; i < blocking; ++i)
        if (ratio(i) <= alpha + 1e-15) {
          blocking = i;
          break;
        }
    }
    degenerate_steps = (blocking >= 0 && alpha * pn <= 1e-14 * (1.0 + z.lpNorm<Eigen::Infinity>()))
                           ? degenerate_steps + 1
                           : 0;
    bland = degenerate_steps > 3;
    z += alpha * p;
    if (blocking >= 0) {
      res.working.push_back(blocking);
      in_working[static_cast<std::size_t>(blocking)] = 1;
    }
  }
  res.z = std::move(z);
  if (res.optimal) {
    res.working_multipliers = lambda;
  } else {
    res.working_multipliers = VectorXd::Zero(static_cast<Eigen::Index>(res.working.size()));
  }
  return res;
}

/// Adds the smallest tried multiple of I that makes G factorizable; returns it.
double positive_definite_shift(MatrixXd& G) {
  Eigen::LLT<MatrixXd> llt(G);
  if (llt.info() == Eigen::Success) return 0.0;
  const double scale = std::max(1.0, G.diagonal().cwiseAbs().maxCoeff());
  double shift = 1e-8 * scale;
  // Start near the most negative eigenvalue instead of creeping up to it.
  const double low = Eigen::SelfAdjointEigenSolver<MatrixXd>(G, Eigen::EigenvaluesOnly).eigenvalues()(0);
  if (low < 0.0) shift = std::max(shift, -1.1 * low + 1e-8 * scale);
  for (int attempt = 0; attempt < 60; ++attempt, shift *= 4.0) {
    MatrixXd trial = G;
    trial.diagonal().array() += shift;
    if (Eigen::LLT<MatrixXd>(trial).info() == Eigen::Success) {
      G = trial;
      return shift;
    }
  }
  throw NumericalBreakdown("reduced Hessian could not be made positive definite");
}

struct PhaseOneResult {
  VectorXd z;
  double violation = 0.0;
};

/// min 1/2|z|^2 + 1/2 t^2 + W t  s.t.  A z + t >= b, t >= 0, from z = 0.
PhaseOneResult phase_one(const MatrixXd& A, const VectorXd& b, int max_iterations) {
  const Eigen::Index r = A.cols();
  const Eigen::Index m = A.rows();
  PhaseOneResult out;
  out.z = VectorXd::Zero(r);
  const double t0 = m > 0 ? std::max(0.0, b.maxCoeff()) : 0.0;
  out.violation = t0;
  if (t0 == 0.0) return out;

  MatrixXd A1 = MatrixXd::Zero(m + 1, r + 1);
  A1.topLeftCorner(m, r) = A;
  A1.col(r).setOnes();
  VectorXd b1(m + 1);
  b1.head(m) = b;
  b1(m) = 0.0;
  const MatrixXd G1 = MatrixXd::Identity(r + 1, r + 1);
  VectorXd c1 = VectorXd::Zero(r + 1);
  c1(r) = kPhaseOneWeight;
  VectorXd start = VectorXd::Zero(r + 1);
  start(r) = t0;
  auto res = primal_active_set(G1, c1, A1, b1, start, max_iterations);
  out.z = res.z.head(r);
  // The large weight costs a few digits; polish near-feasible points with
  // minimum-norm corrections onto the violated rows.
  const double near = 1e-6 * (1.0 + b.lpNorm<Eigen::Infinity>());
  for (int pass = 0; pass < 3; ++pass) {
    const VectorXd slack = A * out.z - b;
    if (-slack.minCoeff() > near) break;
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < m; ++i)
      if (slack(i) < 0.0) rows.push_back(i);
    if (rows.empty()) break;
    MatrixXd AV(static_cast<Eigen::Index>(rows.size()), r);
    VectorXd gap(AV.rows());
    for (Eigen::Index j = 0; j < AV.rows(); ++j) {
      AV.row(j) = A.row(rows[static_cast<std::size_t>(j)]);
      gap(j) = -slack(rows[static_cast<std::size_t>(j)]);
    }
    out.z += AV.completeOrthogonalDecomposition().solve(gap);
  }
  out.violation = m > 0 ? std::max(0.0, (b - A * out.z).maxCoeff()) : 0.0;
  return out;
}

}  // namespace

QpStep qp_step(const QpSubproblem& qp) {
  const Eigen::Index n = qp.g.size();
  if (qp.H.rows() != n || qp.H.cols() != n) throw ParameterError("QP Hessian has wrong shape");
  const Eigen::Index p = qp.eq_jac.rows();
  const Eigen::Index mi = qp.ineq_jac.rows();
  if ((p > 0 && qp.eq_jac.cols() != n) || qp.eq_res.size() != p)
    throw ParameterError("QP equality block has wrong shape");
  if ((mi > 0 && qp.ineq_jac.cols() != n) || qp.ineq_res.size() != mi)
    throw ParameterError("QP inequality block has wrong shape");
  const bool has_lower = qp.lower.size() == n;
  const bool has_upper = qp.upper.size() == n;

  // Gather inequality rows: A d >= rhs.
  std::vector<Eigen::Index> lower_rows;
  std::vector<Eigen::Index> upper_rows;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (has_lower && qp.lower(j) > -kInf) lower_rows.push_back(j);
    if (has_upper && qp.upper(j) < kInf) upper_rows.push_back(j);
  }
  const Eigen::Index m = mi + static_cast<Eigen::Index>(lower_rows.size() + upper_rows.size());
  MatrixXd A(m, n);
  VectorXd rhs(m);
  if (mi > 0) {
    A.topRows(mi) = qp.ineq_jac;
    rhs.head(mi) = -qp.ineq_res;
  }
  Eigen::Index row = mi;
  for (Eigen::Index j : lower_rows) {
    A.row(row).setZero();
    A(row, j) = 1.0;
    rhs(row++) = qp.lower(j);
  }
  for (Eigen::Index j : upper_rows) {
    A.row(row).setZero();
    A(row, j) = -1.0;
    rhs(row++) = -qp.upper(j);
  }

  // Equality elimination: d = d_p + Z z.
  VectorXd d_p = VectorXd::Zero(n);
  MatrixXd Z;
  bool eq_consistent = true;
  Eigen::ColPivHouseholderQR<MatrixXd> qr;
  if (p > 0) {
    qr.compute(qp.eq_jac.transpose());
    const Eigen::Index rank = qr.rank();
    const MatrixXd Q = qr.householderQ();
    Z = Q.rightCols(n - rank);
    const VectorXd pb = qr.colsPermutation().transpose() * (-qp.eq_res);
    const MatrixXd R11 = qr.matrixR().topLeftCorner(rank, rank).triangularView<Eigen::Upper>();
    const VectorXd y = R11.transpose().triangularView<Eigen::Lower>().solve(pb.head(rank));
    d_p = Q.leftCols(rank) * y;
    const double res = (qp.eq_jac * d_p + qp.eq_res).lpNorm<Eigen::Infinity>();
    const double scale = 1.0 + qp.eq_res.lpNorm<Eigen::Infinity>();
    eq_consistent = res <= 1e-9 * scale;
  } else {
    Z = MatrixXd::Identity(n, n);
  }
  const Eigen::Index r = Z.cols();

  const MatrixXd Ar_all = A * Z;
  const VectorXd br_all = rhs - A * d_p;
  // Rows that vanish on the null space are constants: they either hold or
  // make the QP infeasible, and keeping them only breeds degeneracy.
  std::vector<Eigen::Index> keep;
  bool constant_violated = false;
  const double const_tol = 1e-9 * (1.0 + (m > 0 ? br_all.lpNorm<Eigen::Infinity>() : 0.0));
  for (Eigen::Index i = 0; i < m; ++i) {
    if (Ar_all.row(i).norm() > 1e-10 * (1.0 + A.row(i).norm())) {
      keep.push_back(i);
    } else if (br_all(i) > const_tol) {
      constant_violated = true;
    }
  }
  const auto mk = static_cast<Eigen::Index>(keep.size());
  MatrixXd Ar(mk, r);
  VectorXd br(mk);
  for (Eigen::Index i = 0; i < mk; ++i) {
    Ar.row(i) = Ar_all.row(keep[static_cast<std::size_t>(i)]);
    br(i) = br_all(keep[static_cast<std::size_t>(i)]);
  }
  const int max_iterations = static_cast<int>(10 * (m + r) + 100);

  QpStep out;
  out.ineq_multipliers = VectorXd::Zero(mi);
  out.lower_multipliers = VectorXd::Zero(n);
  out.upper_multipliers = VectorXd::Zero(n);
  out.eq_multipliers = VectorXd::Zero(p);

  PhaseOneResult start = phase_one(Ar, br, max_iterations);
  const double feas_tol = 1e-9 * (1.0 + (mk > 0 ? br.lpNorm<Eigen::Infinity>() : 0.0));
  if (!eq_consistent || constant_violated || start.violation > feas_tol) {
    out.status = QpStatus::Infeasible;
    out.restoration_step = d_p + Z * start.z;
    out.d = out.restoration_step;
    return out;
  }

  VectorXd z = start.z;
  VectorXd lambda_rows = VectorXd::Zero(m);
  if (r > 0) {
    MatrixXd G = Z.transpose() * qp.H * Z;
    G = 0.5 * (G + G.transpose());
    out.hessian_shift = positive_definite_shift(G);
    const VectorXd c = Z.transpose() * (qp.g + qp.H * d_p);
    auto as = primal_active_set(G, c, Ar, br, z, max_iterations);
    out.iterations = as.iterations;
    if (!as.optimal) out.status = QpStatus::IterationLimit;
    z = as.z;
    for (std::size_t j = 0; j < as.working.size(); ++j)
      lambda_rows(keep[static_cast<std::size_t>(as.working[j])]) =
          as.working_multipliers(static_cast<Eigen::Index>(j));
  }
  out.d = d_p + Z * z;

  if (mi > 0) out.ineq_multipliers = lambda_rows.head(mi);
  row = mi;
  for (Eigen::Index j : lower_rows) out.lower_multipliers(j) = lambda_rows(row++);
  for (Eigen::Index j : upper_rows) out.upper_multipliers(j) = lambda_rows(row++);

  if (p > 0) {
    // H d + g = J_eq' mu + A' lambda
    VectorXd resid = qp.H * out.d + qp.g;
    if (m > 0) resid -= A.transpose() * lambda_rows;
    out.eq_multipliers = qr.solve(resid);
  }
  return out;
}

MatrixXd bfgs_update(const MatrixXd& H, const VectorXd& s, const VectorXd& y) {
  const VectorXd Hs = H * s;
  const double sHs = s.dot(Hs);
  if (!(s.norm() > 0.0) || !(sHs > 0.0) || !std::isfinite(sHs)) return H;
  const double sy = s.dot(y);
  VectorXd r = y;
  if (sy < 0.2 * sHs) {
    const double theta = 0.8 * sHs / (sHs - sy);
    r = theta * y + (1.0 - theta) * Hs;
  }
  const double sr = s.dot(r);
  if (!(sr > 0.0)) return H;
  MatrixXd out = H - (Hs * Hs.transpose()) / sHs + (r * r.transpose()) / sr;
  return 0.5 * (out + out.transpose());
}

}  // namespace tjplan::sqp
