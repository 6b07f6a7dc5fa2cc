#include "tjplan/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <utility>
#include <vector>

#include "tjplan/errors.hpp"
#include "tjplan/json_io.hpp"

namespace tjplan {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Local knot window knot[span-4 .. span+5] as dual directions.
constexpr int kLocal = 10;
using D = Dual<kLocal>;
using DualBasis = std::array<std::array<D, kOrder>, kOrder>;

// Keeps sqrt differentiable for joints that do not move.
constexpr double kJerkSmoothing = 1e-12;

std::size_t first_span() { return kDegree; }

/// Index of the span holding waypoint i (the last waypoint closes the last span).
GridPoint waypoint_point(Index i, Index waypoints) {
  if (i + 1 < waypoints) return {first_span() + static_cast<std::size_t>(i), 0.0};
  return {first_span() + static_cast<std::size_t>(waypoints - 2), 1.0};
}

std::vector<double> knot_values(const VectorXd& durations) {
  std::vector<double> d(durations.data(), durations.data() + durations.size());
  const auto kv = KnotVector::from_durations(d);
  return {kv.values().begin(), kv.values().end()};
}

using D2 = Dual2<kLocal>;
using Dual2Basis = std::array<std::array<D2, kOrder>, kOrder>;
using LocalMatrix = Eigen::Matrix<double, kLocal, kLocal>;
using LocalCols = Eigen::Matrix<double, kLocal, kOrder>;

/// Basis derivatives at a grid point, differentiated w.r.t. the local knots.
template <typename S>
void dual_basis(const std::vector<double>& knots, const GridPoint& g, int max_order,
                std::array<std::array<S, kOrder>, kOrder>& ders) {
  std::array<S, kLocal> kd;
  const std::size_t base = g.span - 4;
  for (int l = 0; l < kLocal; ++l) kd[static_cast<std::size_t>(l)] = S::variable(knots[base + static_cast<std::size_t>(l)], l);
  const S t = kd[4] * S(1.0 - g.xi) + kd[5] * S(g.xi);
  basis_derivatives(g.span, t, [&](std::size_t q) { return kd[q - base]; }, max_order, ders);
}

void add_hessian(LocalMatrix& W, const D2& v, double scale) {
  for (int i = 0; i < kLocal; ++i)
    for (int j = 0; j < kLocal; ++j) W(i, j) += scale * v.hess(i, j);
}

/// Real roots of sum_m c[m] xi^m with a sign change inside (a, b), ascending.
/// Roots of the derivative split the interval into monotone pieces, each
/// bisected; even-multiplicity roots are skipped (no extremum there).
std::vector<double> roots_in(const std::vector<double>& c, double a, double b) {
  std::size_t d = c.size() - 1;
  while (d > 0 && c[d] == 0.0) --d;
  std::vector<double> out;
  if (d == 0) return out;
  if (d == 1) {
    const double r = -c[0] / c[1];
    if (r > a && r < b) out.push_back(r);
    return out;
  }
  std::vector<double> dc(d);
  for (std::size_t m = 1; m <= d; ++m) dc[m - 1] = static_cast<double>(m) * c[m];
  auto p = [&](double x) {
    double s = c[d];
    for (std::size_t m = d; m-- > 0;) s = s * x + c[m];
    return s;
  };
  std::vector<double> pts{a};
  for (double r : roots_in(dc, a, b)) pts.push_back(r);
  pts.push_back(b);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    double lo = pts[i];
    double hi = pts[i + 1];
    const double flo = p(lo);
    const double fhi = p(hi);
    if (flo == 0.0 || fhi == 0.0 || (flo < 0.0) == (fhi < 0.0)) continue;
    for (int it = 0; it < 80 && hi - lo > 4e-16 * (1.0 + std::abs(lo)); ++it) {
      const double mid = 0.5 * (lo + hi);
      const double fm = p(mid);
      ((fm < 0.0) == (flo < 0.0) ? lo : hi) = mid;
    }
    out.push_back(0.5 * (lo + hi));
  }
  return out;
}

double horner(const std::array<double, kOrder>& c, int degree, double x) {
  double s = c[static_cast<std::size_t>(degree)];
  for (int m = degree; m-- > 0;) s = s * x + c[static_cast<std::size_t>(m)];
  return s;
}

/// Shared evaluation of objective, constraints and their derivatives.
///
/// Kinematic rows bound the extreme value of each derivative over every
/// sub-interval between consecutive collocation nodes, not just the node
/// values: the extremum is found from the real roots of the next
/// derivative, and its sensitivity follows the envelope theorem. So the
/// limits hold in continuous time and the NLP does not depend on history.
class TrajectoryNlp {
 public:
  TrajectoryNlp(const PlanRequest& req, const NlpOptions& opt)
      : path_(req.path), lambda_(req.lambda), I_(req.path.size()), K_(req.path.joints()), M_(I_ + 4) {
    n_ = (I_ - 1) + K_ * M_;
    const auto nodes = collocation_grid(I_, opt.density);
    for (std::size_t s = 0; s + 1 < nodes.size(); ++s) {
      const double b = nodes[s + 1].span == nodes[s].span ? nodes[s + 1].xi : 1.0;
      intervals_.push_back({nodes[s].span, nodes[s].xi, b});
    }
    S_ = static_cast<Index>(intervals_.size());
    bounds_.resize(K_, 4);
    for (Index k = 0; k < K_; ++k) {
      for (int r = 0; r < 4; ++r) bounds_(k, r) = opt.margin * req.limits.bound(k, r);
      // A waypoint inside the margin band keeps its own magnitude as the bound.
      bounds_(k, 0) = std::max(bounds_(k, 0), req.path.waypoints.col(k).cwiseAbs().maxCoeff());
    }
    gauss_ = gauss_legendre_unit(3);
  }

  [[nodiscard]] Index n() const { return n_; }
  [[nodiscard]] Index n_eq() const { return K_ * (I_ + 4); }
  [[nodiscard]] Index n_ineq() const { return 8 * K_ * S_; }

  struct Cache {
    VectorXd x;
    bool jacobians = false;
    double f = 0.0;
    VectorXd grad;
    VectorXd c_eq;
    MatrixXd J_eq;
    VectorXd c_in;
    MatrixXd J_in;
    std::vector<double> xi_star;  ///< where each kinematic row's extremum sits
  };

  const Cache& at(const VectorXd& x, bool jacobians) {
    if (cache_.x.size() == x.size() && cache_.x == x && (cache_.jacobians || !jacobians)) return cache_;
    evaluate(x, jacobians);
    return cache_;
  }

  /// Hessian of f - mu_eq'c_eq - mu_in'c_in. Constraint values are linear in
  /// the control points, so their curvature sits in the duration rows and the
  /// duration/control coupling; only rows with a multiplier are visited.
  MatrixXd hessian(const VectorXd& x, const VectorXd& mu_eq, const VectorXd& mu_in) {
    if (x.size() != n_ || mu_eq.size() != n_eq() || mu_in.size() != n_ineq())
      throw ParameterError("hessian arguments have wrong length");
    const Index nh = I_ - 1;
    const std::vector<double> xi_star = at(x, false).xi_star;
    const auto knots = knot_values(x.head(nh));
    auto c = [&](Index joint, Index j) { return x(col(joint, j)); };
    MatrixXd H = MatrixXd::Zero(n_, n_);

    // Per-span accumulators for the knot curvature and the knot/control coupling.
    std::vector<LocalMatrix> W(static_cast<std::size_t>(nh), LocalMatrix::Zero());
    std::vector<LocalCols> X(static_cast<std::size_t>(nh * K_), LocalCols::Zero());
    auto span_of = [](std::size_t span) { return static_cast<std::size_t>(span - first_span()); };
    Dual2Basis ders;
    // Adds w * d2 value_r(k) at gp, given ders at gp.
    auto add_value = [&](const GridPoint& gp, Index k, int r, double w) {
      const Index first = static_cast<Index>(gp.span) - kDegree;
      const std::size_t i = span_of(gp.span);
      for (int j = 0; j < kOrder; ++j) {
        const D2& N = ders[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)];
        add_hessian(W[i], N, w * c(k, first + j));
        for (int l = 0; l < kLocal; ++l) X[i * static_cast<std::size_t>(K_) + static_cast<std::size_t>(k)](l, j) += w * N.g[static_cast<std::size_t>(l)];
      }
    };

    // Equalities sit at waypoints: weight -mu on each value.
    for (Index i = 0; i < I_; ++i) {
      const GridPoint gp = waypoint_point(i, I_);
      dual_basis(knots, gp, 2, ders);
      for (Index k = 0; k < K_; ++k) {
        if (const double m = mu_eq(k * I_ + i); m != 0.0) add_value(gp, k, 0, -m);
        const Index row = K_ * I_ + 4 * k;
        if (i == 0) {
          if (mu_eq(row) != 0.0) add_value(gp, k, 1, -mu_eq(row));
          if (mu_eq(row + 2) != 0.0) add_value(gp, k, 2, -mu_eq(row + 2));
        }
        if (i == I_ - 1) {
          if (mu_eq(row + 1) != 0.0) add_value(gp, k, 1, -mu_eq(row + 1));
          if (mu_eq(row + 3) != 0.0) add_value(gp, k, 2, -mu_eq(row + 3));
        }
      }
    }

    // Kinematic rows: 1 -+ value(xi*) / bound. An interior extremum moves
    // with x, which adds -g g' / value_{r+2} with g = d value_{r+1} / dx.
    for (Index k = 0; k < K_; ++k)
      for (Index s = 0; s < S_; ++s)
        for (int r = 0; r < 4; ++r)
          for (int side = 0; side < 2; ++side) {
            const Index row = 2 * ((k * S_ + s) * 4 + r) + side;
            if (mu_in(row) == 0.0) continue;
            const Interval& iv = intervals_[static_cast<std::size_t>(s)];
            const double xi = xi_star[static_cast<std::size_t>(row)];
            const GridPoint gp{iv.span, xi};
            const bool interior = xi > iv.a && xi < iv.b;
            dual_basis(knots, gp, interior ? r + 2 : r, ders);
            const double w = (side == 0 ? 1.0 : -1.0) * mu_in(row) / bounds_(k, r);
            add_value(gp, k, r, w);
            if (!interior) continue;
            const Index first = static_cast<Index>(iv.span) - kDegree;
            double curv = 0.0;
            Eigen::Matrix<double, kLocal, 1> gk = Eigen::Matrix<double, kLocal, 1>::Zero();
            Eigen::Matrix<double, kOrder, 1> gc;
            for (int j = 0; j < kOrder; ++j) {
              const D2& N1 = ders[static_cast<std::size_t>(r + 1)][static_cast<std::size_t>(j)];
              for (int l = 0; l < kLocal; ++l) gk(l) += c(k, first + j) * N1.g[static_cast<std::size_t>(l)];
              gc(j) = N1.v;
              curv += c(k, first + j) * ders[static_cast<std::size_t>(r + 2)][static_cast<std::size_t>(j)].v;
            }
            if (!(std::abs(curv) > 1e-12)) continue;
            VectorXd g = VectorXd::Zero(nh + kOrder);
            g.head(nh) = duration_map(iv.span).transpose() * gk;
            g.tail(kOrder) = gc;
            const MatrixXd outer = (-w / curv) * (g * g.transpose());
            H.topLeftCorner(nh, nh) += outer.topLeftCorner(nh, nh);
            H.block(0, col(k, first), nh, kOrder) += outer.topRightCorner(nh, kOrder);
            H.block(col(k, first), 0, kOrder, nh) += outer.bottomLeftCorner(kOrder, nh);
            H.block(col(k, first), col(k, first), kOrder, kOrder) += outer.bottomRightCorner(kOrder, kOrder);
          }
    for (Index i = 0; i < nh; ++i) {
      const std::size_t span = first_span() + static_cast<std::size_t>(i);
      scatter_durations(H, span, W[static_cast<std::size_t>(i)]);
      for (Index k = 0; k < K_; ++k) scatter_mixed(H, span, k, X[static_cast<std::size_t>(i * K_ + k)]);
    }

    // Objective. Per joint: S_k with its gradient and Hessian, then the
    // outer lambda * sqrt(S_k / T) + (1 - lambda) T.
    const double T = knots.back();
    for (Index k = 0; k < K_; ++k) {
      MatrixXd HS = MatrixXd::Zero(n_, n_);
      VectorXd gS = VectorXd::Zero(n_);
      double Sk = 0.0;
      for (Index i = 0; i < nh; ++i) {
        const std::size_t span = first_span() + static_cast<std::size_t>(i);
        const Index first = static_cast<Index>(span) - kDegree;
        LocalMatrix Wk = LocalMatrix::Zero();
        LocalCols Xk = LocalCols::Zero();
        Eigen::Matrix<double, kOrder, kOrder> C = Eigen::Matrix<double, kOrder, kOrder>::Zero();
        Eigen::Matrix<double, kLocal, 1> gl = Eigen::Matrix<double, kLocal, 1>::Zero();
        for (std::size_t q = 0; q < gauss_.nodes.size(); ++q) {
          dual_basis(knots, GridPoint{span, gauss_.nodes[q]}, 3, ders);
          const D2 w = (D2::variable(knots[span + 1], 5) - D2::variable(knots[span], 4)) * D2(gauss_.weights[q]);
          D2 jerk(0.0);
          for (int j = 0; j < kOrder; ++j) jerk += ders[3][static_cast<std::size_t>(j)] * D2(c(k, first + j));
          const D2 piece = w * jerk * jerk;
          Sk += piece.v;
          add_hessian(Wk, piece, 1.0);
          for (int l = 0; l < kLocal; ++l) gl(l) += piece.g[static_cast<std::size_t>(l)];
          for (int j = 0; j < kOrder; ++j) {
            const D2& N = ders[3][static_cast<std::size_t>(j)];
            gS(col(k, first + j)) += 2.0 * w.v * jerk.v * N.v;
            for (int l = 0; l < kLocal; ++l) {
              const auto ls = static_cast<std::size_t>(l);
              Xk(l, j) += 2.0 * (w.g[ls] * jerk.v * N.v + w.v * jerk.g[ls] * N.v + w.v * jerk.v * N.g[ls]);
            }
            for (int j2 = 0; j2 < kOrder; ++j2)
              C(j, j2) += 2.0 * w.v * N.v * ders[3][static_cast<std::size_t>(j2)].v;
          }
        }
        gS.head(nh) += duration_map(span).transpose() * gl;
        scatter_durations(HS, span, Wk);
        scatter_mixed(HS, span, k, Xk);
        HS.block(col(k, first), col(k, first), kOrder, kOrder) += C;
      }
      const double u = Sk / T + kJerkSmoothing;
      const double root = std::sqrt(u);
      VectorXd gT = VectorXd::Zero(n_);
      gT.head(nh).setOnes();
      const VectorXd gu = gS / T - (Sk / (T * T)) * gT;
      MatrixXd Hu = HS / T;
      Hu.noalias() -= (gS * gT.transpose() + gT * gS.transpose()) / (T * T);
      Hu.noalias() += (2.0 * Sk / (T * T * T)) * (gT * gT.transpose());
      H += lambda_ * (Hu / (2.0 * root) - (gu * gu.transpose()) / (4.0 * u * root));
    }
    return 0.5 * (H + H.transpose());
  }

 private:
  struct Interval {
    std::size_t span;
    double a;
    double b;
  };

  [[nodiscard]] Index col(Index joint, Index j) const { return (I_ - 1) + joint * M_ + j; }

  /// Pinned knot q depends on durations 0 .. pin(q)-1.
  [[nodiscard]] Index pin(std::size_t q) const {
    return std::clamp<Index>(static_cast<Index>(q) - kDegree, 0, I_ - 1);
  }

  /// d knot[span-4+l] / d duration_m as a kLocal x (I-1) 0/1 matrix.
  [[nodiscard]] MatrixXd duration_map(std::size_t span) const {
    MatrixXd P = MatrixXd::Zero(kLocal, I_ - 1);
    for (int l = 0; l < kLocal; ++l) P.row(l).head(pin(span - 4 + static_cast<std::size_t>(l))).setOnes();
    return P;
  }

  void scatter_durations(MatrixXd& H, std::size_t span, const LocalMatrix& W) const {
    const MatrixXd P = duration_map(span);
    H.topLeftCorner(I_ - 1, I_ - 1).noalias() += P.transpose() * W * P;
  }

  /// Duration/control coupling of joint k: X(l, j) = d2 / d knot_l d c_{first+j}.
  void scatter_mixed(MatrixXd& H, std::size_t span, Index k, const LocalCols& X) const {
    const Index first = static_cast<Index>(span) - kDegree;
    const MatrixXd B = duration_map(span).transpose() * X;
    H.block(0, col(k, first), I_ - 1, kOrder) += B;
    H.block(col(k, first), 0, kOrder, I_ - 1) += B.transpose();
  }

  /// row(m) += scale * d value / d duration_m for a dual value on span s.
  template <typename Row>
  void chain(const D& v, std::size_t span, double scale, Row&& row) const {
    // suffix sums over pin indices
    double acc = 0.0;
    const Index m_hi = pin(span + 5);
    // walk m downward; knot l contributes to every m < pin(span - 4 + l)
    int l = kLocal - 1;
    for (Index m = m_hi - 1; m >= 0; --m) {
      while (l >= 0 && pin(span - 4 + static_cast<std::size_t>(l)) > m) {
        acc += v.d[static_cast<std::size_t>(l)];
        --l;
      }
      if (acc != 0.0) row(m) += scale * acc;
      if (l < 0 && acc == 0.0) break;
    }
  }

  void evaluate(const VectorXd& x, bool jacobians) {
    if (x.size() != n_) throw ParameterError("decision vector has wrong length");
    const Index nh = I_ - 1;
    const auto knots = knot_values(x.head(nh));
    const double T = knots.back();
    auto c = [&](Index joint, Index j) { return x(col(joint, j)); };
    auto knot = [&](std::size_t q) { return knots[q]; };

    Cache& out = cache_;
    out.x = x;
    out.jacobians = jacobians;
    out.c_eq.resize(n_eq());
    out.c_in.resize(n_ineq());
    out.xi_star.assign(static_cast<std::size_t>(n_ineq()), 0.0);
    if (jacobians) {
      out.grad.setZero(n_);
      out.J_eq.setZero(n_eq(), n_);
      out.J_in.setZero(n_ineq(), n_);
    }

    // Position on each span as a quintic in xi: coefficient m is
    // q^(m)(span start) * width^m / m!.
    std::vector<std::array<double, kOrder>> taylor(static_cast<std::size_t>(nh * K_));
    std::array<std::array<double, kOrder>, kOrder> bd;
    for (Index i = 0; i < nh; ++i) {
      const std::size_t span = first_span() + static_cast<std::size_t>(i);
      const double width = knots[span + 1] - knots[span];
      basis_derivatives(span, knots[span], knot, kDegree, bd);
      const Index first = static_cast<Index>(span) - kDegree;
      for (Index k = 0; k < K_; ++k) {
        auto& a = taylor[static_cast<std::size_t>(i * K_ + k)];
        double scale = 1.0;
        for (int m = 0; m < kOrder; ++m) {
          double q = 0.0;
          for (int j = 0; j < kOrder; ++j) q += bd[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] * c(k, first + j);
          a[static_cast<std::size_t>(m)] = q * scale;
          scale *= width / (m + 1);
        }
      }
    }

    DualBasis ders;
    std::vector<std::pair<double, DualBasis>> memo;
    for (Index s = 0; s < S_; ++s) {
      const Interval& iv = intervals_[static_cast<std::size_t>(s)];
      const std::size_t i = iv.span - first_span();
      const double width = knots[iv.span + 1] - knots[iv.span];
      const Index first = static_cast<Index>(iv.span) - kDegree;
      memo.clear();
      for (Index k = 0; k < K_; ++k) {
        const auto& a = taylor[i * static_cast<std::size_t>(K_) + static_cast<std::size_t>(k)];
        for (int r = 0; r < 4; ++r) {
          // d^r/dxi^r of the quintic, and its derivative for the critical points
          std::array<double, kOrder> pr{};
          std::vector<double> next(static_cast<std::size_t>(kDegree - r));
          for (int m = 0; m + r <= kDegree; ++m) {
            double f = 1.0;
            for (int t = m + 1; t <= m + r; ++t) f *= t;
            pr[static_cast<std::size_t>(m)] = a[static_cast<std::size_t>(m + r)] * f;
          }
          for (int m = 0; m + r < kDegree; ++m) next[static_cast<std::size_t>(m)] = (m + 1) * pr[static_cast<std::size_t>(m + 1)];
          const double unit = std::pow(width, -r);
          double hi_v = -std::numeric_limits<double>::infinity();
          double lo_v = std::numeric_limits<double>::infinity();
          double hi_xi = iv.a;
          double lo_xi = iv.a;
          auto consider = [&](double xi) {
            const double v = horner(pr, kDegree - r, xi) * unit;
            if (v > hi_v) {
              hi_v = v;
              hi_xi = xi;
            }
            if (v < lo_v) {
              lo_v = v;
              lo_xi = xi;
            }
          };
          consider(iv.a);
          consider(iv.b);
          for (double xi : roots_in(next, iv.a, iv.b)) consider(xi);
          const double inv = 1.0 / bounds_(k, r);
          const Index row = 2 * ((k * S_ + s) * 4 + r);
          out.c_in(row) = 1.0 - hi_v * inv;
          out.c_in(row + 1) = 1.0 + lo_v * inv;
          out.xi_star[static_cast<std::size_t>(row)] = hi_xi;
          out.xi_star[static_cast<std::size_t>(row + 1)] = lo_xi;
          if (!jacobians) continue;
          for (int side = 0; side < 2; ++side) {
            const double xi = side == 0 ? hi_xi : lo_xi;
            const DualBasis* at = nullptr;
            for (const auto& e : memo)
              if (e.first == xi) at = &e.second;
            if (!at) {
              dual_basis(knots, GridPoint{iv.span, xi}, 3, ders);
              memo.emplace_back(xi, ders);
              at = &memo.back().second;
            }
            const auto& dr = (*at)[static_cast<std::size_t>(r)];
            D v(0.0);
            for (int j = 0; j < kOrder; ++j) v += dr[static_cast<std::size_t>(j)] * D(c(k, first + j));
            const double sgn = side == 0 ? -inv : inv;
            chain(v, iv.span, sgn, [&](Index m) -> double& { return out.J_in(row + side, m); });
            for (int j = 0; j < kOrder; ++j) out.J_in(row + side, col(k, first + j)) = sgn * dr[static_cast<std::size_t>(j)].v;
          }
        }
      }
    }

    // Equalities: interpolation (joint-major over waypoints), then boundary.
    for (Index i = 0; i < I_; ++i) {
      const GridPoint gp = waypoint_point(i, I_);
      dual_basis(knots, gp, 2, ders);
      const Index first = static_cast<Index>(gp.span) - kDegree;
      auto put = [&](Index row, Index k, int order, double offset) {
        const auto& dr = ders[static_cast<std::size_t>(order)];
        D v(0.0);
        for (int j = 0; j < kOrder; ++j) v += dr[static_cast<std::size_t>(j)] * D(c(k, first + j));
        out.c_eq(row) = v.v - offset;
        if (!jacobians) return;
        chain(v, gp.span, 1.0, [&](Index m) -> double& { return out.J_eq(row, m); });
        for (int j = 0; j < kOrder; ++j) out.J_eq(row, col(k, first + j)) = dr[static_cast<std::size_t>(j)].v;
      };
      for (Index k = 0; k < K_; ++k) {
        put(k * I_ + i, k, 0, path_.waypoints(i, k));
        const Index row = K_ * I_ + 4 * k;
        if (i == 0) {
          put(row + 0, k, 1, 0.0);
          put(row + 2, k, 2, 0.0);
        }
        if (i == I_ - 1) {
          put(row + 1, k, 1, 0.0);
          put(row + 3, k, 2, 0.0);
        }
      }
    }

    // Objective: lambda * sum_k sqrt(S_k / T) + (1 - lambda) * T.
    std::vector<double> S(static_cast<std::size_t>(K_), 0.0);
    MatrixXd dS_dh = MatrixXd::Zero(K_, jacobians ? nh : 0);
    MatrixXd dS_dc = MatrixXd::Zero(K_, jacobians ? M_ : 0);
    for (Index i = 0; i < nh; ++i) {
      const std::size_t span = first_span() + static_cast<std::size_t>(i);
      std::vector<D> Sk(static_cast<std::size_t>(K_), D(0.0));
      for (std::size_t q = 0; q < gauss_.nodes.size(); ++q) {
        dual_basis(knots, GridPoint{span, gauss_.nodes[q]}, 3, ders);
        const D width = D::variable(knots[span + 1], 5) - D::variable(knots[span], 4);
        const D w = width * D(gauss_.weights[q]);
        const Index first = static_cast<Index>(span) - kDegree;
        for (Index k = 0; k < K_; ++k) {
          D jerk(0.0);
          for (int j = 0; j < kOrder; ++j) jerk += ders[3][static_cast<std::size_t>(j)] * D(c(k, first + j));
          Sk[static_cast<std::size_t>(k)] += w * jerk * jerk;
          if (jacobians)
            for (int j = 0; j < kOrder; ++j)
              dS_dc(k, first + j) += 2.0 * w.v * jerk.v * ders[3][static_cast<std::size_t>(j)].v;
        }
      }
      for (Index k = 0; k < K_; ++k) {
        S[static_cast<std::size_t>(k)] += Sk[static_cast<std::size_t>(k)].v;
        if (jacobians) chain(Sk[static_cast<std::size_t>(k)], span, 1.0, [&](Index m) -> double& { return dS_dh(k, m); });
      }
    }
    double J = 0.0;
    for (Index k = 0; k < K_; ++k) {
      const double Sk = S[static_cast<std::size_t>(k)];
      const double root = std::sqrt(Sk / T + kJerkSmoothing);
      J += root - std::sqrt(kJerkSmoothing);
      if (!jacobians) continue;
      const double a = lambda_ / (2.0 * root);
      for (Index m = 0; m < nh; ++m) out.grad(m) += a * (dS_dh(k, m) / T - Sk / (T * T));
      for (Index j = 0; j < M_; ++j) out.grad(col(k, j)) += a * dS_dc(k, j) / T;
    }
    out.f = lambda_ * J + (1.0 - lambda_) * T;
    if (jacobians)
      for (Index m = 0; m < nh; ++m) out.grad(m) += 1.0 - lambda_;
  }

  WaypointPath path_;
  double lambda_;
  Index I_;
  Index K_;
  Index M_;
  Index n_ = 0;
  std::vector<Interval> intervals_;
  Index S_ = 0;
  MatrixXd bounds_;
  GaussRule gauss_;
  Cache cache_;
};

std::int64_t elapsed_ns(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

VectorXd DecisionVector::flatten() const {
  VectorXd x(durations.size() + control_points.size());
  x.head(durations.size()) = durations;
  Index at = durations.size();
  for (Index k = 0; k < control_points.rows(); ++k) {
    x.segment(at, control_points.cols()) = control_points.row(k).transpose();
    at += control_points.cols();
  }
  return x;
}

DecisionVector DecisionVector::unflatten(const VectorXd& x, Index waypoints, Index joints) {
  if (waypoints < 2 || joints < 1) throw ParameterError("need at least two waypoints and one joint");
  const Index M = waypoints + 4;
  if (x.size() != waypoints - 1 + joints * M) throw ParameterError("decision vector has wrong length");
  DecisionVector dv;
  dv.durations = x.head(waypoints - 1);
  dv.control_points.resize(joints, M);
  for (Index k = 0; k < joints; ++k) dv.control_points.row(k) = x.segment(waypoints - 1 + k * M, M).transpose();
  return dv;
}

DecisionVector encode(const SplineTrajectory& traj) {
  const auto& kv = traj.knots();
  if (kv.size() < 12 || traj.control_points().cols() != static_cast<Index>(kv.size()) - 6)
    throw ParameterError("trajectory is not waypoint-pinned");
  DecisionVector dv;
  const Index I = static_cast<Index>(kv.size()) - 10;
  dv.durations.resize(I - 1);
  if (kv.durations() && static_cast<Index>(kv.durations()->size()) == I - 1) {
    for (Index i = 0; i < I - 1; ++i) dv.durations(i) = (*kv.durations())[static_cast<std::size_t>(i)];
  } else {
    for (Index i = 0; i < I - 1; ++i)
      dv.durations(i) = kv[static_cast<std::size_t>(6 + i)] - kv[static_cast<std::size_t>(5 + i)];
  }
  dv.control_points = traj.control_points();
  return dv;
}

SplineTrajectory decode(const DecisionVector& dv, const WaypointPath& path) {
  if (dv.waypoints() != path.size() || dv.control_points.cols() != path.size() + 4 ||
      dv.joints() != path.joints())
    throw ParameterError("decision vector does not match the path dimensions");
  std::vector<double> d(dv.durations.data(), dv.durations.data() + dv.durations.size());
  return {KnotVector::from_durations(d), dv.control_points};
}

void PlanRequest::validate() const {
  path.validate();
  limits.validate();
  if (limits.joints() != path.joints()) throw ParameterError("limits and path disagree on joint count");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1]");
  if (!(margin > 0.0 && margin <= 1.0)) throw ParameterError("margin must lie in (0, 1]");
  if (collocation_density < 2) throw ParameterError("collocation density must be at least 2");
  if (!(max_span_duration > kMinSpan)) throw ParameterError("max span duration too small");
  solver.validate();
}

std::vector<GridPoint> collocation_grid(Index waypoints, int density) {
  if (waypoints < 2 || density < 2) throw ParameterError("grid needs two waypoints and density >= 2");
  const auto inner = gauss_legendre_unit(std::max(density - 2, 1));
  std::vector<GridPoint> out;
  for (Index i = 0; i + 1 < waypoints; ++i) {
    const std::size_t span = first_span() + static_cast<std::size_t>(i);
    out.push_back({span, 0.0});
    if (density > 2)
      for (double xi : inner.nodes) out.push_back({span, xi});
  }
  out.push_back({first_span() + static_cast<std::size_t>(waypoints - 2), 1.0});
  return out;
}

std::vector<GridPoint> uniform_grid(Index waypoints, int points_per_span) {
  if (waypoints < 2 || points_per_span < 2) throw ParameterError("grid needs two waypoints and >= 2 points per span");
  std::vector<GridPoint> out;
  for (Index i = 0; i + 1 < waypoints; ++i) {
    const std::size_t span = first_span() + static_cast<std::size_t>(i);
    for (int j = 0; j + 1 < points_per_span; ++j) out.push_back({span, static_cast<double>(j) / (points_per_span - 1)});
  }
  out.push_back({first_span() + static_cast<std::size_t>(waypoints - 2), 1.0});
  return out;
}

double grid_time(const KnotVector& knots, const GridPoint& g) {
  return (1.0 - g.xi) * knots[g.span] + g.xi * knots[g.span + 1];
}

FeasibilityReport check_feasibility(const SplineTrajectory& traj, const WaypointPath& path,
                                    const RobotLimits& limits, int points_per_span) {
  FeasibilityReport rep;
  const auto grid = uniform_grid(path.size(), points_per_span);
  std::vector<double> times;
  times.reserve(grid.size());
  for (const auto& g : grid) times.push_back(std::min(grid_time(traj.knots(), g), traj.duration()));
  rep.grid_points = grid.size();
  rep.min_kinematic_slack = kinematic_residuals(traj, limits, times).minCoeff();
  rep.max_boundary = boundary_residuals(traj).lpNorm<Eigen::Infinity>();
  rep.max_interpolation =
      interpolation_residuals(traj, path, waypoint_times(traj.knots())).lpNorm<Eigen::Infinity>();
  rep.feasible = rep.min_kinematic_slack > -kKinematicTolerance && rep.max_boundary < kEqualityTolerance &&
                 rep.max_interpolation < kEqualityTolerance;
  return rep;
}

sqp::NlpProblem build_nlp(const PlanRequest& request) {
  return build_nlp(request, {request.margin, request.collocation_density});
}

sqp::NlpProblem build_nlp(const PlanRequest& request, const NlpOptions& options) {
  request.validate();
  request.path.check_within(request.limits);
  auto ev = std::make_shared<TrajectoryNlp>(request, options);
  sqp::NlpProblem p;
  p.n = ev->n();
  p.n_eq = ev->n_eq();
  p.n_ineq = ev->n_ineq();
  p.objective = [ev](const VectorXd& x) { return ev->at(x, false).f; };
  p.gradient = [ev](const VectorXd& x) { return ev->at(x, true).grad; };
  p.eq_constraints = [ev](const VectorXd& x) { return ev->at(x, false).c_eq; };
  p.eq_jacobian = [ev](const VectorXd& x) { return ev->at(x, true).J_eq; };
  p.ineq_constraints = [ev](const VectorXd& x) { return ev->at(x, false).c_in; };
  p.ineq_jacobian = [ev](const VectorXd& x) { return ev->at(x, true).J_in; };
  // Equalities fix the control points once durations are known; re-solving
  // them on trial points keeps the line search off the curved manifold.
  p.project = [path = request.path, I = request.path.size(), K = request.path.joints()](const VectorXd& x) {
    auto dv = DecisionVector::unflatten(x, I, K);
    dv.control_points = interpolating_control_points(path, dv.durations);
    return dv.flatten();
  };
  if (request.exact_hessian)
    p.hessian = [ev](const VectorXd& x, const VectorXd& mu_eq, const VectorXd& mu_in) {
      return ev->hessian(x, mu_eq, mu_in);
    };
  const double inf = std::numeric_limits<double>::infinity();
  p.lower = VectorXd::Constant(p.n, -inf);
  p.upper = VectorXd::Constant(p.n, inf);
  p.lower.head(request.path.size() - 1).setConstant(kMinSpan);
  p.upper.head(request.path.size() - 1).setConstant(request.max_span_duration);
  return p;
}

MatrixXd interpolating_control_points(const WaypointPath& path, const VectorXd& durations) {
  const Index I = path.size();
  const Index M = I + 4;
  if (durations.size() != I - 1) throw ParameterError("need I-1 durations");
  const auto knots = knot_values(durations);
  auto knot = [&](std::size_t q) { return knots[q]; };
  MatrixXd A = MatrixXd::Zero(M, M);
  MatrixXd rhs = MatrixXd::Zero(M, path.joints());
  std::array<std::array<double, kOrder>, kOrder> ders;
  auto fill = [&](Index row, const GridPoint& g, int order) {
    const double t = (1.0 - g.xi) * knots[g.span] + g.xi * knots[g.span + 1];
    basis_derivatives(g.span, t, knot, order, ders);
    for (int j = 0; j < kOrder; ++j) A(row, static_cast<Index>(g.span) - kDegree + j) = ders[static_cast<std::size_t>(order)][static_cast<std::size_t>(j)];
  };
  for (Index i = 0; i < I; ++i) {
    fill(i, waypoint_point(i, I), 0);
    rhs.row(i) = path.waypoints.row(i);
  }
  const GridPoint start = waypoint_point(0, I);
  const GridPoint end = waypoint_point(I - 1, I);
  fill(I + 0, start, 1);
  fill(I + 1, end, 1);
  fill(I + 2, start, 2);
  fill(I + 3, end, 2);
  Eigen::FullPivLU<MatrixXd> lu(A);
  if (!lu.isInvertible()) throw NumericalBreakdown("interpolation system is singular");
  return lu.solve(rhs).transpose();
}

DecisionVector cold_start(const WaypointPath& path, const RobotLimits& limits) {
  path.validate();
  limits.validate();
  if (limits.joints() != path.joints()) throw ParameterError("limits and path disagree on joint count");
  path.check_within(limits);
  const Index I = path.size();
  DecisionVector dv;
  dv.durations.resize(I - 1);
  for (Index i = 0; i + 1 < I; ++i) {
    double h = kMinSpan;
    for (Index k = 0; k < path.joints(); ++k)
      h = std::max(h, std::abs(path.waypoints(i + 1, k) - path.waypoints(i, k)) / (0.5 * limits.qd_max(k)));
    dv.durations(i) = h;
  }
  try {
    dv.control_points = interpolating_control_points(path, dv.durations);
  } catch (const NumericalBreakdown&) {
    dv.durations *= 1.01;
    dv.control_points = interpolating_control_points(path, dv.durations);
  }
  return dv;
}

PlanResult plan(const PlanRequest& request, const DecisionVector& init) {
  request.validate();
  request.path.check_within(request.limits);
  if (init.waypoints() != request.path.size() || init.joints() != request.path.joints() ||
      init.control_points.cols() != request.path.size() + 4)
    throw ParameterError("initialization does not match the request dimensions");

  std::vector<PlanAttempt> attempts;
  const VectorXd x0 = init.flatten();
  const auto started = std::chrono::steady_clock::now();
  for (int attempt = 0; attempt < 2; ++attempt) {
    NlpOptions opt{request.margin, request.collocation_density};
    if (attempt == 1) {
      opt.margin = request.margin * request.margin;
      opt.density = 2 * request.collocation_density;
    }
    const auto nlp = build_nlp(request, opt);
    PlanAttempt a;
    a.margin = opt.margin;
    a.density = opt.density;
    a.solver = sqp::solve(nlp, x0, request.solver);
    const auto traj = decode(DecisionVector::unflatten(a.solver.x, request.path.size(), request.path.joints()),
                             request.path);
    a.feasibility = check_feasibility(traj, request.path, request.limits, 10 * opt.density);
    attempts.push_back(a);
    if (a.feasibility.feasible) {
      PlanResult res{traj, 0.0, 0.0, 0.0, a.solver, a.feasibility, attempts};
      res.jerk = total_jerk(traj);
      res.duration = traj.duration();
      res.objective = scalar_objective(res.jerk, res.duration, request.lambda);
      for (const auto& at : attempts) res.total_iterations += at.solver.iterations;
      res.sqp_ns = elapsed_ns(started);
      return res;
    }
  }
  std::ostringstream msg;
  msg << "no feasible trajectory after " << attempts.size() << " attempts:";
  for (const auto& a : attempts)
    msg << " [margin " << a.margin << ", density " << a.density << ", status " << sqp::to_string(a.solver.status)
        << ", min slack " << a.feasibility.min_kinematic_slack << ", boundary " << a.feasibility.max_boundary
        << ", interpolation " << a.feasibility.max_interpolation << "]";
  throw PlanningFailed(msg.str());
}

std::string plan_result_to_json(const PlanResult& r) {
  json_io::ObjectWriter w;
  w.field("status", sqp::to_string(r.solver.status))
      .field("objective", r.objective)
      .field("jerk", r.jerk)
      .field("duration", r.duration)
      .field("iterations", r.solver.iterations)
      .field("total_iterations", r.total_iterations)
      .field("attempts", r.attempts.size())
      .field("kkt_residual", r.solver.kkt_residual)
      .field("violation", r.solver.violation)
      .field("min_kinematic_slack", r.feasibility.min_kinematic_slack)
      .field("max_boundary", r.feasibility.max_boundary)
      .field("max_interpolation", r.feasibility.max_interpolation)
      .field("feasible", r.feasibility.feasible)
      .field("warm_start_ns", static_cast<long long>(r.warm_start_ns))
      .field("sqp_ns", static_cast<long long>(r.sqp_ns))
      .raw("trajectory", trajectory_to_json(r.trajectory));
  return w.str();
}

}  // namespace tjplan
