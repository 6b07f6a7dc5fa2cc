#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "tjplan/errors.hpp"
#include "tjplan/planner.hpp"

using namespace tjplan;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

WaypointPath random_path(std::mt19937_64& rng, const RobotLimits& limits, int I, double spread = 0.6) {
  WaypointPath p{MatrixXd(I, limits.joints())};
  for (int i = 0; i < I; ++i)
    for (Eigen::Index k = 0; k < limits.joints(); ++k)
      p.waypoints(i, k) = oracle::uniform(rng, -spread, spread) * limits.q_max(k);
  return p;
}

PlanRequest request_for(const WaypointPath& path, const RobotLimits& limits, double lambda) {
  PlanRequest r;
  r.path = path;
  r.limits = limits;
  r.lambda = lambda;
  return r;
}

/// Smallest T for which the fixed two-waypoint shape meets the margined
/// limits everywhere (dense sampling), by bisection.
double bisect_min_duration(const WaypointPath& path, const RobotLimits& limits, double margin, int density) {
  const auto grid = collocation_grid(2, density);
  MatrixXd c(path.joints(), 6);
  for (Eigen::Index k = 0; k < path.joints(); ++k)
    c.row(k) << path.waypoints(0, k), path.waypoints(0, k), path.waypoints(0, k), path.waypoints(1, k),
        path.waypoints(1, k), path.waypoints(1, k);
  auto feasible = [&](double T) {
    const SplineTrajectory traj(KnotVector::from_durations(std::vector<double>{T}), c);
    // the NLP bounds every derivative over the whole span
    for (int s = 0; s <= 4000; ++s) {
      const MatrixXd v = eval_all(traj, T * s / 4000.0, 3);
      for (Eigen::Index k = 0; k < path.joints(); ++k)
        for (int r = 0; r < 4; ++r) {
          double bound = margin * limits.bound(k, r);
          if (r == 0) bound = std::max(bound, path.waypoints.col(k).cwiseAbs().maxCoeff());
          if (std::abs(v(r, k)) > bound) return false;
        }
    }
    return true;
  };
  double lo = 1e-3;
  double hi = 100.0;
  REQUIRE(feasible(hi));
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? hi : lo) = mid;
  }
  return hi;
}

}  // namespace

TEST_CASE("encode/decode") {
  std::mt19937_64 rng(201);
  for (int trial = 0; trial < 20; ++trial) {
    const auto traj = oracle::random_pinned(rng, 3 + trial % 8, 3);
    WaypointPath path{MatrixXd::Zero(traj.control_points().cols() - 4, 3)};
    const auto dv = encode(traj);
    CHECK(decode(dv, path) == traj);
    const auto again = DecisionVector::unflatten(dv.flatten(), path.size(), 3);
    CHECK(again.durations == dv.durations);
    CHECK(again.control_points == dv.control_points);
  }

  DecisionVector dv;
  dv.durations = VectorXd::Ones(5);
  dv.control_points = MatrixXd::Zero(2, 10);
  WaypointPath path{MatrixXd::Zero(6, 2)};
  const auto traj = decode(dv, path);
  CHECK(traj.duration() == 5.0);
  const auto wt = waypoint_times(traj.knots());
  for (int i = 1; i <= 4; ++i) CHECK(wt[static_cast<std::size_t>(i)] == static_cast<double>(i));

  std::mt19937_64 rng2(202);
  VectorXd d(7);
  for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = oracle::uniform(rng2, 0.01, 3.0);
  dv.durations = d;
  dv.control_points = MatrixXd::Zero(2, 12);
  const auto t2 = decode(dv, WaypointPath{MatrixXd::Zero(8, 2)});
  std::vector<double> sums(8, 0.0);
  std::partial_sum(d.data(), d.data() + d.size(), sums.begin() + 1);
  CHECK(waypoint_times(t2.knots()) == sums);

  CHECK_THROWS_AS((void)decode(dv, WaypointPath{MatrixXd::Zero(7, 2)}), ParameterError);
  CHECK_THROWS_AS((void)DecisionVector::unflatten(VectorXd::Zero(5), 3, 2), ParameterError);
}

TEST_CASE("collocation grids") {
  const auto g = collocation_grid(4, 5);
  CHECK(g.size() == 3 * 4 + 1);
  CHECK(g.front().xi == 0.0);
  CHECK(g.back().xi == 1.0);
  CHECK(g.back().span == 7);
  CHECK(uniform_grid(4, 50).size() == 3 * 49 + 1);
  CHECK_THROWS_AS((void)collocation_grid(1, 5), ParameterError);
}

TEST_CASE("cold start") {
  const RobotLimits limits = RobotLimits::default_arm();
  WaypointPath still{MatrixXd(5, 6)};
  for (int i = 0; i < 5; ++i) still.waypoints.row(i) << 0.1, -0.2, 0.3, 0.0, 0.5, -1.0;
  auto dv = cold_start(still, limits);
  for (Eigen::Index i = 0; i < dv.durations.size(); ++i) CHECK(dv.durations(i) == kMinSpan);
  for (Eigen::Index k = 0; k < 6; ++k)
    CHECK((dv.control_points.row(k).array() - still.waypoints(0, k)).abs().maxCoeff() < 1e-12);

  RobotLimits unit{VectorXd::Constant(1, 3.0), VectorXd::Constant(1, 1.0), VectorXd::Constant(1, 1.0),
                   VectorXd::Constant(1, 1.0)};
  WaypointPath step{MatrixXd(2, 1)};
  step.waypoints << 0.0, 1.0;
  CHECK(cold_start(step, unit).durations(0) == 2.0);

  std::mt19937_64 rng(203);
  for (int trial = 0; trial < 20; ++trial) {
    const auto path = random_path(rng, limits, 2 + trial);
    dv = cold_start(path, limits);
    const auto traj = decode(dv, path);
    CHECK(interpolation_residuals(traj, path, waypoint_times(traj.knots())).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK(boundary_residuals(traj).lpNorm<Eigen::Infinity>() < 1e-9);
    const auto again = cold_start(path, limits);
    CHECK(again.control_points == dv.control_points);
  }

  WaypointPath outside = random_path(rng, limits, 3);
  outside.waypoints(1, 2) = 1.5 * limits.q_max(2);
  CHECK_THROWS_AS((void)cold_start(outside, limits), InfeasiblePath);
  CHECK_THROWS_AS((void)build_nlp(request_for(outside, limits, 0.5)), InfeasiblePath);
}

TEST_CASE("NLP derivatives match finite differences") {
  const RobotLimits limits = RobotLimits::default_arm().head(3);
  std::mt19937_64 rng(204);
  for (int trial = 0; trial < 4; ++trial) {
    const auto path = random_path(rng, limits, 3 + trial);
    const auto req = request_for(path, limits, 0.3 + 0.1 * trial);
    const auto nlp = build_nlp(req);
    VectorXd x = cold_start(path, limits).flatten();
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += oracle::uniform(rng, -0.05, 0.05);
    REQUIRE(nlp.n == x.size());

    const VectorXd g = nlp.gradient(x);
    const VectorXd fd = sqp::finite_diff_gradient(nlp.objective, x, 1e-6);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) worst = std::max(worst, oracle::rel_err(fd(i), g(i), 1e-2));
    CHECK(worst < 1e-5);

    const MatrixXd Je = nlp.eq_jacobian(x);
    const MatrixXd Je_fd = sqp::finite_diff_jacobian(nlp.eq_constraints, x, 1e-6);
    CHECK((Je - Je_fd).lpNorm<Eigen::Infinity>() < 1e-6 * std::max(1.0, Je.lpNorm<Eigen::Infinity>()));
    const MatrixXd Ji = nlp.ineq_jacobian(x);
    const MatrixXd Ji_fd = sqp::finite_diff_jacobian(nlp.ineq_constraints, x, 1e-6);
    CHECK((Ji - Ji_fd).lpNorm<Eigen::Infinity>() < 1e-6 * std::max(1.0, Ji.lpNorm<Eigen::Infinity>()));

    // constraint values agree with the trajectory functionals
    const auto traj = decode(DecisionVector::unflatten(x, path.size(), 3), path);
    const MatrixXd interp = interpolation_residuals(traj, path, waypoint_times(traj.knots()));
    const VectorXd ce = nlp.eq_constraints(x);
    for (Eigen::Index k = 0; k < 3; ++k)
      for (Eigen::Index i = 0; i < path.size(); ++i)
        CHECK(std::abs(ce(k * path.size() + i) - interp(i, k)) < 1e-12);
    CHECK((ce.tail(12) - boundary_residuals(traj)).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK(std::abs(nlp.objective(x) - scalar_objective(traj, req.lambda)) < 1e-5);
  }
}

TEST_CASE("NLP Hessian matches differences of the Lagrangian gradient") {
  const RobotLimits limits = RobotLimits::default_arm().head(3);
  std::mt19937_64 rng(214);
  for (int trial = 0; trial < 4; ++trial) {
    const auto path = random_path(rng, limits, 3 + trial);
    const auto req = request_for(path, limits, 0.2 + 0.2 * trial);
    const auto nlp = build_nlp(req);
    REQUIRE(nlp.hessian);
    VectorXd x = cold_start(path, limits).flatten();
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += oracle::uniform(rng, -0.05, 0.05);
    VectorXd mu_eq(nlp.n_eq), mu_in = VectorXd::Zero(nlp.n_ineq);
    for (Eigen::Index i = 0; i < mu_eq.size(); ++i) mu_eq(i) = oracle::uniform(rng, -1, 1);
    // a sparse sprinkle of active kinematic rows
    for (Eigen::Index i = 0; i < mu_in.size(); i += 7) mu_in(i) = oracle::uniform(rng, 0, 2);
    auto lag_grad = [&](const VectorXd& y) -> VectorXd {
      return nlp.gradient(y) - nlp.eq_jacobian(y).transpose() * mu_eq - nlp.ineq_jacobian(y).transpose() * mu_in;
    };
    const MatrixXd H = nlp.hessian(x, mu_eq, mu_in);
    const MatrixXd H_fd = sqp::finite_diff_jacobian(lag_grad, x, 1e-6);
    CAPTURE(trial);
    CHECK((H - H.transpose()).lpNorm<Eigen::Infinity>() < 1e-12 * std::max(1.0, H.lpNorm<Eigen::Infinity>()));
    CHECK((H - H_fd).lpNorm<Eigen::Infinity>() < 1e-5 * std::max(1.0, H.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("plan: two waypoints, pure time objective hits the bisection oracle") {
  const RobotLimits limits = RobotLimits::default_arm().head(2);
  WaypointPath path{MatrixXd(2, 2)};
  path.waypoints << 0.2, -0.4, 1.1, 0.3;
  auto req = request_for(path, limits, 0.0);
  const auto res = plan(req, cold_start(path, limits));
  CHECK(res.solver.status == sqp::SqpStatus::Converged);
  const auto& used = res.attempts.back();
  const double T_star = bisect_min_duration(path, limits, used.margin, used.density);
  CHECK(res.duration == doctest::Approx(T_star).epsilon(1e-6));
  const auto nlp = build_nlp(req, {used.margin, used.density});
  const VectorXd slack = nlp.ineq_constraints(res.solver.x);
  CHECK(slack.minCoeff() < 1e-6);
}

TEST_CASE("plan: cold start on random paths") {
  const RobotLimits limits = RobotLimits::default_arm();
  std::mt19937_64 rng(205);
  for (int trial = 0; trial < 5; ++trial) {
    const auto path = random_path(rng, limits, 6);
    const auto req = request_for(path, limits, 0.5);
    const auto init = cold_start(path, limits);
    const auto res = plan(req, init);
    CAPTURE(trial);
    CHECK(res.solver.status == sqp::SqpStatus::Converged);
    CHECK(res.feasibility.feasible);
    CHECK(res.feasibility.min_kinematic_slack > -1e-9);
    CHECK(res.feasibility.max_boundary < 1e-6);
    const auto init_traj = decode(init, path);
    if (check_feasibility(init_traj, path, limits, 50).feasible)
      CHECK(res.objective <= scalar_objective(init_traj, 0.5) + 1e-9);

    // restarting at the optimum is a fixed point
    const auto again = plan(req, encode(res.trajectory));
    CHECK(again.total_iterations <= 3);
    CHECK(std::abs(again.objective - res.objective) < 1e-9);
  }
}

TEST_CASE("plan: pure jerk objective improves on the start") {
  RobotLimits generous = RobotLimits::default_arm().head(3);
  generous.qd_max *= 10.0;
  generous.qdd_max *= 10.0;
  generous.qddd_max *= 10.0;
  std::mt19937_64 rng(206);
  const auto path = random_path(rng, generous, 5);
  const auto init = cold_start(path, generous);
  const auto res = plan(request_for(path, generous, 1.0), init);
  CHECK(res.jerk < total_jerk(decode(init, path)));
}

TEST_CASE("plan: lambda sweep trades duration for jerk") {
  const RobotLimits limits = RobotLimits::default_arm().head(3);
  std::mt19937_64 rng(207);
  const auto path = random_path(rng, limits, 5);
  double prev_J = std::numeric_limits<double>::infinity();
  double prev_T = 0.0;
  for (double lambda : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const auto res = plan(request_for(path, limits, lambda), cold_start(path, limits));
    CAPTURE(lambda);
    if (res.solver.status != sqp::SqpStatus::Converged) continue;
    CHECK(res.jerk <= prev_J * (1 + 1e-6));
    CHECK(res.duration >= prev_T * (1 - 1e-6));
    prev_J = res.jerk;
    prev_T = res.duration;
  }
}

TEST_CASE("plan: request validation") {
  const RobotLimits limits = RobotLimits::default_arm().head(2);
  WaypointPath path{MatrixXd::Zero(3, 2)};
  auto req = request_for(path, limits, 1.5);
  CHECK_THROWS_AS(req.validate(), ParameterError);
  req.lambda = 0.5;
  req.margin = 0.0;
  CHECK_THROWS_AS(req.validate(), ParameterError);
  req.margin = 0.99;
  DecisionVector wrong;
  wrong.durations = VectorXd::Ones(3);
  wrong.control_points = MatrixXd::Zero(2, 8);
  CHECK_THROWS_AS((void)plan(req, wrong), ParameterError);
}
