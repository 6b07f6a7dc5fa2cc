#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tjplan/spline.hpp"
#include "tjplan/sqp.hpp"

namespace tjplan {

/// Flat NLP variables: I-1 span durations, then K x (I+4) control points
/// flattened joint by joint.
struct DecisionVector {
  Eigen::VectorXd durations;
  Eigen::MatrixXd control_points;

  [[nodiscard]] Eigen::Index waypoints() const noexcept { return durations.size() + 1; }
  [[nodiscard]] Eigen::Index joints() const noexcept { return control_points.rows(); }
  [[nodiscard]] Eigen::VectorXd flatten() const;
  static DecisionVector unflatten(const Eigen::VectorXd& x, Eigen::Index waypoints, Eigen::Index joints);
};

/// Requires a waypoint-pinned knot vector (I + 10 knots, I + 4 control points).
[[nodiscard]] DecisionVector encode(const SplineTrajectory& traj);
[[nodiscard]] SplineTrajectory decode(const DecisionVector& dv, const WaypointPath& path);

struct PlanRequest {
  WaypointPath path;
  RobotLimits limits;
  double lambda = 0.5;
  int collocation_density = 5;  ///< grid points per span, endpoints included
  double margin = 0.99;         ///< applied to the limits inside the NLP
  double max_span_duration = 60.0;
  bool exact_hessian = true;  ///< false: quasi-Newton (damped BFGS)
  sqp::SqpSettings solver;

  void validate() const;
};

/// A time on the pinned knot vector: t = (1 - xi) * knot[span] + xi * knot[span + 1].
/// Keeping the span explicit lets the point move with the knots.
struct GridPoint {
  std::size_t span = 0;
  double xi = 0.0;
};

/// Waypoint knots plus density-2 Gauss points inside each span.
[[nodiscard]] std::vector<GridPoint> collocation_grid(Eigen::Index waypoints, int density);
/// points_per_span uniform fractions per span, endpoints shared.
[[nodiscard]] std::vector<GridPoint> uniform_grid(Eigen::Index waypoints, int points_per_span);
[[nodiscard]] double grid_time(const KnotVector& knots, const GridPoint& g);

struct FeasibilityReport {
  double min_kinematic_slack = 0.0;  ///< min over limit - |value| on the dense grid
  double max_boundary = 0.0;         ///< largest |boundary residual|
  double max_interpolation = 0.0;    ///< largest |waypoint miss|
  std::size_t grid_points = 0;
  bool feasible = false;
};

inline constexpr double kKinematicTolerance = 1e-9;
inline constexpr double kEqualityTolerance = 1e-6;

/// Dense check against unmargined limits with points_per_span samples per span.
[[nodiscard]] FeasibilityReport check_feasibility(const SplineTrajectory& traj, const WaypointPath& path,
                                                  const RobotLimits& limits, int points_per_span);

struct PlanAttempt {
  double margin = 0.0;
  int density = 0;
  sqp::SqpResult solver;
  FeasibilityReport feasibility;
};

struct PlanResult {
  SplineTrajectory trajectory;
  double objective = 0.0;
  double jerk = 0.0;
  double duration = 0.0;
  sqp::SqpResult solver;          ///< the accepted attempt
  FeasibilityReport feasibility;  ///< of the accepted attempt
  std::vector<PlanAttempt> attempts;
  int total_iterations = 0;
  std::int64_t warm_start_ns = 0;
  std::int64_t sqp_ns = 0;
};

/// Options for the NLP built from a request; plan() varies them on retry.
struct NlpOptions {
  double margin = 0.99;
  int density = 5;
};

/// lambda J + (1 - lambda) T subject to interpolation and boundary
/// equalities and two-sided margined kinematic rows 1 -+ value / bound >= 0.
[[nodiscard]] sqp::NlpProblem build_nlp(const PlanRequest& request);
[[nodiscard]] sqp::NlpProblem build_nlp(const PlanRequest& request, const NlpOptions& options);

/// Duration lower/upper bounds and the square interpolation solve.
[[nodiscard]] DecisionVector cold_start(const WaypointPath& path, const RobotLimits& limits);

/// Control points that interpolate the path with rest boundary conditions
/// for the given durations. Throws NumericalBreakdown if singular.
[[nodiscard]] Eigen::MatrixXd interpolating_control_points(const WaypointPath& path,
                                                           const Eigen::VectorXd& durations);

/// Solve from init, post-check densely, retry once with margin^2 and double
/// density. Throws PlanningFailed when neither attempt passes.
[[nodiscard]] PlanResult plan(const PlanRequest& request, const DecisionVector& init);

[[nodiscard]] std::string plan_result_to_json(const PlanResult& result);

}  // namespace tjplan
