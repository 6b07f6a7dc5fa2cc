#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tjplan/bspline_basis.hpp"

namespace tjplan {

/// Smallest allowed duration of a knot span (seconds).
inline constexpr double kMinSpan = 1e-4;

/// Clamped quintic knot vector: six leading zeros, six trailing T > 0,
/// non-decreasing, every interior span at least kMinSpan long.
class KnotVector {
 public:
  explicit KnotVector(std::vector<double> knots);

  /// Waypoint-pinned knot vector. Waypoint i sits at knot 5+i, so I
  /// waypoints need I-1 durations and the vector has I+10 entries.
  static KnotVector from_durations(std::span<const double> durations);

  [[nodiscard]] std::span<const double> values() const noexcept { return knots_; }
  [[nodiscard]] double operator[](std::size_t i) const noexcept { return knots_[i]; }
  [[nodiscard]] std::size_t size() const noexcept { return knots_.size(); }
  [[nodiscard]] std::size_t num_control_points() const noexcept { return knots_.size() - kOrder; }
  [[nodiscard]] double duration() const noexcept { return knots_.back(); }

  /// Span index s with knots[s] <= t < knots[s+1]; t == T maps to the last
  /// non-empty span.
  [[nodiscard]] std::size_t find_span(double t) const;

  /// Indices s of all non-empty spans [knots[s], knots[s+1]).
  [[nodiscard]] std::vector<std::size_t> spans() const;

  /// Durations this vector was built from, when built by from_durations.
  [[nodiscard]] const std::optional<std::vector<double>>& durations() const noexcept {
    return durations_;
  }

  /// Uniform time scaling of every knot.
  [[nodiscard]] KnotVector scaled(double alpha) const;

  friend bool operator==(const KnotVector& a, const KnotVector& b) { return a.knots_ == b.knots_; }

 private:
  std::vector<double> knots_;
  std::optional<std::vector<double>> durations_;
};

/// Non-zero basis values at t: N_{first..first+5}(t).
struct BasisValues {
  std::size_t first = 0;
  std::array<double, kOrder> values{};
};

[[nodiscard]] BasisValues basis(const KnotVector& knots, double t);

/// Per-joint kinematic bounds; every entry strictly positive.
struct RobotLimits {
  Eigen::VectorXd q_max;
  Eigen::VectorXd qd_max;
  Eigen::VectorXd qdd_max;
  Eigen::VectorXd qddd_max;

  [[nodiscard]] Eigen::Index joints() const noexcept { return q_max.size(); }
  /// Bound for derivative order 0..3.
  [[nodiscard]] double bound(Eigen::Index joint, int order) const;
  /// Throws ParameterError when sizes disagree or an entry is not > 0.
  void validate() const;
  [[nodiscard]] RobotLimits scaled(double factor) const;
  /// The first `k` joints.
  [[nodiscard]] RobotLimits head(Eigen::Index k) const;
  /// Gen3-like 6-DOF stand-in values.
  static RobotLimits default_arm();
};

/// I x K matrix of joint values, one row per waypoint.
struct WaypointPath {
  Eigen::MatrixXd waypoints;

  [[nodiscard]] Eigen::Index size() const noexcept { return waypoints.rows(); }
  [[nodiscard]] Eigen::Index joints() const noexcept { return waypoints.cols(); }
  void validate() const;
  /// Throws InfeasiblePath when some waypoint leaves +-q_max.
  void check_within(const RobotLimits& limits) const;
};

/// K quintic B-splines over one shared knot vector. Row k of the control
/// point matrix is joint k's spline.
class SplineTrajectory {
 public:
  SplineTrajectory(KnotVector knots, Eigen::MatrixXd control_points);

  [[nodiscard]] const KnotVector& knots() const noexcept { return knots_; }
  [[nodiscard]] const Eigen::MatrixXd& control_points() const noexcept { return ctrl_; }
  [[nodiscard]] Eigen::Index joints() const noexcept { return ctrl_.rows(); }
  [[nodiscard]] double duration() const noexcept { return knots_.duration(); }

  friend bool operator==(const SplineTrajectory& a, const SplineTrajectory& b) {
    return a.knots_ == b.knots_ && a.ctrl_.rows() == b.ctrl_.rows() &&
           a.ctrl_.cols() == b.ctrl_.cols() && a.ctrl_ == b.ctrl_;
  }

 private:
  KnotVector knots_;
  Eigen::MatrixXd ctrl_;
};

/// order-th time derivative (0..3) of joint's spline at t in [0, T].
[[nodiscard]] double eval(const SplineTrajectory& traj, Eigen::Index joint, double t, int order);

/// All joints, orders 0..max_order at t: result(order, joint).
[[nodiscard]] Eigen::MatrixXd eval_all(const SplineTrajectory& traj, double t, int max_order);

/// Sum over joints of the RMS jerk sqrt(int jerk^2 dt / T).
[[nodiscard]] double total_jerk(const SplineTrajectory& traj);

/// lambda * J + (1 - lambda) * T.
[[nodiscard]] double scalar_objective(const SplineTrajectory& traj, double lambda);
[[nodiscard]] double scalar_objective(double jerk, double duration, double lambda);

/// limit - |value| for every (joint, grid time, order 0..3), joint-major.
[[nodiscard]] Eigen::VectorXd kinematic_residuals(const SplineTrajectory& traj,
                                                  const RobotLimits& limits,
                                                  std::span<const double> grid);

/// (qd(0), qd(T), qdd(0), qdd(T)) per joint, joint-major.
[[nodiscard]] Eigen::VectorXd boundary_residuals(const SplineTrajectory& traj);

/// entry (i, k) = q_k(t_i) - waypoint(i, k).
[[nodiscard]] Eigen::MatrixXd interpolation_residuals(const SplineTrajectory& traj,
                                                      const WaypointPath& path,
                                                      std::span<const double> waypoint_times);

/// Times of the distinct pinned knots of a waypoint-pinned vector.
[[nodiscard]] std::vector<double> waypoint_times(const KnotVector& knots);

/// Gauss-Legendre nodes and weights on [0, 1] (weights sum to 1).
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
[[nodiscard]] GaussRule gauss_legendre_unit(int points);

/// {"degree":5,"knots":[...],"joints":[[...],...]} with 17 significant digits.
[[nodiscard]] std::string trajectory_to_json(const SplineTrajectory& traj);
[[nodiscard]] SplineTrajectory trajectory_from_json(const std::string& text);

}  // namespace tjplan
