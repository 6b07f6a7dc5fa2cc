#pragma once

// Independent reference computations used only by tests.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "tjplan/spline.hpp"

namespace oracle {

/// Textbook Cox-de Boor recursion N_{i,p}(t) with the 0/0 = 0 convention.
inline double cox_de_boor(const std::vector<double>& k, std::size_t i, int p, double t) {
  if (p == 0) {
    const double T = k.back();
    if (k[i] <= t && t < k[i + 1]) return 1.0;
    // t == T belongs to the last non-empty interval
    if (t == T && k[i] < k[i + 1] && k[i + 1] == T) return 1.0;
    return 0.0;
  }
  double left = 0.0;
  double right = 0.0;
  const double dl = k[i + p] - k[i];
  const double dr = k[i + p + 1] - k[i + 1];
  if (dl > 0.0) left = (t - k[i]) / dl * cox_de_boor(k, i, p - 1, t);
  if (dr > 0.0) right = (k[i + p + 1] - t) / dr * cox_de_boor(k, i + 1, p - 1, t);
  return left + right;
}

inline double brute_force_value(const tjplan::SplineTrajectory& traj, Eigen::Index joint, double t) {
  const auto kv = traj.knots().values();
  const std::vector<double> k(kv.begin(), kv.end());
  double v = 0.0;
  for (Eigen::Index i = 0; i < traj.control_points().cols(); ++i)
    v += traj.control_points()(joint, i) * cox_de_boor(k, static_cast<std::size_t>(i), 5, t);
  return v;
}

/// Trapezoidal integral of jerk^2 with `samples` intervals per span; returns J.
inline double dense_total_jerk(const tjplan::SplineTrajectory& traj, int samples) {
  const auto& kv = traj.knots();
  const double T = kv.duration();
  Eigen::VectorXd integral = Eigen::VectorXd::Zero(traj.joints());
  for (std::size_t s : kv.spans()) {
    const double a = kv[s];
    const double b = kv[s + 1];
    const double h = (b - a) / samples;
    Eigen::VectorXd prev = tjplan::eval_all(traj, a, 3).row(3).transpose();
    for (int j = 1; j <= samples; ++j) {
      const double t = j == samples ? b : a + j * h;
      Eigen::VectorXd cur = tjplan::eval_all(traj, t, 3).row(3).transpose();
      integral += 0.5 * h * (prev.array().square() + cur.array().square()).matrix();
      prev = cur;
    }
  }
  double J = 0.0;
  for (Eigen::Index k = 0; k < integral.size(); ++k) J += std::sqrt(integral(k) / T);
  return J;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

/// Waypoint-pinned random trajectory with I waypoints and K joints.
inline tjplan::SplineTrajectory random_pinned(std::mt19937_64& rng, int I, int K) {
  std::vector<double> d(static_cast<std::size_t>(I - 1));
  for (double& x : d) x = uniform(rng, 0.2, 2.0);
  Eigen::MatrixXd c(K, I + 4);
  for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = uniform(rng, -2.0, 2.0);
  return {tjplan::KnotVector::from_durations(d), c};
}

/// Random clamped quintic with arbitrary (not waypoint-pinned) interior knots.
inline tjplan::SplineTrajectory random_general(std::mt19937_64& rng, int K) {
  const int interior = std::uniform_int_distribution<int>(0, 6)(rng);
  std::vector<double> inner;
  double u = 0.0;
  for (int i = 0; i < interior + 1; ++i) {
    u += uniform(rng, 0.05, 1.5);
    inner.push_back(u);
  }
  const double T = inner.back();
  inner.pop_back();
  std::vector<double> k(6, 0.0);
  k.insert(k.end(), inner.begin(), inner.end());
  for (int i = 0; i < 6; ++i) k.push_back(T);
  const auto M = static_cast<Eigen::Index>(k.size() - 6);
  Eigen::MatrixXd c(K, M);
  for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = uniform(rng, -3.0, 3.0);
  return {tjplan::KnotVector(k), c};
}

inline double rel_err(double approx, double exact, double floor = 1.0) {
  return std::abs(approx - exact) / std::max(std::abs(exact), floor);
}

}  // namespace oracle
