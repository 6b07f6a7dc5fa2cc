#include "tjplan/spline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tjplan/errors.hpp"
#include "tjplan/json_io.hpp"

namespace tjplan {

namespace {

// Interior spans may come out a hair below kMinSpan after cumulative sums.
constexpr double kSpanSlack = 1e-9;

std::array<std::array<double, kOrder>, kOrder> local_basis(const KnotVector& knots,
                                                           std::size_t span, double t,
                                                           int max_order) {
  std::array<std::array<double, kOrder>, kOrder> ders{};
  basis_derivatives<double>(span, t, [&](std::size_t j) { return knots[j]; }, max_order, ders);
  return ders;
}

void check_time(const KnotVector& knots, double t) {
  if (!(t >= 0.0 && t <= knots.duration()))
    throw DomainError("time " + std::to_string(t) + " outside [0, " +
                      std::to_string(knots.duration()) + "]");
}

}  // namespace

// ---------------------------------------------------------------------------
// KnotVector

KnotVector::KnotVector(std::vector<double> knots) : knots_(std::move(knots)) {
  const std::size_t n = knots_.size();
  if (n < 2 * kOrder) throw ParameterError("knot vector needs at least 12 entries");
  for (double k : knots_)
    if (!std::isfinite(k)) throw ParameterError("non-finite knot");
  for (std::size_t i = 1; i < n; ++i)
    if (knots_[i] < knots_[i - 1]) throw ParameterError("knots must be non-decreasing");
  for (std::size_t i = 0; i < kOrder; ++i) {
    if (knots_[i] != 0.0) throw ParameterError("knot vector must start with six zeros");
    if (knots_[n - 1 - i] != knots_.back())
      throw ParameterError("knot vector must end with six equal knots");
  }
  if (!(knots_.back() > 0.0)) throw DegenerateTrajectory("trajectory duration must be positive");
  for (std::size_t s = kDegree; s + kOrder < n; ++s) {
    if (knots_[s + 1] - knots_[s] < kMinSpan * (1.0 - kSpanSlack))
      throw ParameterError("knot span shorter than the minimum span duration");
  }
}

KnotVector KnotVector::from_durations(std::span<const double> durations) {
  if (durations.empty()) throw ParameterError("at least one span duration is required");
  std::vector<double> knots(durations.size() + 11, 0.0);
  double u = 0.0;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    if (!(durations[i] >= kMinSpan * (1.0 - kSpanSlack)))
      throw ParameterError("span duration below minimum");
    u += durations[i];
    knots[kOrder + i] = u;
  }
  for (std::size_t i = kOrder + durations.size(); i < knots.size(); ++i) knots[i] = u;
  KnotVector kv(std::move(knots));
  kv.durations_ = std::vector<double>(durations.begin(), durations.end());
  return kv;
}

std::size_t KnotVector::find_span(double t) const {
  check_time(*this, t);
  const std::size_t last = knots_.size() - kOrder - 1;  // last non-empty span index
  if (t >= knots_[last + 1]) return last;
  // upper_bound over [degree, last+1]
  auto it = std::upper_bound(knots_.begin() + kDegree, knots_.begin() + static_cast<long>(last) + 1, t);
  return static_cast<std::size_t>(it - knots_.begin()) - 1;
}

std::vector<std::size_t> KnotVector::spans() const {
  std::vector<std::size_t> out;
  for (std::size_t s = kDegree; s + kOrder < knots_.size(); ++s)
    if (knots_[s + 1] > knots_[s]) out.push_back(s);
  return out;
}

KnotVector KnotVector::scaled(double alpha) const {
  if (!(alpha > 0.0)) throw ParameterError("scale factor must be positive");
  if (durations_) {
    std::vector<double> d = *durations_;
    for (double& x : d) x *= alpha;
    return from_durations(d);
  }
  std::vector<double> k = knots_;
  for (double& x : k) x *= alpha;
  return KnotVector(std::move(k));
}

BasisValues basis(const KnotVector& knots, double t) {
  const std::size_t span = knots.find_span(t);
  const auto ders = local_basis(knots, span, t, 0);
  BasisValues out;
  out.first = span - kDegree;
  out.values = ders[0];
  return out;
}

// ---------------------------------------------------------------------------
// Limits and paths

double RobotLimits::bound(Eigen::Index joint, int order) const {
  switch (order) {
    case 0: return q_max(joint);
    case 1: return qd_max(joint);
    case 2: return qdd_max(joint);
    case 3: return qddd_max(joint);
    default: throw ParameterError("derivative order must be 0..3");
  }
}

void RobotLimits::validate() const {
  const auto k = q_max.size();
  if (k < 1) throw ParameterError("limits need at least one joint");
  if (qd_max.size() != k || qdd_max.size() != k || qddd_max.size() != k)
    throw ParameterError("limit vectors must all have length K");
  for (const auto* v : {&q_max, &qd_max, &qdd_max, &qddd_max})
    for (Eigen::Index i = 0; i < k; ++i)
      if (!((*v)(i) > 0.0) || !std::isfinite((*v)(i)))
        throw ParameterError("limits must be finite and strictly positive");
}

RobotLimits RobotLimits::scaled(double factor) const {
  return {q_max * factor, qd_max * factor, qdd_max * factor, qddd_max * factor};
}

RobotLimits RobotLimits::head(Eigen::Index k) const {
  if (k < 1 || k > joints()) throw ParameterError("joint count out of range");
  return {q_max.head(k), qd_max.head(k), qdd_max.head(k), qddd_max.head(k)};
}

RobotLimits RobotLimits::default_arm() {
  constexpr double pi = std::numbers::pi;
  RobotLimits l;
  l.q_max.resize(6);
  l.q_max << pi, 2.25, 2.58, pi, 2.10, pi;
  l.qd_max.resize(6);
  l.qd_max << 1.39, 1.39, 1.39, 1.22, 1.22, 1.22;
  l.qdd_max.resize(6);
  l.qdd_max << 2.0, 2.0, 2.0, 2.5, 2.5, 2.5;
  l.qddd_max.resize(6);
  l.qddd_max << 8.0, 8.0, 8.0, 10.0, 10.0, 10.0;
  return l;
}

void WaypointPath::validate() const {
  if (waypoints.rows() < 2) throw ParameterError("a path needs at least two waypoints");
  if (waypoints.cols() < 1) throw ParameterError("a path needs at least one joint");
  if (!waypoints.allFinite()) throw ParameterError("non-finite waypoint");
}

void WaypointPath::check_within(const RobotLimits& limits) const {
  if (limits.joints() != joints()) throw ParameterError("path and limits disagree on K");
  for (Eigen::Index i = 0; i < waypoints.rows(); ++i)
    for (Eigen::Index k = 0; k < waypoints.cols(); ++k)
      if (std::abs(waypoints(i, k)) > limits.q_max(k))
        throw InfeasiblePath("waypoint " + std::to_string(i) + " joint " + std::to_string(k) +
                             " exceeds its position limit");
}

// ---------------------------------------------------------------------------
// SplineTrajectory and functionals

SplineTrajectory::SplineTrajectory(KnotVector knots, Eigen::MatrixXd control_points)
    : knots_(std::move(knots)), ctrl_(std::move(control_points)) {
  if (ctrl_.rows() < 1) throw ParameterError("trajectory needs at least one joint");
  if (static_cast<std::size_t>(ctrl_.cols()) != knots_.num_control_points())
    throw ParameterError("control point count must equal knots - 6");
  if (!ctrl_.allFinite()) throw ParameterError("non-finite control point");
}

double eval(const SplineTrajectory& traj, Eigen::Index joint, double t, int order) {
  if (joint < 0 || joint >= traj.joints()) throw IndexError("joint index out of range");
  if (order < 0 || order > 3) throw ParameterError("derivative order must be 0..3");
  const std::size_t span = traj.knots().find_span(t);
  const auto ders = local_basis(traj.knots(), span, t, order);
  const auto first = static_cast<Eigen::Index>(span - kDegree);
  double v = 0.0;
  for (int j = 0; j < kOrder; ++j) v += traj.control_points()(joint, first + j) * ders[order][j];
  return v;
}

Eigen::MatrixXd eval_all(const SplineTrajectory& traj, double t, int max_order) {
  if (max_order < 0 || max_order > kDegree) throw ParameterError("derivative order out of range");
  const std::size_t span = traj.knots().find_span(t);
  const auto ders = local_basis(traj.knots(), span, t, max_order);
  const auto first = static_cast<Eigen::Index>(span - kDegree);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(max_order + 1, traj.joints());
  for (int r = 0; r <= max_order; ++r)
    for (Eigen::Index k = 0; k < traj.joints(); ++k)
      for (int j = 0; j < kOrder; ++j) out(r, k) += traj.control_points()(k, first + j) * ders[r][j];
  return out;
}

GaussRule gauss_legendre_unit(int points) {
  if (points < 1) throw ParameterError("Gauss rule needs at least one point");
  GaussRule rule;
  rule.nodes.resize(static_cast<std::size_t>(points));
  rule.weights.resize(static_cast<std::size_t>(points));
  const int n = points;
  for (int i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // recompute derivative at the converged node
    double p0 = 1.0;
    double p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = pk;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const auto idx = static_cast<std::size_t>(n - 1 - i);
    rule.nodes[idx] = 0.5 * (x + 1.0);
    rule.weights[idx] = 1.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

double total_jerk(const SplineTrajectory& traj) {
  const KnotVector& kv = traj.knots();
  const double T = kv.duration();
  if (!(T > 0.0)) throw DegenerateTrajectory("total jerk undefined for zero duration");
  static const GaussRule rule = gauss_legendre_unit(3);
  Eigen::VectorXd integral = Eigen::VectorXd::Zero(traj.joints());
  for (std::size_t s : kv.spans()) {
    const double a = kv[s];
    const double h = kv[s + 1] - a;
    for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
      const double t = a + rule.nodes[g] * h;
      const auto ders = local_basis(kv, s, t, 3);
      const auto first = static_cast<Eigen::Index>(s - kDegree);
      for (Eigen::Index k = 0; k < traj.joints(); ++k) {
        double jerk = 0.0;
        for (int j = 0; j < kOrder; ++j) jerk += traj.control_points()(k, first + j) * ders[3][j];
        integral(k) += h * rule.weights[g] * jerk * jerk;
      }
    }
  }
  double J = 0.0;
  for (Eigen::Index k = 0; k < traj.joints(); ++k) J += std::sqrt(integral(k) / T);
  return J;
}

double scalar_objective(double jerk, double duration, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1]");
  return lambda * jerk + (1.0 - lambda) * duration;
}

double scalar_objective(const SplineTrajectory& traj, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1]");
  return scalar_objective(total_jerk(traj), traj.duration(), lambda);
}

Eigen::VectorXd kinematic_residuals(const SplineTrajectory& traj, const RobotLimits& limits,
                                    std::span<const double> grid) {
  if (grid.empty()) throw ParameterError("collocation grid is empty");
  if (limits.joints() != traj.joints()) throw ParameterError("limits and trajectory disagree on K");
  const auto K = traj.joints();
  const auto G = static_cast<Eigen::Index>(grid.size());
  Eigen::VectorXd out(K * G * 4);
  std::vector<Eigen::MatrixXd> values;
  values.reserve(grid.size());
  for (double t : grid) values.push_back(eval_all(traj, t, 3));
  Eigen::Index row = 0;
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index g = 0; g < G; ++g)
      for (int r = 0; r < 4; ++r) out(row++) = limits.bound(k, r) - std::abs(values[static_cast<std::size_t>(g)](r, k));
  return out;
}

Eigen::VectorXd boundary_residuals(const SplineTrajectory& traj) {
  const auto K = traj.joints();
  const Eigen::MatrixXd start = eval_all(traj, 0.0, 2);
  const Eigen::MatrixXd end = eval_all(traj, traj.duration(), 2);
  Eigen::VectorXd out(4 * K);
  for (Eigen::Index k = 0; k < K; ++k) {
    out(4 * k + 0) = start(1, k);
    out(4 * k + 1) = end(1, k);
    out(4 * k + 2) = start(2, k);
    out(4 * k + 3) = end(2, k);
  }
  return out;
}

Eigen::MatrixXd interpolation_residuals(const SplineTrajectory& traj, const WaypointPath& path,
                                        std::span<const double> times) {
  if (static_cast<Eigen::Index>(times.size()) != path.size())
    throw ParameterError("waypoint time count does not match path length");
  if (path.joints() != traj.joints()) throw ParameterError("path and trajectory disagree on K");
  Eigen::MatrixXd out(path.size(), path.joints());
  for (Eigen::Index i = 0; i < path.size(); ++i) {
    const Eigen::MatrixXd v = eval_all(traj, times[static_cast<std::size_t>(i)], 0);
    for (Eigen::Index k = 0; k < path.joints(); ++k) out(i, k) = v(0, k) - path.waypoints(i, k);
  }
  return out;
}

std::vector<double> waypoint_times(const KnotVector& knots) {
  std::vector<double> out;
  for (std::size_t i = kDegree; i + kDegree < knots.size(); ++i) out.push_back(knots[i]);
  return out;
}

// ---------------------------------------------------------------------------
// JSON

std::string trajectory_to_json(const SplineTrajectory& traj) {
  json_io::ObjectWriter w;
  w.field("degree", kDegree);
  w.field("knots", traj.knots().values());
  w.field("joints", traj.control_points());
  return w.str();
}

SplineTrajectory trajectory_from_json(const std::string& text) {
  json_io::Json j;
  try {
    j = json_io::Json::parse(text);
  } catch (const std::exception& e) {
    throw ParameterError(std::string("invalid trajectory JSON: ") + e.what());
  }
  if (!j.contains("degree") || j["degree"] != kDegree)
    throw ParameterError("trajectory JSON must have degree 5");
  if (!j.contains("knots") || !j.contains("joints"))
    throw ParameterError("trajectory JSON needs knots and joints");
  return SplineTrajectory(KnotVector(json_io::to_vector(j["knots"])), json_io::to_matrix(j["joints"]));
}

}  // namespace tjplan
