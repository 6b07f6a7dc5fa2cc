#include "tjplan/warm_start.hpp"

#include <algorithm>
#include <string>

#include "tjplan/errors.hpp"
#include "tjplan/model_io.hpp"

namespace tjplan {

nn::Example joint_example(const WaypointPath& path, Eigen::Index joint) {
  const Eigen::Index K = path.joints();
  const Eigen::Index I = path.size();
  if (joint < 0 || joint >= K) throw IndexError("joint index out of range");
  nn::Example e;
  e.source = path.waypoints.col(joint);
  e.context.resize(K - 1, I);
  for (Eigen::Index k = 0, r = 0; k < K; ++k)
    if (k != joint) e.context.row(r++) = path.waypoints.col(k).transpose();
  return e;
}

std::vector<nn::ModelOutput> predict_joints(const nn::ModelParams& model, const WaypointPath& path) {
  path.validate();
  nn::require_joints(model.config, static_cast<int>(path.joints()));
  if (path.size() > model.config.max_waypoints)
    throw UnsupportedLength("path has " + std::to_string(path.size()) + " waypoints, model supports at most " +
                            std::to_string(model.config.max_waypoints));
  std::vector<nn::ModelOutput> out;
  out.reserve(static_cast<std::size_t>(path.joints()));
  for (Eigen::Index k = 0; k < path.joints(); ++k) {
    const nn::Example e = joint_example(path, k);
    out.push_back(nn::forward(model, nn::embed_and_encode(e.source, e.context, model)));
  }
  return out;
}

DecisionVector warm_start_from_outputs(const std::vector<nn::ModelOutput>& outputs, const WaypointPath& path,
                                       const RobotLimits& limits) {
  path.validate();
  limits.validate();
  const Eigen::Index K = path.joints();
  const Eigen::Index I = path.size();
  if (static_cast<Eigen::Index>(outputs.size()) != K || limits.joints() != K)
    throw ParameterError("need one prediction and one limit set per joint");
  const Eigen::Index M = I + 4;
  const Eigen::Index N = I + 10;
  Eigen::VectorXd knots = Eigen::VectorXd::Zero(N);
  for (const auto& o : outputs) {
    if (o.coefficients.size() < M || o.knots.size() < N) throw UnsupportedLength("prediction shorter than the path");
    if (!o.coefficients.head(M).allFinite() || !o.knots.head(N).allFinite())
      throw NumericalBreakdown("non-finite model prediction");
    knots += o.knots.head(N);
  }
  knots /= static_cast<double>(K);

  // Pinned knots 5..I+4 carry the waypoints; the six trailing entries all
  // estimate T, the leading six are zero by construction.
  std::vector<double> interior(knots.data() + 6, knots.data() + 6 + (I - 2));
  std::sort(interior.begin(), interior.end());
  double end = knots.tail(6).mean();
  std::vector<double> pinned(static_cast<std::size_t>(I));
  pinned[0] = 0.0;
  for (Eigen::Index i = 1; i + 1 < I; ++i) {
    const double prev = pinned[static_cast<std::size_t>(i - 1)];
    pinned[static_cast<std::size_t>(i)] = std::max(interior[static_cast<std::size_t>(i - 1)], prev + kMinSpan);
  }
  pinned[static_cast<std::size_t>(I - 1)] = std::max(end, pinned[static_cast<std::size_t>(I - 2)] + kMinSpan);

  DecisionVector dv;
  dv.durations.resize(I - 1);
  for (Eigen::Index i = 0; i + 1 < I; ++i)
    dv.durations(i) = std::max(pinned[static_cast<std::size_t>(i + 1)] - pinned[static_cast<std::size_t>(i)], kMinSpan);
  dv.control_points.resize(K, M);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double q = kControlPointReach * limits.q_max(k);
    dv.control_points.row(k) = outputs[static_cast<std::size_t>(k)].coefficients.head(M).cwiseMax(-q).cwiseMin(q).transpose();
  }
  return dv;
}

DecisionVector warm_start_from_model(const nn::ModelParams& model, const WaypointPath& path,
                                     const RobotLimits& limits) {
  return warm_start_from_outputs(predict_joints(model, path), path, limits);
}

}  // namespace tjplan
