#pragma once

#include <vector>

#include "tjplan/planner.hpp"
#include "tjplan/transformer.hpp"

namespace tjplan {

/// Predicted control points are clamped to +-kControlPointReach * q_max.
/// Optimal splines routinely put interior control points beyond q_max (up
/// to ~7x on generated data) while the curve itself stays inside, so the
/// clamp only guards against runaway predictions.
inline constexpr double kControlPointReach = 10.0;

/// Model input for one joint: its waypoints as source, the other joints in
/// index order as context. Targets are left empty.
[[nodiscard]] nn::Example joint_example(const WaypointPath& path, Eigen::Index joint);

/// One forward pass per joint.
[[nodiscard]] std::vector<nn::ModelOutput> predict_joints(const nn::ModelParams& model, const WaypointPath& path);

/// Turns per-joint predictions into a decision vector: joint k's
/// coefficients from pass k (clamped, see kControlPointReach), knots averaged over the
/// passes, interior knots sorted, clamped ends enforced and every span at
/// least kMinSpan.
[[nodiscard]] DecisionVector warm_start_from_outputs(const std::vector<nn::ModelOutput>& outputs,
                                                     const WaypointPath& path, const RobotLimits& limits);

/// Throws UnsupportedLength if the path is longer than the model allows,
/// UnsupportedConfig on a joint-count mismatch.
[[nodiscard]] DecisionVector warm_start_from_model(const nn::ModelParams& model, const WaypointPath& path,
                                                   const RobotLimits& limits);

}  // namespace tjplan
