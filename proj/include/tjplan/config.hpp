#pragma once

// Key-value configuration files.
//
//   # comment
//   joints = 6
//   q_max = 3.14159, 2.25, 2.58, 3.14159, 2.10, 3.14159
//   qd_max = ...            (also qdd_max, qddd_max)
//   lambda = 0.5
//   margin = 0.99
//   collocation_density = 5
//   max_span_duration = 60
//   exact_hessian = true
//   max_iterations = 200
//   kkt_tolerance = 1e-6
//   constraint_tolerance = 1e-8
//
// Unset keys keep the defaults of PlanRequest and RobotLimits::default_arm();
// `joints = k` truncates the default arm to its first k joints before any
// explicit limit rows apply. Unknown keys are errors.

#include <optional>
#include <string>

#include "tjplan/planner.hpp"

namespace tjplan {

inline constexpr const char* kConfigEnv = "TJPLAN_CONFIG";

struct PlannerConfig {
  RobotLimits limits = RobotLimits::default_arm();
  double lambda = 0.5;
  double margin = 0.99;
  int collocation_density = 5;
  double max_span_duration = 60.0;
  bool exact_hessian = true;
  sqp::SqpSettings solver;

  /// A request for `path` carrying every setting above.
  [[nodiscard]] PlanRequest request(const WaypointPath& path) const;
};

/// Throws ParameterError with the line number on malformed input.
[[nodiscard]] PlannerConfig parse_config(const std::string& text);
/// Throws ParameterError if the file cannot be read.
[[nodiscard]] PlannerConfig load_config(const std::string& path);
/// `explicit_path` if given, else $TJPLAN_CONFIG if set, else defaults.
[[nodiscard]] PlannerConfig resolve_config(const std::optional<std::string>& explicit_path);

[[nodiscard]] std::string config_to_text(const PlannerConfig& c);

}  // namespace tjplan
