#pragma once

// Paired cold/warm benchmark. Every problem is solved from the cold-start
// heuristic and from a supplied initializer with the same request; the
// initializer's point is also reported unrefined ("model-only").
//
// CSV layouts (version 1):
//   rows:      problem,length,method,status,iterations,objective,jerk,duration,feasible,min_slack,request_hash
//   summary:   method,length,count,converged,iterations_median,iterations_iqr,objective_median,objective_iqr
//   times:     problem,length,method,init_ms,sqp_ms
// rows and summary depend only on the seed and settings; wall times live
// in the separate times file.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tjplan/planner.hpp"

namespace tjplan {

inline constexpr int kBenchCsvVersion = 1;

enum class BenchMethod { Cold = 0, Warm = 1, ModelOnly = 2 };
[[nodiscard]] std::string to_string(BenchMethod m);

struct BenchProblem {
  std::size_t index = 0;
  WaypointPath path;
};

/// n paths per length, joint-space uniform; problem i of the sweep draws
/// from its own stream derived from (seed, i).
[[nodiscard]] std::vector<BenchProblem> sample_problems(const std::vector<int>& lengths, std::size_t per_length,
                                                        const RobotLimits& limits, std::uint64_t seed);

struct BenchRow {
  std::size_t problem = 0;
  int length = 0;
  BenchMethod method = BenchMethod::Cold;
  std::string status;  ///< converged, failed or unrefined
  int iterations = -1; ///< -1 when the run failed
  double objective = 0.0;
  double jerk = 0.0;
  double duration = 0.0;
  bool feasible = false;
  double min_slack = 0.0;
  std::uint64_t request_hash = 0;
  double init_ms = 0.0;
  double sqp_ms = 0.0;
  std::optional<SplineTrajectory> trajectory;  ///< absent for failed runs; not serialized
};

struct BenchAggregate {
  BenchMethod method = BenchMethod::Cold;
  int length = 0;
  std::size_t count = 0;
  std::size_t converged = 0;
  double iterations_median = 0.0;
  double iterations_iqr = 0.0;
  double objective_median = 0.0;
  double objective_iqr = 0.0;
};

struct BenchSummary {
  std::size_t pairs = 0;
  std::size_t warm_wins = 0;      ///< warm converged with strictly fewer iterations (or cold failed)
  double win_rate = 0.0;
  double cold_iterations_median = 0.0;
  double warm_iterations_median = 0.0;
  double iteration_reduction = 0.0;  ///< 1 - warm median / cold median
  double worst_objective_gap = 0.0;  ///< max (warm - cold) / |cold| over converged pairs
  double worst_objective_abs = 0.0;  ///< max (warm - cold) over converged pairs
};

struct BenchReport {
  std::vector<BenchRow> rows;  ///< per problem: cold, warm, model-only
  std::vector<BenchAggregate> aggregates;
  BenchSummary summary;
};

struct BenchSettings {
  PlanRequest base;  ///< path is replaced per problem
  int jobs = 1;
};

/// Builds the warm decision vector for a problem.
using Initializer = std::function<DecisionVector(const BenchProblem&, const RobotLimits&)>;

/// Failed runs are recorded, never dropped.
[[nodiscard]] BenchReport bench_compare(const std::vector<BenchProblem>& problems, const Initializer& warm,
                                        const BenchSettings& settings);

/// Medians/IQRs per (method, length) and the paired summary from rows.
[[nodiscard]] std::vector<BenchAggregate> aggregate_rows(const std::vector<BenchRow>& rows);
[[nodiscard]] BenchSummary summarize_rows(const std::vector<BenchRow>& rows);

/// Linear-interpolated quantile of unsorted values; NaN when empty.
[[nodiscard]] double quantile(std::vector<double> values, double q);

/// FNV-1a over the waypoints, limits, lambda and solver settings.
[[nodiscard]] std::uint64_t request_hash(const PlanRequest& request);

[[nodiscard]] std::string rows_csv(const BenchReport& r);
[[nodiscard]] std::string summary_csv(const BenchReport& r);
[[nodiscard]] std::string times_csv(const BenchReport& r);
/// Boxplot of iteration counts per (length, method).
[[nodiscard]] std::string iterations_svg(const BenchReport& r);

/// <prefix>.csv, <prefix>_summary.csv, <prefix>_times.csv, <prefix>.svg
void write_bench(const BenchReport& r, const std::string& prefix);

}  // namespace tjplan
