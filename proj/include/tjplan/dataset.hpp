#pragma once

// Trajectory datasets: joint-space path sampling, cold-start solving,
// JSON-lines storage with a manifest, and conversion to training examples.
//
// <name>.jsonl holds one record per line:
//   {"index","split","K","I","lambda","waypoints":[[..K..]*I],
//    "knots":[I+10],"control_points":[[..I+4..]*K],
//    "objective","jerk","duration","iterations"}
// <name>.manifest.json holds counts, the length histogram, seed, limits,
// lambda, the discarded attempts and the format version.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tjplan/planner.hpp"
#include "tjplan/transformer.hpp"

namespace tjplan {

inline constexpr int kDatasetFormatVersion = 1;

enum class Split { Train = 0, Validation = 1, Test = 2 };
[[nodiscard]] std::string to_string(Split s);

struct TrajectoryRecord {
  std::size_t index = 0;
  Split split = Split::Train;
  double lambda = 0.5;
  Eigen::MatrixXd waypoints;       ///< I x K
  std::vector<double> knots;       ///< I + 10
  Eigen::MatrixXd control_points;  ///< K x (I + 4)
  double objective = 0.0;
  double jerk = 0.0;
  double duration = 0.0;
  int iterations = 0;

  [[nodiscard]] Eigen::Index joints() const { return waypoints.cols(); }
  [[nodiscard]] Eigen::Index waypoint_count() const { return waypoints.rows(); }
  [[nodiscard]] SplineTrajectory trajectory() const;
  [[nodiscard]] WaypointPath path() const { return {waypoints}; }
};

struct DiscardedAttempt {
  std::size_t attempt = 0;
  int waypoints = 0;
  std::string reason;
};

struct DatasetManifest {
  int version = kDatasetFormatVersion;
  std::size_t attempted = 0;
  std::size_t total = 0;
  std::array<std::size_t, 3> split_counts{};  ///< train, validation, test
  std::map<int, std::size_t> length_histogram;
  std::uint64_t seed = 0;
  RobotLimits limits;
  double lambda = 0.5;
  int min_length = 0;
  int max_length = 0;
  std::vector<DiscardedAttempt> discarded;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<TrajectoryRecord> records;

  [[nodiscard]] std::vector<const TrajectoryRecord*> split(Split s) const;
};

/// Stateless stream derivation so every record can be drawn independently.
[[nodiscard]] std::uint64_t splitmix64(std::uint64_t x);

/// I x K waypoints, each U(-0.9 q_max, 0.9 q_max). Throws ParameterError for I < 2.
[[nodiscard]] WaypointPath sample_path(Eigen::Index joints, Eigen::Index waypoints, const RobotLimits& limits,
                                       std::mt19937_64& rng);

/// Split of kept record `index` out of `total`: records are ranked by
/// splitmix64(index), the first round(0.7 n) ranks train, the next
/// round(0.2 n) validation, the rest test.
[[nodiscard]] std::vector<Split> assign_splits(std::size_t total);

struct GenerateSettings {
  std::size_t count = 2000;  ///< attempted records
  int min_length = 6;
  int max_length = 48;
  RobotLimits limits = RobotLimits::default_arm();
  double lambda = 0.5;
  std::uint64_t seed = 1;
  int jobs = 1;
  double min_success = 0.5;  ///< abort below this converged fraction
  sqp::SqpSettings solver;
};

/// Solves every sampled path from a cold start; non-converged or
/// post-check-failing attempts are dropped and listed in the manifest.
/// Throws PlanningFailed when fewer than min_success of the attempts survive.
/// `progress`, if set, is called after each finished attempt (any thread).
[[nodiscard]] Dataset generate_dataset(const GenerateSettings& settings,
                                       const std::function<void(std::size_t done, std::size_t total)>& progress = {});

void write_dataset(const Dataset& data, const std::string& name);
[[nodiscard]] std::string record_to_json(const TrajectoryRecord& r);
[[nodiscard]] std::string manifest_to_json(const DatasetManifest& m);

/// Reads <name>.jsonl and <name>.manifest.json, re-validating each record
/// (shapes, knot structure, interpolation, boundary conditions, dense
/// kinematic check with 1e-6 slack). Throws LoadError naming the record.
[[nodiscard]] Dataset load_dataset(const std::string& name);

/// Dense re-check used on load; throws LoadError with the reason.
void validate_record(const TrajectoryRecord& r, const RobotLimits& limits);

/// One example per joint: source joint k, the others as context, targets
/// the joint's control points and the shared knot vector.
[[nodiscard]] std::vector<nn::Example> examples_from(const TrajectoryRecord& r);
[[nodiscard]] std::vector<nn::Example> examples_from(const std::vector<const TrajectoryRecord*>& records);

/// Ground-truth model outputs for a record, one per joint, padded to the
/// model's output lengths; the oracle stub used in benchmarks and tests.
[[nodiscard]] std::vector<nn::ModelOutput> oracle_outputs(const TrajectoryRecord& r, const nn::ModelConfig& config);

/// Runs f(i) for i in [0, n) on `jobs` threads; f must only touch slot i.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& f);

}  // namespace tjplan
