#include "tjplan/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include "tjplan/errors.hpp"
#include "tjplan/json_io.hpp"
#include "tjplan/warm_start.hpp"

namespace tjplan {

namespace {

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int int_draw(std::mt19937_64& rng, int lo, int hi) {
  const auto n = static_cast<std::uint64_t>(hi - lo + 1);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do r = rng();
  while (r >= limit);
  return lo + static_cast<int>(r % n);
}

Split split_from(const std::string& s, std::size_t index) {
  if (s == "train") return Split::Train;
  if (s == "validation") return Split::Validation;
  if (s == "test") return Split::Test;
  throw LoadError("record " + std::to_string(index) + ": unknown split '" + s + "'");
}

std::string limits_json(const RobotLimits& l) {
  auto v = [](const Eigen::VectorXd& x) { return std::span<const double>(x.data(), static_cast<std::size_t>(x.size())); };
  return json_io::ObjectWriter()
      .field("q_max", v(l.q_max))
      .field("qd_max", v(l.qd_max))
      .field("qdd_max", v(l.qdd_max))
      .field("qddd_max", v(l.qddd_max))
      .str();
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

RobotLimits limits_from(const json_io::Json& j) {
  RobotLimits l;
  l.q_max = to_eigen(json_io::to_vector(j.at("q_max")));
  l.qd_max = to_eigen(json_io::to_vector(j.at("qd_max")));
  l.qdd_max = to_eigen(json_io::to_vector(j.at("qdd_max")));
  l.qddd_max = to_eigen(json_io::to_vector(j.at("qddd_max")));
  l.validate();
  return l;
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

SplineTrajectory TrajectoryRecord::trajectory() const { return SplineTrajectory(KnotVector(knots), control_points); }

std::vector<const TrajectoryRecord*> Dataset::split(Split s) const {
  std::vector<const TrajectoryRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

WaypointPath sample_path(Eigen::Index joints, Eigen::Index waypoints, const RobotLimits& limits,
                         std::mt19937_64& rng) {
  limits.validate();
  if (waypoints < 2) throw ParameterError("a path needs at least two waypoints");
  if (limits.joints() != joints) throw ParameterError("limits and joint count disagree");
  WaypointPath p{Eigen::MatrixXd(waypoints, joints)};
  for (Eigen::Index i = 0; i < waypoints; ++i)
    for (Eigen::Index k = 0; k < joints; ++k) p.waypoints(i, k) = 0.9 * limits.q_max(k) * (2.0 * unit_draw(rng) - 1.0);
  return p;
}

std::vector<Split> assign_splits(std::size_t total) {
  std::vector<std::size_t> rank(total);
  std::iota(rank.begin(), rank.end(), 0);
  std::sort(rank.begin(), rank.end(), [](std::size_t a, std::size_t b) {
    const auto ha = splitmix64(a), hb = splitmix64(b);
    return ha != hb ? ha < hb : a < b;
  });
  const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(total)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(total)));
  std::vector<Split> out(total, Split::Test);
  for (std::size_t p = 0; p < total; ++p) {
    if (p < n_train) {
      out[rank[p]] = Split::Train;
    } else if (p < n_train + n_val) {
      out[rank[p]] = Split::Validation;
    }
  }
  return out;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& f) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Dataset generate_dataset(const GenerateSettings& s, const std::function<void(std::size_t, std::size_t)>& progress) {
  s.limits.validate();
  s.solver.validate();
  if (s.count < 1) throw ParameterError("dataset size must be at least 1");
  if (s.min_length < 2 || s.max_length < s.min_length) throw ParameterError("invalid path length range");
  if (!(s.lambda >= 0.0 && s.lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1]");

  std::vector<std::optional<TrajectoryRecord>> kept(s.count);
  std::vector<DiscardedAttempt> dropped(s.count);
  std::atomic<std::size_t> done{0};
  parallel_for(s.count, s.jobs, [&](std::size_t a) {
    std::mt19937_64 rng(splitmix64(s.seed ^ splitmix64(a)));
    const int I = int_draw(rng, s.min_length, s.max_length);
    const WaypointPath path = sample_path(s.limits.joints(), I, s.limits, rng);
    PlanRequest req;
    req.path = path;
    req.limits = s.limits;
    req.lambda = s.lambda;
    req.solver = s.solver;
    try {
      const PlanResult res = plan(req, cold_start(path, s.limits));
      if (res.solver.status != sqp::SqpStatus::Converged) {
        dropped[a] = {a, I, "solver status " + sqp::to_string(res.solver.status)};
      } else {
        TrajectoryRecord r;
        r.lambda = s.lambda;
        r.waypoints = path.waypoints;
        const auto kv = res.trajectory.knots().values();
        r.knots.assign(kv.begin(), kv.end());
        r.control_points = res.trajectory.control_points();
        r.objective = res.objective;
        r.jerk = res.jerk;
        r.duration = res.duration;
        r.iterations = res.total_iterations;
        kept[a] = std::move(r);
      }
    } catch (const std::exception& e) {
      dropped[a] = {a, I, e.what()};
    }
    const std::size_t d = ++done;
    if (progress) progress(d, s.count);
  });

  Dataset data;
  DatasetManifest& m = data.manifest;
  m.attempted = s.count;
  m.seed = s.seed;
  m.limits = s.limits;
  m.lambda = s.lambda;
  m.min_length = s.min_length;
  m.max_length = s.max_length;
  for (std::size_t a = 0; a < s.count; ++a) {
    if (kept[a]) {
      data.records.push_back(std::move(*kept[a]));
    } else {
      m.discarded.push_back(dropped[a]);
    }
  }
  m.total = data.records.size();
  if (static_cast<double>(m.total) < s.min_success * static_cast<double>(s.count)) {
    std::ostringstream msg;
    msg << "only " << m.total << " of " << s.count << " solves converged";
    if (!m.discarded.empty()) msg << "; first failure (attempt " << m.discarded.front().attempt << ", I="
                                  << m.discarded.front().waypoints << "): " << m.discarded.front().reason;
    throw PlanningFailed(msg.str());
  }
  const std::vector<Split> splits = assign_splits(m.total);
  for (std::size_t i = 0; i < m.total; ++i) {
    TrajectoryRecord& r = data.records[i];
    r.index = i;
    r.split = splits[i];
    ++m.split_counts[static_cast<std::size_t>(r.split)];
    ++m.length_histogram[static_cast<int>(r.waypoint_count())];
  }
  return data;
}

std::string record_to_json(const TrajectoryRecord& r) {
  return json_io::ObjectWriter()
      .field("index", r.index)
      .field("split", to_string(r.split))
      .field("K", static_cast<long long>(r.joints()))
      .field("I", static_cast<long long>(r.waypoint_count()))
      .field("lambda", r.lambda)
      .field("waypoints", r.waypoints)
      .field("knots", std::span<const double>(r.knots))
      .field("control_points", r.control_points)
      .field("objective", r.objective)
      .field("jerk", r.jerk)
      .field("duration", r.duration)
      .field("iterations", r.iterations)
      .str();
}

std::string manifest_to_json(const DatasetManifest& m) {
  json_io::ObjectWriter hist;
  for (const auto& [len, n] : m.length_histogram) hist.field(std::to_string(len), n);
  std::string discarded = "[";
  for (std::size_t i = 0; i < m.discarded.size(); ++i) {
    if (i) discarded += ",";
    discarded += json_io::ObjectWriter()
                     .field("attempt", m.discarded[i].attempt)
                     .field("I", m.discarded[i].waypoints)
                     .field("reason", m.discarded[i].reason)
                     .str();
  }
  discarded += "]";
  return json_io::ObjectWriter()
      .field("format_version", m.version)
      .field("attempted", m.attempted)
      .field("total", m.total)
      .raw("splits", json_io::ObjectWriter()
                         .field("train", m.split_counts[0])
                         .field("validation", m.split_counts[1])
                         .field("test", m.split_counts[2])
                         .str())
      .raw("length_histogram", hist.str())
      .raw("seed", std::to_string(m.seed))
      .raw("limits", limits_json(m.limits))
      .field("lambda", m.lambda)
      .field("min_length", m.min_length)
      .field("max_length", m.max_length)
      .raw("discarded", discarded)
      .str();
}

void write_dataset(const Dataset& data, const std::string& name) {
  std::ofstream lines(name + ".jsonl", std::ios::binary);
  if (!lines) throw std::runtime_error("cannot write " + name + ".jsonl");
  for (const auto& r : data.records) lines << record_to_json(r) << '\n';
  std::ofstream manifest(name + ".manifest.json", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write " + name + ".manifest.json");
  manifest << manifest_to_json(data.manifest) << '\n';
  if (!lines || !manifest) throw std::runtime_error("failed writing dataset " + name);
}

void validate_record(const TrajectoryRecord& r, const RobotLimits& limits) {
  const Eigen::Index I = r.waypoint_count();
  const Eigen::Index K = r.joints();
  if (I < 2 || K != limits.joints()) throw LoadError("waypoints have the wrong shape");
  if (static_cast<Eigen::Index>(r.knots.size()) != I + 10) throw LoadError("knot vector length is not I+10");
  if (r.control_points.rows() != K || r.control_points.cols() != I + 4)
    throw LoadError("control points are not K x (I+4)");
  if (!(r.lambda >= 0.0 && r.lambda <= 1.0)) throw LoadError("lambda outside [0, 1]");
  std::optional<SplineTrajectory> traj;
  try {
    traj.emplace(KnotVector(r.knots), r.control_points);
  } catch (const std::exception& e) {
    throw LoadError(std::string("invalid knot vector: ") + e.what());
  }
  const FeasibilityReport f = check_feasibility(*traj, r.path(), limits, 50);
  if (f.min_kinematic_slack < -1e-6) throw LoadError("kinematic limits violated by " + json_io::format_double(-f.min_kinematic_slack));
  if (f.max_boundary > 1e-6) throw LoadError("boundary conditions violated");
  if (f.max_interpolation > 1e-6) throw LoadError("waypoints missed");
}

Dataset load_dataset(const std::string& name) {
  Dataset data;
  {
    std::ifstream in(name + ".manifest.json");
    if (!in) throw LoadError("cannot open " + name + ".manifest.json");
    try {
      const auto j = json_io::Json::parse(in);
      DatasetManifest& m = data.manifest;
      m.version = j.at("format_version").get<int>();
      if (m.version != kDatasetFormatVersion)
        throw LoadError("dataset format version " + std::to_string(m.version) + " is not supported");
      m.attempted = j.at("attempted").get<std::size_t>();
      m.total = j.at("total").get<std::size_t>();
      m.split_counts = {j.at("splits").at("train").get<std::size_t>(), j.at("splits").at("validation").get<std::size_t>(),
                        j.at("splits").at("test").get<std::size_t>()};
      for (const auto& [k, v] : j.at("length_histogram").items()) m.length_histogram[std::stoi(k)] = v.get<std::size_t>();
      m.seed = j.at("seed").get<std::uint64_t>();
      m.limits = limits_from(j.at("limits"));
      m.lambda = j.at("lambda").get<double>();
      m.min_length = j.at("min_length").get<int>();
      m.max_length = j.at("max_length").get<int>();
      for (const auto& d : j.at("discarded"))
        m.discarded.push_back({d.at("attempt").get<std::size_t>(), d.at("I").get<int>(), d.at("reason").get<std::string>()});
    } catch (const LoadError&) {
      throw;
    } catch (const std::exception& e) {
      throw LoadError("manifest: " + std::string(e.what()));
    }
  }
  const DatasetManifest& m = data.manifest;
  if (m.split_counts[0] + m.split_counts[1] + m.split_counts[2] != m.total)
    throw LoadError("manifest split counts do not sum to the total");

  std::ifstream in(name + ".jsonl");
  if (!in) throw LoadError("cannot open " + name + ".jsonl");
  std::string line;
  std::array<std::size_t, 3> seen{};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t index = data.records.size();
    TrajectoryRecord r;
    try {
      const auto j = json_io::Json::parse(line);
      r.index = j.at("index").get<std::size_t>();
      if (r.index != index) throw LoadError("out of order (index " + std::to_string(r.index) + ")");
      r.split = split_from(j.at("split").get<std::string>(), index);
      r.lambda = j.at("lambda").get<double>();
      r.waypoints = json_io::to_matrix(j.at("waypoints"));
      r.knots = json_io::to_vector(j.at("knots"));
      r.control_points = json_io::to_matrix(j.at("control_points"));
      r.objective = j.at("objective").get<double>();
      r.jerk = j.at("jerk").get<double>();
      r.duration = j.at("duration").get<double>();
      r.iterations = j.at("iterations").get<int>();
      if (j.at("K").get<Eigen::Index>() != r.joints() || j.at("I").get<Eigen::Index>() != r.waypoint_count())
        throw LoadError("K or I disagrees with the arrays");
      validate_record(r, m.limits);
    } catch (const std::exception& e) {
      throw LoadError("record " + std::to_string(index) + ": " + e.what());
    }
    ++seen[static_cast<std::size_t>(r.split)];
    data.records.push_back(std::move(r));
  }
  if (data.records.size() != m.total)
    throw LoadError("manifest lists " + std::to_string(m.total) + " records, file has " +
                    std::to_string(data.records.size()));
  if (seen != m.split_counts) throw LoadError("split counts differ from the manifest");
  return data;
}

std::vector<nn::Example> examples_from(const TrajectoryRecord& r) {
  const WaypointPath path = r.path();
  std::vector<nn::Example> out;
  for (Eigen::Index k = 0; k < r.joints(); ++k) {
    nn::Example e = joint_example(path, k);
    e.coef_target = r.control_points.row(k).transpose();
    e.knot_target = to_eigen(r.knots);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<nn::Example> examples_from(const std::vector<const TrajectoryRecord*>& records) {
  std::vector<nn::Example> out;
  for (const auto* r : records) {
    auto e = examples_from(*r);
    out.insert(out.end(), std::make_move_iterator(e.begin()), std::make_move_iterator(e.end()));
  }
  return out;
}

std::vector<nn::ModelOutput> oracle_outputs(const TrajectoryRecord& r, const nn::ModelConfig& config) {
  std::vector<nn::ModelOutput> out;
  for (const auto& e : examples_from(r)) out.push_back(nn::target_of(e, config));
  return out;
}

}  // namespace tjplan
