#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tjplan/bench.hpp"
#include "tjplan/config.hpp"
#include "tjplan/dataset.hpp"
#include "tjplan/errors.hpp"
#include "tjplan/warm_start.hpp"

using namespace tjplan;

namespace {

const Dataset& small_dataset() {
  static const Dataset d = [] {
    GenerateSettings s;
    s.count = 40;
    s.min_length = 4;
    s.max_length = 8;
    s.limits = RobotLimits::default_arm().head(3);
    s.seed = 21;
    return generate_dataset(s);
  }();
  return d;
}

BenchSettings settings_for(const RobotLimits& limits) {
  BenchSettings s;
  s.base.limits = limits;
  s.base.path = WaypointPath{Eigen::MatrixXd::Zero(2, limits.joints())};
  return s;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("quantiles interpolate linearly") {
  CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == 2.5);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.25) == 1.75);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.75) == 3.25);
  CHECK(quantile({7.0}, 0.25) == 7.0);
  CHECK(std::isnan(quantile({}, 0.5)));
}

TEST_CASE("ground-truth warm starts finish within three iterations") {
  const auto& d = small_dataset();
  std::vector<BenchProblem> problems;
  std::map<std::size_t, const TrajectoryRecord*> by_index;
  for (const auto& r : d.records) {
    problems.push_back({r.index, r.path()});
    by_index[r.index] = &r;
  }
  const Initializer oracle = [&](const BenchProblem& p, const RobotLimits&) {
    return encode(by_index.at(p.index)->trajectory());
  };
  const auto rep = bench_compare(problems, oracle, settings_for(d.manifest.limits));
  for (const auto& row : rep.rows) {
    if (row.method != BenchMethod::Warm) continue;
    CHECK(row.status == "converged");
    CHECK(row.iterations <= 3);
    CHECK(row.objective == doctest::Approx(by_index.at(row.problem)->objective).epsilon(1e-9));
  }
  // the stub's unrefined point is the stored optimum itself
  for (const auto& row : rep.rows)
    if (row.method == BenchMethod::ModelOnly) CHECK(row.feasible);
}

TEST_CASE("an untrained model still yields a well-formed paired report") {
  const RobotLimits lim = RobotLimits::default_arm().head(3);
  const auto problems = sample_problems({4, 6}, 5, lim, 3);
  REQUIRE(problems.size() == 10);
  nn::ModelConfig c;
  c.joints = 3;
  c.max_waypoints = 6;
  c.dim = 8;
  c.heads = 2;
  c.context_layers = c.source_layers = 1;
  const auto model = nn::ModelParams::init(c, 9);
  const Initializer warm = [&](const BenchProblem& p, const RobotLimits& l) {
    return warm_start_from_model(model, p.path, l);
  };
  auto s = settings_for(lim);
  const auto rep = bench_compare(problems, warm, s);
  REQUIRE(rep.rows.size() == 30);

  std::map<std::size_t, std::set<std::uint64_t>> hashes;
  for (const auto& row : rep.rows) {
    hashes[row.problem].insert(row.request_hash);
    if (row.status == "converged") {
      CHECK(row.feasible);
      REQUIRE(row.trajectory);
      CHECK(std::abs(scalar_objective(*row.trajectory, s.base.lambda) - row.objective) <= 1e-9);
      CHECK(row.iterations >= 0);
    }
  }
  for (const auto& [p, h] : hashes) CHECK(h.size() == 1);

  // stored aggregates equal a recomputation from rows
  const auto again = aggregate_rows(rep.rows);
  REQUIRE(again.size() == rep.aggregates.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].method == rep.aggregates[i].method);
    CHECK(again[i].length == rep.aggregates[i].length);
    CHECK(again[i].count == rep.aggregates[i].count);
    CHECK(again[i].iterations_median == rep.aggregates[i].iterations_median);
    CHECK(again[i].objective_iqr == rep.aggregates[i].objective_iqr);
  }
  CHECK(rep.summary.pairs == 10);
  CHECK(rep.summary.warm_wins <= 10);

  // CSV text does not depend on thread count; wall times live elsewhere
  s.jobs = 3;
  const auto threaded = bench_compare(problems, warm, s);
  CHECK(rows_csv(threaded) == rows_csv(rep));
  CHECK(summary_csv(threaded) == summary_csv(rep));
  const auto csv = lines(rows_csv(rep));
  REQUIRE(csv.size() == 31);
  CHECK(csv[0] == "problem,length,method,status,iterations,objective,jerk,duration,feasible,min_slack,request_hash");
  CHECK(lines(times_csv(rep)).size() == 31);
  const auto svg = iterations_svg(rep);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("initializer failures are recorded, not dropped") {
  const RobotLimits lim = RobotLimits::default_arm().head(2);
  const auto problems = sample_problems({3}, 2, lim, 1);
  const Initializer broken = [](const BenchProblem&, const RobotLimits&) -> DecisionVector {
    throw UnsupportedLength("too long");
  };
  const auto rep = bench_compare(problems, broken, settings_for(lim));
  REQUIRE(rep.rows.size() == 6);
  for (const auto& row : rep.rows) {
    if (row.method == BenchMethod::Cold) {
      CHECK(row.status == "converged");
    } else {
      CHECK(row.status.find("failed") == 0);
      CHECK(row.iterations == -1);
    }
  }
  CHECK(rep.summary.warm_wins == 0);
}

TEST_CASE("problem sampling is deterministic per index") {
  const RobotLimits lim = RobotLimits::default_arm();
  const auto a = sample_problems({6, 12}, 3, lim, 7);
  const auto b = sample_problems({6, 12}, 3, lim, 7);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].index == i);
    CHECK(a[i].path.waypoints == b[i].path.waypoints);
  }
  CHECK(a[3].path.size() == 12);
  CHECK(sample_problems({6, 12}, 3, lim, 8)[0].path.waypoints != a[0].path.waypoints);
  CHECK_THROWS_AS((void)sample_problems({1}, 3, lim, 7), ParameterError);
}

TEST_CASE("config files parse, round-trip and reject unknown keys") {
  const auto defaults = parse_config("");
  CHECK(defaults.lambda == 0.5);
  CHECK(defaults.limits.joints() == 6);

  const auto c = parse_config(
      "# reduced arm\n"
      "joints = 3\n"
      "qd_max = 1, 1.5, 2   # rad/s\n"
      "lambda = 0.25\n"
      "exact_hessian = false\n"
      "max_iterations = 80\n");
  CHECK(c.limits.joints() == 3);
  CHECK(c.limits.qd_max(1) == 1.5);
  CHECK(c.limits.q_max(2) == RobotLimits::default_arm().q_max(2));
  CHECK(c.lambda == 0.25);
  CHECK_FALSE(c.exact_hessian);
  CHECK(c.solver.max_iterations == 80);

  const auto back = parse_config(config_to_text(c));
  CHECK(back.limits.qd_max == c.limits.qd_max);
  CHECK(back.limits.qddd_max == c.limits.qddd_max);
  CHECK(back.lambda == c.lambda);
  CHECK(back.solver.kkt_tolerance == c.solver.kkt_tolerance);
  const auto req = back.request(WaypointPath{Eigen::MatrixXd::Zero(2, 3)});
  CHECK(req.lambda == 0.25);
  CHECK_FALSE(req.exact_hessian);

  CHECK_THROWS_WITH_AS((void)parse_config("lambda = 0.5\nspeed = 3\n"), doctest::Contains("line 2"), ParameterError);
  CHECK_THROWS_AS((void)parse_config("lambda 0.5\n"), ParameterError);
  CHECK_THROWS_AS((void)parse_config("lambda = 1.5\n"), ParameterError);
  CHECK_THROWS_AS((void)parse_config("joints = 2\nq_max = 1, 2, 3\n"), ParameterError);
  CHECK_THROWS_AS((void)parse_config("max_iterations = 2.5\n"), ParameterError);
  CHECK_THROWS_AS((void)load_config("/nonexistent/tjplan.cfg"), ParameterError);
}

TEST_CASE("the config path falls back to the environment") {
  const auto path = (std::filesystem::temp_directory_path() / "tjplan_env.cfg").string();
  {
    std::ofstream f(path);
    f << "lambda = 0.75\n";
  }
  ::setenv(kConfigEnv, path.c_str(), 1);
  CHECK(resolve_config(std::nullopt).lambda == 0.75);
  ::unsetenv(kConfigEnv);
  CHECK(resolve_config(std::nullopt).lambda == 0.5);
  CHECK(resolve_config(path).lambda == 0.75);
}
