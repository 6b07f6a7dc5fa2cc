// tjplan: dataset generation, training, planning, benchmarking, inspection.
//
// Errors go to stderr as one JSON line {"error": kind, "message": ...};
// exit status 2 for usage and input problems, 1 for planning failures.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <exception>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tjplan/bench.hpp"
#include "tjplan/config.hpp"
#include "tjplan/dataset.hpp"
#include "tjplan/errors.hpp"
#include "tjplan/json_io.hpp"
#include "tjplan/model_io.hpp"
#include "tjplan/training.hpp"
#include "tjplan/warm_start.hpp"

namespace {

using namespace tjplan;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void fail_json(const std::string& kind, const std::string& message) {
  std::cerr << json_io::ObjectWriter().field("error", kind).field("message", message).str() << '\n';
}

/// Error kind for the JSON line and the exit status: 2 for bad input, 1 otherwise.
std::pair<std::string, int> classify(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const UsageError&) {
    return {"usage", 2};
  } catch (const ParameterError&) {
    return {"parameter", 2};
  } catch (const LoadError&) {
    return {"load", 2};
  } catch (const CorruptFile&) {
    return {"corrupt_file", 2};
  } catch (const VersionMismatch&) {
    return {"version_mismatch", 2};
  } catch (const UnsupportedConfig&) {
    return {"unsupported_config", 2};
  } catch (const UnsupportedLength&) {
    return {"unsupported_length", 2};
  } catch (const InfeasiblePath&) {
    return {"infeasible_path", 2};
  } catch (const PlanningFailed&) {
    return {"planning_failed", 1};
  } catch (...) {
    return {"error", 1};
  }
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write " + path);
  f << text;
}

/// {"waypoints": [[..K..], ...]} or the bare array.
WaypointPath read_waypoints(const std::string& path) {
  json_io::Json j;
  try {
    j = json_io::Json::parse(slurp(path));
  } catch (const json_io::Json::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
  if (j.is_object()) {
    if (!j.contains("waypoints")) throw UsageError(path + ": missing \"waypoints\"");
    j = j["waypoints"];
  }
  try {
    WaypointPath p{json_io::to_matrix(j)};
    p.validate();
    return p;
  } catch (const std::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
}

struct Common {
  std::optional<std::string> config;
  std::optional<double> lambda;

  PlannerConfig resolve() const {
    PlannerConfig c = resolve_config(config);
    if (lambda) {
      if (!(*lambda >= 0.0 && *lambda <= 1.0)) throw UsageError("--lambda must be in [0, 1]");
      c.lambda = *lambda;
    }
    return c;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, std::string("key=value config file (default: $") + kConfigEnv + ")");
  app->add_option("--lambda", c.lambda, "jerk/time balance in [0, 1]");
}

// ---- generate

struct GenerateArgs {
  Common common;
  std::size_t n = 2000;
  int min_length = 6, max_length = 48;
  int joints = 0;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string out = "dataset";
  bool quiet = false;
};

int run_generate(const GenerateArgs& a) {
  const PlannerConfig cfg = a.common.resolve();
  GenerateSettings s;
  s.count = a.n;
  s.min_length = a.min_length;
  s.max_length = a.max_length;
  s.limits = a.joints > 0 ? cfg.limits.head(a.joints) : cfg.limits;
  s.lambda = cfg.lambda;
  s.seed = a.seed;
  s.jobs = a.jobs;
  s.solver = cfg.solver;
  if (a.n < 1) throw UsageError("--n must be at least 1");
  if (a.min_length < 2 || a.max_length < a.min_length) throw UsageError("need 2 <= --min-length <= --max-length");
  const Dataset d = generate_dataset(s, [&](std::size_t done, std::size_t total) {
    if (!a.quiet && (done % 50 == 0 || done == total)) std::fprintf(stderr, "\rsolved %zu/%zu", done, total);
  });
  if (!a.quiet) std::fprintf(stderr, "\n");
  write_dataset(d, a.out);
  std::cout << manifest_to_json(d.manifest) << '\n';
  return 0;
}

// ---- train

struct TrainArgs {
  std::string data;
  std::string out = "model.bin";
  std::string history;
  nn::ModelConfig model;
  int max_waypoints = 0;
  nn::TrainSettings train;
  std::uint64_t init_seed = 1;
  bool quiet = false;
};

int run_train(TrainArgs a) {
  const Dataset d = load_dataset(a.data);
  if (d.records.empty()) throw UsageError(a.data + ": no records");
  a.model.joints = static_cast<int>(d.records.front().joints());
  a.model.max_waypoints = a.max_waypoints > 0 ? a.max_waypoints : d.manifest.max_length;
  a.model.validate();
  a.train.validate();
  for (const auto& r : d.records)
    if (r.waypoint_count() > a.model.max_waypoints)
      throw UsageError("record " + std::to_string(r.index) + " is longer than --max-waypoints");
  const auto tr = examples_from(d.split(Split::Train));
  const auto va = examples_from(d.split(Split::Validation));
  const auto res = nn::train(tr, va, nn::ModelParams::init(a.model, a.init_seed), a.train);
  if (!a.quiet)
    for (const auto& h : res.history)
      std::fprintf(stderr, "epoch %3d  train %.6g  val %.6g  lr %.3g\n", h.epoch, h.train_loss, h.val_loss,
                   h.learning_rate);
  nn::save_model(res.best, a.out);
  if (!a.history.empty()) {
    std::ofstream f(a.history);
    if (!f) throw UsageError("cannot write " + a.history);
    nn::write_history_csv(f, res.history);
  }
  std::cout << json_io::ObjectWriter()
                   .field("model", a.out)
                   .field("parameters", res.best.parameter_count())
                   .field("best_epoch", res.best_epoch)
                   .field("best_val_loss", res.history.empty() ? 0.0 : res.history[res.best_epoch - 1].val_loss)
                   .field("epochs", res.history.size())
                   .field("diverged", res.diverged)
                   .str()
            << '\n';
  return res.diverged ? 1 : 0;
}

// ---- plan

struct PlanArgs {
  Common common;
  std::string waypoints;
  std::optional<std::string> model;
  bool cold = false;
  std::string out;
};

int run_plan(const PlanArgs& a) {
  const PlannerConfig cfg = a.common.resolve();
  const WaypointPath path = read_waypoints(a.waypoints);
  if (path.joints() != cfg.limits.joints())
    throw UsageError("waypoints have " + std::to_string(path.joints()) + " joints, limits " +
                     std::to_string(cfg.limits.joints()));
  if (a.cold && a.model) throw UsageError("--cold and --model are exclusive");
  if (!a.cold && !a.model) throw UsageError("give --model for a warm start or --cold");
  const PlanRequest req = cfg.request(path);
  DecisionVector init;
  std::int64_t warm_ns = 0;
  if (a.cold) {
    init = cold_start(path, cfg.limits);
  } else {
    const auto model = nn::load_model(*a.model);
    const auto t0 = std::chrono::steady_clock::now();
    init = warm_start_from_model(model, path, cfg.limits);
    warm_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
  }
  PlanResult res = plan(req, init);
  res.warm_start_ns = warm_ns;
  const std::string json = plan_result_to_json(res);
  if (!a.out.empty()) spit(a.out, json + "\n");
  std::cout << json << '\n';
  return 0;
}

// ---- bench

struct BenchArgs {
  Common common;
  std::vector<int> lengths{6, 12, 24, 48};
  std::size_t n = 20;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::optional<std::string> model;
  std::optional<std::string> dataset;
  bool oracle = false;
  std::string out = "bench";
};

int run_bench(const BenchArgs& a) {
  PlannerConfig cfg = a.common.resolve();
  std::vector<BenchProblem> problems;
  std::map<std::size_t, const TrajectoryRecord*> by_index;
  Dataset data;
  if (a.dataset) {
    data = load_dataset(*a.dataset);
    cfg.limits = data.manifest.limits;
    if (!a.common.lambda) cfg.lambda = data.manifest.lambda;
    for (const auto* r : data.split(Split::Test)) {
      if (problems.size() >= a.n) break;
      problems.push_back({r->index, r->path()});
      by_index[r->index] = r;
    }
  } else {
    if (a.oracle) throw UsageError("--oracle needs --dataset");
    problems = sample_problems(a.lengths, a.n, cfg.limits, a.seed);
  }
  if (problems.empty()) throw UsageError("no benchmark problems");

  int longest = 2;
  for (const auto& p : problems) longest = std::max(longest, static_cast<int>(p.path.size()));
  Initializer init;
  nn::ModelParams model;
  if (a.oracle) {
    if (a.model) throw UsageError("--oracle and --model are exclusive");
    init = [&](const BenchProblem& p, const RobotLimits&) { return encode(by_index.at(p.index)->trajectory()); };
  } else {
    if (a.model) {
      model = nn::load_model(*a.model);
    } else {
      std::fprintf(stderr, "no --model: warm starts come from an untrained network\n");
      nn::ModelConfig c;
      c.joints = static_cast<int>(cfg.limits.joints());
      c.max_waypoints = longest;
      c.dim = 16;
      c.context_layers = c.source_layers = 2;
      model = nn::ModelParams::init(c, a.seed);
    }
    nn::require_joints(model.config, static_cast<int>(cfg.limits.joints()));
    init = [&](const BenchProblem& p, const RobotLimits& limits) {
      return warm_start_from_model(model, p.path, limits);
    };
  }
  BenchSettings s;
  s.base = cfg.request(problems.front().path);
  s.jobs = a.jobs;
  const BenchReport rep = bench_compare(problems, init, s);
  write_bench(rep, a.out);
  const auto& m = rep.summary;
  std::cout << json_io::ObjectWriter()
                   .field("pairs", m.pairs)
                   .field("warm_wins", m.warm_wins)
                   .field("win_rate", m.win_rate)
                   .field("cold_iterations_median", m.cold_iterations_median)
                   .field("warm_iterations_median", m.warm_iterations_median)
                   .field("iteration_reduction", m.iteration_reduction)
                   .field("worst_objective_gap", m.worst_objective_gap)
                   .field("rows", a.out + ".csv")
                   .str()
            << '\n';
  return 0;
}

// ---- inspect

struct InspectArgs {
  std::optional<std::string> dataset;
  std::optional<std::size_t> record;
  std::optional<std::string> plan_file;
  std::string out = "trajectory";
  int samples = 200;
};

std::string trajectory_svg(const SplineTrajectory& traj, const Eigen::MatrixXd& samples,
                           const std::optional<WaypointPath>& path) {
  const double w = 640, h = 360, left = 50, right = 20, top = 20, bottom = 40;
  const double T = traj.duration();
  double lo = 0.0, hi = 0.0;
  for (Eigen::Index k = 0; k < traj.joints(); ++k) {
    lo = std::min(lo, samples.col(1 + 4 * k).minCoeff());
    hi = std::max(hi, samples.col(1 + 4 * k).maxCoeff());
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const auto X = [&](double t) { return left + (w - left - right) * t / T; };
  const auto Y = [&](double q) { return h - bottom - (h - top - bottom) * (q - lo) / (hi - lo); };
  const char* colours[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
    << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" font-size=\"12\">t [s], T = " << T << "</text>\n";
  for (Eigen::Index k = 0; k < traj.joints(); ++k) {
    const char* c = colours[k % 7];
    o << "<polyline class=\"joint\" data-joint=\"" << k << "\" fill=\"none\" stroke=\"" << c << "\" points=\"";
    for (Eigen::Index s = 0; s < samples.rows(); ++s)
      o << (s ? " " : "") << X(samples(s, 0)) << ',' << Y(samples(s, 1 + 4 * k));
    o << "\"/>\n";
    if (path) {
      const auto times = waypoint_times(traj.knots());
      for (Eigen::Index i = 0; i < path->size(); ++i)
        o << "<circle cx=\"" << X(times[static_cast<std::size_t>(i)]) << "\" cy=\"" << Y(path->waypoints(i, k))
          << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

int run_inspect(const InspectArgs& a) {
  std::optional<SplineTrajectory> traj;
  std::optional<WaypointPath> path;
  if (a.dataset) {
    if (!a.record) throw UsageError("--dataset needs --record");
    if (a.plan_file) throw UsageError("--dataset and --plan are exclusive");
    const Dataset d = load_dataset(*a.dataset);
    for (const auto& r : d.records)
      if (r.index == *a.record) {
        traj = r.trajectory();
        path = r.path();
      }
    if (!traj) throw UsageError("no record " + std::to_string(*a.record) + " in " + *a.dataset);
  } else if (a.plan_file) {
    json_io::Json j;
    try {
      j = json_io::Json::parse(slurp(*a.plan_file));
    } catch (const json_io::Json::exception& e) {
      throw UsageError(*a.plan_file + ": " + e.what());
    }
    traj = trajectory_from_json((j.contains("trajectory") ? j["trajectory"] : j).dump());
  } else {
    throw UsageError("give --dataset with --record, or --plan");
  }
  if (a.samples < 2) throw UsageError("--samples must be at least 2");
  const Eigen::Index K = traj->joints();
  Eigen::MatrixXd table(a.samples, 1 + 4 * K);
  const double T = traj->duration();
  for (int s = 0; s < a.samples; ++s) {
    const double t = s + 1 == a.samples ? T : T * s / (a.samples - 1);
    const Eigen::MatrixXd v = eval_all(*traj, t, 3);  // order x joint
    table(s, 0) = t;
    for (Eigen::Index k = 0; k < K; ++k)
      for (int d = 0; d < 4; ++d) table(s, 1 + 4 * k + d) = v(d, k);
  }
  std::ostringstream csv;
  csv << "t";
  for (Eigen::Index k = 0; k < K; ++k) csv << ",q" << k << ",qd" << k << ",qdd" << k << ",qddd" << k;
  csv << '\n';
  for (Eigen::Index s = 0; s < table.rows(); ++s) {
    for (Eigen::Index c = 0; c < table.cols(); ++c) csv << (c ? "," : "") << json_io::format_double(table(s, c));
    csv << '\n';
  }
  spit(a.out + ".csv", csv.str());
  spit(a.out + ".svg", trajectory_svg(*traj, table, path));
  std::cout << json_io::ObjectWriter()
                   .field("csv", a.out + ".csv")
                   .field("svg", a.out + ".svg")
                   .field("joints", static_cast<long long>(K))
                   .field("duration", T)
                   .str()
            << '\n';
  return 0;
}

std::vector<int> parse_lengths(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size() || v < 2) throw std::invalid_argument("");
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--lengths: bad entry '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("--lengths is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-jerk optimal trajectory planning with learned warm starts"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "solve random paths from cold starts and write a dataset");
  add_common(g, gen.common);
  g->add_option("--n", gen.n, "attempted records")->capture_default_str();
  g->add_option("--min-length", gen.min_length, "fewest waypoints")->capture_default_str();
  g->add_option("--max-length", gen.max_length, "most waypoints")->capture_default_str();
  g->add_option("--joints", gen.joints, "use the first k joints of the configured limits");
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--jobs", gen.jobs, "worker threads")->capture_default_str();
  g->add_option("--out", gen.out, "writes <out>.jsonl and <out>.manifest.json")->capture_default_str();
  g->add_flag("--quiet", gen.quiet);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "fit the warm-start network to a dataset");
  t->add_option("--data", tr.data, "dataset name (without extension)")->required();
  t->add_option("--out", tr.out, "model file")->capture_default_str();
  t->add_option("--history", tr.history, "per-epoch CSV");
  t->add_option("--dim", tr.model.dim)->capture_default_str();
  t->add_option("--heads", tr.model.heads)->capture_default_str();
  t->add_option("--context-layers", tr.model.context_layers)->capture_default_str();
  t->add_option("--source-layers", tr.model.source_layers)->capture_default_str();
  t->add_option("--ffn", tr.model.ffn_dim, "0 means 4 * dim")->capture_default_str();
  t->add_option("--dropout", tr.model.dropout)->capture_default_str();
  t->add_option("--max-waypoints", tr.max_waypoints, "default: the dataset's longest path");
  t->add_option("--epochs", tr.train.epochs)->capture_default_str();
  t->add_option("--batch", tr.train.batch_size)->capture_default_str();
  t->add_option("--lr", tr.train.learning_rate)->capture_default_str();
  t->add_option("--weight-decay", tr.train.weight_decay)->capture_default_str();
  t->add_option("--patience", tr.train.patience)->capture_default_str();
  t->add_option("--decay", tr.train.decay)->capture_default_str();
  t->add_option("--theta1", tr.train.loss.coef, "coefficient loss weight")->capture_default_str();
  t->add_option("--theta2", tr.train.loss.knot, "knot loss weight")->capture_default_str();
  t->add_option("--seed", tr.train.seed, "shuffling and dropout")->capture_default_str();
  t->add_option("--init-seed", tr.init_seed, "weight initialization")->capture_default_str();
  t->add_flag("--quiet", tr.quiet);

  PlanArgs pl;
  auto* p = app.add_subcommand("plan", "solve one problem and print the PlanResult JSON");
  add_common(p, pl.common);
  p->add_option("--waypoints-file", pl.waypoints, "JSON: {\"waypoints\": [[q_1..q_K], ...]}")->required();
  p->add_option("--model", pl.model, "warm start from this model");
  p->add_flag("--cold", pl.cold, "heuristic cold start");
  p->add_option("--out", pl.out, "also write the JSON here");

  BenchArgs be;
  std::string lengths = "6,12,24,48";
  auto* b = app.add_subcommand("bench", "paired cold/warm SQP comparison");
  add_common(b, be.common);
  b->add_option("--lengths", lengths, "comma-separated path lengths")->capture_default_str();
  b->add_option("--n", be.n, "problems per length (with --dataset: total test problems)")->capture_default_str();
  b->add_option("--seed", be.seed)->capture_default_str();
  b->add_option("--jobs", be.jobs)->capture_default_str();
  b->add_option("--model", be.model, "trained model; without it an untrained network is used");
  b->add_option("--dataset", be.dataset, "take problems from this dataset's test split");
  b->add_flag("--oracle", be.oracle, "warm start from the dataset's ground truth");
  b->add_option("--out", be.out, "output prefix")->capture_default_str();

  InspectArgs in;
  auto* i = app.add_subcommand("inspect", "sample a trajectory to CSV and SVG");
  i->add_option("--dataset", in.dataset);
  i->add_option("--record", in.record, "record index");
  i->add_option("--plan", in.plan_file, "PlanResult or trajectory JSON");
  i->add_option("--samples", in.samples)->capture_default_str();
  i->add_option("--out", in.out, "writes <out>.csv and <out>.svg")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_json("usage", e.what());
    return 2;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr);
    if (*p) return run_plan(pl);
    if (*b) {
      be.lengths = parse_lengths(lengths);
      return run_bench(be);
    }
    if (*i) return run_inspect(in);
  } catch (const std::exception& e) {
    const auto [kind, code] = classify(std::current_exception());
    fail_json(kind, e.what());
    return code;
  }
  return 2;
}
