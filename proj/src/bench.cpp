#include "tjplan/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "tjplan/dataset.hpp"
#include "tjplan/errors.hpp"
#include "tjplan/json_io.hpp"

namespace tjplan {

namespace {

using json_io::format_double;

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ c[i]) * 0x100000001b3ULL;
  }
  void add(double x) { bytes(&x, sizeof x); }
  void add(long long x) { bytes(&x, sizeof x); }
  void add(const Eigen::MatrixXd& m) {
    add(static_cast<long long>(m.rows()));
    add(static_cast<long long>(m.cols()));
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
};

BenchRow failed_row(const BenchProblem& p, BenchMethod m, std::uint64_t hash, const std::string& why) {
  BenchRow r;
  r.problem = p.index;
  r.length = static_cast<int>(p.path.size());
  r.method = m;
  r.status = "failed: " + why;
  r.request_hash = hash;
  return r;
}

BenchRow solved_row(const BenchProblem& p, BenchMethod m, std::uint64_t hash, const PlanResult& res, double init_ms) {
  BenchRow r;
  r.problem = p.index;
  r.length = static_cast<int>(p.path.size());
  r.method = m;
  r.status = "converged";
  r.iterations = res.total_iterations;
  r.objective = res.objective;
  r.jerk = res.jerk;
  r.duration = res.duration;
  r.feasible = res.feasibility.feasible;
  r.min_slack = res.feasibility.min_kinematic_slack;
  r.request_hash = hash;
  r.init_ms = init_ms;
  r.sqp_ms = static_cast<double>(res.sqp_ns) * 1e-6;
  r.trajectory = res.trajectory;
  return r;
}

std::string status_field(const std::string& s) {
  // commas and quotes would break the CSV
  std::string out = s;
  std::replace(out.begin(), out.end(), ',', ';');
  std::replace(out.begin(), out.end(), '"', '\'');
  std::replace(out.begin(), out.end(), '\n', ' ');
  return out;
}

std::vector<int> lengths_of(const std::vector<BenchRow>& rows) {
  std::vector<int> ls;
  for (const auto& r : rows) ls.push_back(r.length);
  std::sort(ls.begin(), ls.end());
  ls.erase(std::unique(ls.begin(), ls.end()), ls.end());
  return ls;
}

}  // namespace

std::string to_string(BenchMethod m) {
  switch (m) {
    case BenchMethod::Cold: return "cold-sqp";
    case BenchMethod::Warm: return "warm-sqp";
    case BenchMethod::ModelOnly: return "model-only";
  }
  return "?";
}

std::vector<BenchProblem> sample_problems(const std::vector<int>& lengths, std::size_t per_length,
                                          const RobotLimits& limits, std::uint64_t seed) {
  std::vector<BenchProblem> out;
  for (int len : lengths) {
    if (len < 2) throw ParameterError("benchmark lengths must be at least 2");
    for (std::size_t j = 0; j < per_length; ++j) {
      const std::size_t index = out.size();
      std::mt19937_64 rng(splitmix64(seed ^ splitmix64(index)));
      out.push_back({index, sample_path(limits.joints(), len, limits, rng)});
    }
  }
  return out;
}

std::uint64_t request_hash(const PlanRequest& q) {
  Fnv f;
  f.add(q.path.waypoints);
  f.add(q.limits.q_max);
  f.add(q.limits.qd_max);
  f.add(q.limits.qdd_max);
  f.add(q.limits.qddd_max);
  f.add(q.lambda);
  f.add(q.margin);
  f.add(q.max_span_duration);
  f.add(static_cast<long long>(q.collocation_density));
  f.add(static_cast<long long>(q.exact_hessian));
  const auto& s = q.solver;
  f.add(static_cast<long long>(s.max_iterations));
  for (double x : {s.kkt_tolerance, s.constraint_tolerance, s.penalty_growth, s.backtrack_ratio, s.armijo,
                   s.min_step, s.fd_step})
    f.add(x);
  f.add(static_cast<long long>(s.second_order_correction));
  return f.h;
}

BenchReport bench_compare(const std::vector<BenchProblem>& problems, const Initializer& warm,
                          const BenchSettings& settings) {
  std::vector<std::array<BenchRow, 3>> slots(problems.size());
  parallel_for(problems.size(), settings.jobs, [&](std::size_t i) {
    const BenchProblem& p = problems[i];
    PlanRequest cold_req = settings.base;
    cold_req.path = p.path;
    PlanRequest warm_req = cold_req;
    const auto hc = request_hash(cold_req), hw = request_hash(warm_req);
    if (hc != hw) throw SolverError("paired requests differ");
    auto& out = slots[i];

    try {
      const auto t0 = std::chrono::steady_clock::now();
      const DecisionVector init = cold_start(p.path, cold_req.limits);
      const double init_ms = ms_since(t0);
      out[0] = solved_row(p, BenchMethod::Cold, hc, plan(cold_req, init), init_ms);
    } catch (const std::exception& e) {
      out[0] = failed_row(p, BenchMethod::Cold, hc, e.what());
    }

    DecisionVector guess;
    double init_ms = 0.0;
    try {
      const auto t0 = std::chrono::steady_clock::now();
      guess = warm(p, warm_req.limits);
      init_ms = ms_since(t0);
    } catch (const std::exception& e) {
      out[1] = failed_row(p, BenchMethod::Warm, hw, e.what());
      out[2] = failed_row(p, BenchMethod::ModelOnly, hw, e.what());
      return;
    }

    try {
      out[1] = solved_row(p, BenchMethod::Warm, hw, plan(warm_req, guess), init_ms);
    } catch (const std::exception& e) {
      out[1] = failed_row(p, BenchMethod::Warm, hw, e.what());
    }

    try {
      BenchRow r;
      r.problem = p.index;
      r.length = static_cast<int>(p.path.size());
      r.method = BenchMethod::ModelOnly;
      r.status = "unrefined";
      r.iterations = 0;
      r.trajectory = decode(guess, p.path);
      r.jerk = total_jerk(*r.trajectory);
      r.duration = r.trajectory->duration();
      r.objective = scalar_objective(r.jerk, r.duration, warm_req.lambda);
      const auto rep = check_feasibility(*r.trajectory, p.path, warm_req.limits, 10 * warm_req.collocation_density);
      r.feasible = rep.feasible;
      r.min_slack = rep.min_kinematic_slack;
      r.request_hash = hw;
      r.init_ms = init_ms;
      out[2] = std::move(r);
    } catch (const std::exception& e) {
      out[2] = failed_row(p, BenchMethod::ModelOnly, hw, e.what());
    }
  });

  BenchReport rep;
  for (auto& s : slots)
    for (auto& r : s) rep.rows.push_back(std::move(r));
  rep.aggregates = aggregate_rows(rep.rows);
  rep.summary = summarize_rows(rep.rows);
  return rep;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<BenchAggregate> aggregate_rows(const std::vector<BenchRow>& rows) {
  std::vector<BenchAggregate> out;
  for (BenchMethod m : {BenchMethod::Cold, BenchMethod::Warm, BenchMethod::ModelOnly})
    for (int len : lengths_of(rows)) {
      BenchAggregate a;
      a.method = m;
      a.length = len;
      std::vector<double> it, obj;
      for (const auto& r : rows) {
        if (r.method != m || r.length != len) continue;
        ++a.count;
        if (r.iterations < 0) continue;
        ++a.converged;
        it.push_back(r.iterations);
        obj.push_back(r.objective);
      }
      if (a.count == 0) continue;
      a.iterations_median = quantile(it, 0.5);
      a.iterations_iqr = quantile(it, 0.75) - quantile(it, 0.25);
      a.objective_median = quantile(obj, 0.5);
      a.objective_iqr = quantile(obj, 0.75) - quantile(obj, 0.25);
      out.push_back(a);
    }
  return out;
}

BenchSummary summarize_rows(const std::vector<BenchRow>& rows) {
  std::map<std::size_t, const BenchRow*> cold, warm;
  for (const auto& r : rows) {
    if (r.method == BenchMethod::Cold) cold[r.problem] = &r;
    if (r.method == BenchMethod::Warm) warm[r.problem] = &r;
  }
  BenchSummary s;
  std::vector<double> ci, wi;
  for (const auto& [p, c] : cold) {
    const auto it = warm.find(p);
    if (it == warm.end()) continue;
    const BenchRow* w = it->second;
    ++s.pairs;
    const bool cok = c->iterations >= 0, wok = w->iterations >= 0;
    if (cok) ci.push_back(c->iterations);
    if (wok) wi.push_back(w->iterations);
    if (wok && (!cok || w->iterations < c->iterations)) ++s.warm_wins;
    if (cok && wok) {
      s.worst_objective_abs = std::max(s.worst_objective_abs, w->objective - c->objective);
      s.worst_objective_gap = std::max(s.worst_objective_gap, (w->objective - c->objective) / std::abs(c->objective));
    }
  }
  if (s.pairs > 0) s.win_rate = static_cast<double>(s.warm_wins) / static_cast<double>(s.pairs);
  s.cold_iterations_median = quantile(ci, 0.5);
  s.warm_iterations_median = quantile(wi, 0.5);
  s.iteration_reduction = 1.0 - s.warm_iterations_median / s.cold_iterations_median;
  return s;
}

std::string rows_csv(const BenchReport& rep) {
  std::ostringstream o;
  o << "problem,length,method,status,iterations,objective,jerk,duration,feasible,min_slack,request_hash\n";
  for (const auto& r : rep.rows) {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.request_hash));
    o << r.problem << ',' << r.length << ',' << to_string(r.method) << ',' << status_field(r.status) << ','
      << r.iterations << ',' << format_double(r.objective) << ',' << format_double(r.jerk) << ','
      << format_double(r.duration) << ',' << (r.feasible ? 1 : 0) << ',' << format_double(r.min_slack) << ','
      << hash << '\n';
  }
  return o.str();
}

std::string summary_csv(const BenchReport& rep) {
  std::ostringstream o;
  o << "method,length,count,converged,iterations_median,iterations_iqr,objective_median,objective_iqr\n";
  for (const auto& a : rep.aggregates)
    o << to_string(a.method) << ',' << a.length << ',' << a.count << ',' << a.converged << ','
      << format_double(a.iterations_median) << ',' << format_double(a.iterations_iqr) << ','
      << format_double(a.objective_median) << ',' << format_double(a.objective_iqr) << '\n';
  const auto& s = rep.summary;
  o << "# pairs," << s.pairs << ",warm_wins," << s.warm_wins << ",win_rate," << format_double(s.win_rate)
    << ",cold_median," << format_double(s.cold_iterations_median) << ",warm_median,"
    << format_double(s.warm_iterations_median) << ",iteration_reduction," << format_double(s.iteration_reduction)
    << ",worst_objective_gap," << format_double(s.worst_objective_gap) << ",worst_objective_abs,"
    << format_double(s.worst_objective_abs) << '\n';
  return o.str();
}

std::string times_csv(const BenchReport& rep) {
  std::ostringstream o;
  o << "problem,length,method,init_ms,sqp_ms\n";
  for (const auto& r : rep.rows)
    o << r.problem << ',' << r.length << ',' << to_string(r.method) << ',' << format_double(r.init_ms) << ','
      << format_double(r.sqp_ms) << '\n';
  return o.str();
}

std::string iterations_svg(const BenchReport& rep) {
  const auto lengths = lengths_of(rep.rows);
  const double w = 120.0 * static_cast<double>(std::max<std::size_t>(lengths.size(), 1)) + 80.0, h = 320.0;
  double top = 1.0;
  for (const auto& r : rep.rows) top = std::max(top, static_cast<double>(r.iterations));
  const auto y = [&](double v) { return 280.0 - 250.0 * v / top; };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
    << "<line x1=\"50\" y1=\"280\" x2=\"" << w - 10 << "\" y2=\"280\" stroke=\"black\"/>\n"
    << "<line x1=\"50\" y1=\"30\" x2=\"50\" y2=\"280\" stroke=\"black\"/>\n"
    << "<text x=\"5\" y=\"20\" font-size=\"12\">SQP iterations (max " << top << ")</text>\n";
  const char* colour[] = {"#4477aa", "#ee6677"};
  for (std::size_t g = 0; g < lengths.size(); ++g) {
    const double x0 = 70.0 + 120.0 * static_cast<double>(g);
    o << "<text x=\"" << x0 + 20 << "\" y=\"300\" font-size=\"12\">I = " << lengths[g] << "</text>\n";
    for (int m = 0; m < 2; ++m) {
      std::vector<double> v;
      for (const auto& r : rep.rows)
        if (r.length == lengths[g] && static_cast<int>(r.method) == m && r.iterations >= 0) v.push_back(r.iterations);
      if (v.empty()) continue;
      const double x = x0 + 45.0 * m, q1 = quantile(v, 0.25), q2 = quantile(v, 0.5), q3 = quantile(v, 0.75);
      const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
      o << "<line x1=\"" << x + 15 << "\" y1=\"" << y(lo) << "\" x2=\"" << x + 15 << "\" y2=\"" << y(hi)
        << "\" stroke=\"black\"/>\n"
        << "<rect x=\"" << x << "\" y=\"" << y(q3) << "\" width=\"30\" height=\"" << std::max(y(q1) - y(q3), 1.0)
        << "\" fill=\"" << colour[m] << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << x << "\" y1=\"" << y(q2) << "\" x2=\"" << x + 30 << "\" y2=\"" << y(q2)
        << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    }
  }
  o << "<text x=\"" << w - 160 << "\" y=\"20\" font-size=\"12\" fill=\"" << colour[0] << "\">cold-sqp</text>\n"
    << "<text x=\"" << w - 90 << "\" y=\"20\" font-size=\"12\" fill=\"" << colour[1] << "\">warm-sqp</text>\n"
    << "</svg>\n";
  return o.str();
}

void write_bench(const BenchReport& r, const std::string& prefix) {
  const auto put = [](const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParameterError("cannot write " + path);
    f << text;
  };
  put(prefix + ".csv", rows_csv(r));
  put(prefix + "_summary.csv", summary_csv(r));
  put(prefix + "_times.csv", times_csv(r));
  put(prefix + ".svg", iterations_svg(r));
}

}  // namespace tjplan
