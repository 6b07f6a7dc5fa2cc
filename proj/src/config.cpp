#include "tjplan/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "tjplan/errors.hpp"
#include "tjplan/json_io.hpp"

namespace tjplan {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double number(const std::string& v, const std::string& where) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ParameterError(where + ": not a number: '" + v + "'");
  return x;
}

int integer(const std::string& v, const std::string& where) {
  const double x = number(v, where);
  if (x != static_cast<double>(static_cast<int>(x))) throw ParameterError(where + ": not an integer: '" + v + "'");
  return static_cast<int>(x);
}

Eigen::VectorXd row(const std::string& v, const std::string& where) {
  std::vector<double> xs;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) xs.push_back(number(trim(item), where));
  return Eigen::Map<Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

bool boolean(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParameterError(where + ": expected true or false, got '" + v + "'");
}

std::string join(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + json_io::format_double(v(i));
  return s;
}

}  // namespace

PlanRequest PlannerConfig::request(const WaypointPath& path) const {
  PlanRequest r;
  r.path = path;
  r.limits = limits;
  r.lambda = lambda;
  r.margin = margin;
  r.collocation_density = collocation_density;
  r.max_span_duration = max_span_duration;
  r.exact_hessian = exact_hessian;
  r.solver = solver;
  return r;
}

PlannerConfig parse_config(const std::string& text) {
  PlannerConfig c;
  std::istringstream in(text);
  std::string line;
  int number_of_line = 0;
  struct Entry {
    std::string key, value, where;
  };
  std::vector<Entry> entries;
  while (std::getline(in, line)) {
    ++number_of_line;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParameterError("line " + std::to_string(number_of_line) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    entries.push_back({key, trim(line.substr(eq + 1)), "line " + std::to_string(number_of_line) + " (" + key + ")"});
  }
  // joints first so explicit rows override the truncated defaults
  for (const auto& [key, v, where] : entries) {
    if (key == "joints") {
      const int k = integer(v, where);
      if (k < 1 || k > 6) throw ParameterError(where + ": joints must be in [1, 6]");
      c.limits = RobotLimits::default_arm().head(k);
    }
  }
  for (const auto& [key, v, where] : entries) {
    if (key == "joints") continue;
    if (key == "q_max") c.limits.q_max = row(v, where);
    else if (key == "qd_max") c.limits.qd_max = row(v, where);
    else if (key == "qdd_max") c.limits.qdd_max = row(v, where);
    else if (key == "qddd_max") c.limits.qddd_max = row(v, where);
    else if (key == "lambda") c.lambda = number(v, where);
    else if (key == "margin") c.margin = number(v, where);
    else if (key == "collocation_density") c.collocation_density = integer(v, where);
    else if (key == "max_span_duration") c.max_span_duration = number(v, where);
    else if (key == "exact_hessian") c.exact_hessian = boolean(v, where);
    else if (key == "max_iterations") c.solver.max_iterations = integer(v, where);
    else if (key == "kkt_tolerance") c.solver.kkt_tolerance = number(v, where);
    else if (key == "constraint_tolerance") c.solver.constraint_tolerance = number(v, where);
    else throw ParameterError(where + ": unknown key");
  }
  c.limits.validate();
  c.solver.validate();
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) throw ParameterError("lambda must be in [0, 1]");
  if (!(c.margin > 0.0 && c.margin <= 1.0)) throw ParameterError("margin must be in (0, 1]");
  if (c.collocation_density < 2) throw ParameterError("collocation_density must be at least 2");
  if (!(c.max_span_duration > 0.0)) throw ParameterError("max_span_duration must be positive");
  return c;
}

PlannerConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParameterError("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ParameterError& e) {
    throw ParameterError(path + ": " + e.what());
  }
}

PlannerConfig resolve_config(const std::optional<std::string>& explicit_path) {
  if (explicit_path) return load_config(*explicit_path);
  if (const char* env = std::getenv(kConfigEnv); env && *env) return load_config(env);
  return {};
}

std::string config_to_text(const PlannerConfig& c) {
  std::ostringstream o;
  o << "q_max = " << join(c.limits.q_max) << "\n"
    << "qd_max = " << join(c.limits.qd_max) << "\n"
    << "qdd_max = " << join(c.limits.qdd_max) << "\n"
    << "qddd_max = " << join(c.limits.qddd_max) << "\n"
    << "lambda = " << json_io::format_double(c.lambda) << "\n"
    << "margin = " << json_io::format_double(c.margin) << "\n"
    << "collocation_density = " << c.collocation_density << "\n"
    << "max_span_duration = " << json_io::format_double(c.max_span_duration) << "\n"
    << "exact_hessian = " << (c.exact_hessian ? "true" : "false") << "\n"
    << "max_iterations = " << c.solver.max_iterations << "\n"
    << "kkt_tolerance = " << json_io::format_double(c.solver.kkt_tolerance) << "\n"
    << "constraint_tolerance = " << json_io::format_double(c.solver.constraint_tolerance) << "\n";
  return o.str();
}

}  // namespace tjplan
