#include "tjplan/json_io.hpp"

#include <cmath>
#include <cstdio>

#include "tjplan/errors.hpp"

namespace tjplan::json_io {

std::string format_double(double value) {
  if (!std::isfinite(value)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string quote(std::string_view s) {
  return Json(std::string(s)).dump();
}

std::string array(std::span<const double> values) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  out += ']';
  return out;
}

void ObjectWriter::key(std::string_view k) {
  if (!first_) body_ += ',';
  first_ = false;
  body_ += quote(k);
  body_ += ':';
}

ObjectWriter& ObjectWriter::field(std::string_view k, double value) {
  key(k);
  body_ += format_double(value);
  return *this;
}

ObjectWriter& ObjectWriter::field(std::string_view k, long long value) {
  key(k);
  body_ += std::to_string(value);
  return *this;
}

ObjectWriter& ObjectWriter::field(std::string_view k, bool value) {
  key(k);
  body_ += value ? "true" : "false";
  return *this;
}

ObjectWriter& ObjectWriter::field(std::string_view k, std::string_view value) {
  key(k);
  body_ += quote(value);
  return *this;
}

ObjectWriter& ObjectWriter::field(std::string_view k, std::span<const double> values) {
  key(k);
  body_ += array(values);
  return *this;
}

ObjectWriter& ObjectWriter::field(std::string_view k, const Eigen::MatrixXd& rows) {
  key(k);
  body_ += '[';
  std::vector<double> row;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    if (r) body_ += ',';
    row.assign(static_cast<std::size_t>(rows.cols()), 0.0);
    for (Eigen::Index c = 0; c < rows.cols(); ++c) row[static_cast<std::size_t>(c)] = rows(r, c);
    body_ += array(row);
  }
  body_ += ']';
  return *this;
}

ObjectWriter& ObjectWriter::raw(std::string_view k, std::string_view json) {
  key(k);
  body_ += json;
  return *this;
}

std::vector<double> to_vector(const Json& j) {
  if (!j.is_array()) throw ParameterError("expected a JSON array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw ParameterError("expected a number in JSON array");
    out.push_back(v.get<double>());
  }
  return out;
}

Eigen::MatrixXd to_matrix(const Json& j) {
  if (!j.is_array() || j.empty()) throw ParameterError("expected a non-empty array of rows");
  const auto cols = to_vector(j.front()).size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    auto row = to_vector(j[r]);
    if (row.size() != cols) throw ParameterError("ragged rows in JSON matrix");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
  }
  return m;
}

}  // namespace tjplan::json_io
