#pragma once

// Text serialization helpers. Doubles are written with 17 significant
// digits ("%.17g") so every value round-trips exactly; parsing goes
// through nlohmann::json.

#include <Eigen/Dense>
#include <json.hpp>

#include <span>
#include <string>
#include <vector>

namespace tjplan::json_io {

using Json = nlohmann::json;

/// "%.17g"; non-finite values become null.
[[nodiscard]] std::string format_double(double value);

/// Incremental writer for a single JSON object on one line.
class ObjectWriter {
 public:
  ObjectWriter& field(std::string_view key, double value);
  ObjectWriter& field(std::string_view key, long long value);
  ObjectWriter& field(std::string_view key, int value) { return field(key, static_cast<long long>(value)); }
  ObjectWriter& field(std::string_view key, std::size_t value) {
    return field(key, static_cast<long long>(value));
  }
  ObjectWriter& field(std::string_view key, bool value);
  ObjectWriter& field(std::string_view key, std::string_view value);
  ObjectWriter& field(std::string_view key, std::span<const double> values);
  /// Matrix written as an array of rows.
  ObjectWriter& field(std::string_view key, const Eigen::MatrixXd& rows);
  /// Pre-rendered JSON value.
  ObjectWriter& raw(std::string_view key, std::string_view json);

  [[nodiscard]] std::string str() const { return body_ + "}"; }

 private:
  void key(std::string_view k);
  std::string body_ = "{";
  bool first_ = true;
};

[[nodiscard]] std::string array(std::span<const double> values);
[[nodiscard]] std::string quote(std::string_view s);

[[nodiscard]] std::vector<double> to_vector(const Json& j);
/// Array of equal-length rows to a matrix.
[[nodiscard]] Eigen::MatrixXd to_matrix(const Json& j);

}  // namespace tjplan::json_io
