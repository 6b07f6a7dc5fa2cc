#pragma once

// Model file layout, all little-endian:
//   "TJPM" magic, u32 format version,
//   i32 joints, max_waypoints, dim, heads, context_layers, source_layers, ffn_dim, f64 dropout,
//   then for each trainable tensor in ModelParams::for_each order:
//   u32 rows, u32 cols, rows*cols f64 in column-major order.
// The positional table is rebuilt from the config on load.

#include <iosfwd>
#include <string>

#include "tjplan/transformer.hpp"

namespace tjplan::nn {

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const ModelParams& params, std::ostream& out);
void save_model(const ModelParams& params, const std::string& path);

/// Throws CorruptFile (bad magic, truncation, shape mismatch, non-finite
/// weights) or VersionMismatch.
[[nodiscard]] ModelParams load_model(std::istream& in);
[[nodiscard]] ModelParams load_model(const std::string& path);

/// Throws UnsupportedConfig unless the model was built for `joints` joints.
void require_joints(const ModelConfig& config, int joints);

}  // namespace tjplan::nn
