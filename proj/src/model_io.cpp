#include "tjplan/model_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "tjplan/errors.hpp"

namespace tjplan::nn {

namespace {

constexpr std::array<char, 4> kMagic{'T', 'J', 'P', 'M'};

template <class T>
void put(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), sizeof(T))) throw CorruptFile("model file truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void save_model(const ModelParams& params, std::ostream& out) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kModelFormatVersion);
  const ModelConfig& c = params.config;
  for (int v : {c.joints, c.max_waypoints, c.dim, c.heads, c.context_layers, c.source_layers, c.ffn_dim})
    put<std::int32_t>(out, v);
  put<double>(out, c.dropout);
  params.for_each([&](const std::string&, const MatrixXd& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) put<double>(out, t.data()[i]);
  });
  if (!out) throw std::runtime_error("failed writing model");
}

void save_model(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save_model(params, out);
}

ModelParams load_model(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size())) throw CorruptFile("model file truncated");
  if (magic != kMagic) throw CorruptFile("not a model file (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kModelFormatVersion)
    throw VersionMismatch("model format version " + std::to_string(version) + ", expected " +
                          std::to_string(kModelFormatVersion));
  ModelConfig c;
  c.joints = get<std::int32_t>(in);
  c.max_waypoints = get<std::int32_t>(in);
  c.dim = get<std::int32_t>(in);
  c.heads = get<std::int32_t>(in);
  c.context_layers = get<std::int32_t>(in);
  c.source_layers = get<std::int32_t>(in);
  c.ffn_dim = get<std::int32_t>(in);
  c.dropout = get<double>(in);
  // Refuse absurd headers before allocating.
  if (c.joints > 1024 || c.max_waypoints > 100000 || c.dim > 65536 || c.context_layers > 1024 ||
      c.source_layers > 1024 || c.ffn_dim > 1 << 20)
    throw CorruptFile("model header out of range");
  ModelParams p;
  try {
    p = ModelParams::zeros(c);
  } catch (const ParameterError& e) {
    throw CorruptFile(std::string("model header invalid: ") + e.what());
  }
  p.for_each([&](const std::string& name, MatrixXd& t) {
    const auto rows = get<std::uint32_t>(in);
    const auto cols = get<std::uint32_t>(in);
    if (rows != t.rows() || cols != t.cols()) throw CorruptFile("tensor " + name + " has the wrong shape");
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = get<double>(in);
    if (!t.allFinite()) throw CorruptFile("tensor " + name + " holds non-finite values");
  });
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptFile("trailing bytes after the last tensor");
  return p;
}

ModelParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_model(in);
}

void require_joints(const ModelConfig& config, int joints) {
  if (config.joints != joints)
    throw UnsupportedConfig("model expects " + std::to_string(config.joints) + " joints, got " +
                            std::to_string(joints));
}

}  // namespace tjplan::nn
