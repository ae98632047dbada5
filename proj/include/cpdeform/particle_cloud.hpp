#pragma once

#include <cstdio>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cpdeform/errors.hpp"
#include "cpdeform/geometry.hpp"

namespace cpdeform {

/// Equal-mass point set. Masses are normalized so that they sum to one.
struct ParticleCloud {
  std::vector<Vec3> points;
  double mass = 0.0;  // per particle

  ParticleCloud() = default;
  explicit ParticleCloud(std::vector<Vec3> pts)
      : points(std::move(pts)), mass(points.empty() ? 0.0 : 1.0 / static_cast<double>(points.size())) {}

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  void validate() const {
    if (points.empty()) throw InvalidArgument("particle cloud is empty");
    if (!(mass > 0.0) || !std::isfinite(mass)) throw InvalidArgument("particle mass must be positive");
    for (const auto& p : points)
      if (!p.allFinite()) throw InvalidArgument("particle cloud has a non-finite coordinate");
  }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& p : points) c += p;
    return c / static_cast<double>(points.size());
  }

  Aabb bounds() const {
    Aabb box{points.front(), points.front()};
    for (const auto& p : points) {
      box.lower = box.lower.cwiseMin(p);
      box.upper = box.upper.cwiseMax(p);
    }
    return box;
  }

  ParticleCloud translated(const Vec3& offset) const {
    ParticleCloud out = *this;
    for (auto& p : out.points) p += offset;
    return out;
  }
};

/// Uniform samples strictly inside a shape by rejection inside its bounding box.
inline ParticleCloud sample_uniform(const ShapePrimitive& shape, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("sample_uniform needs n >= 1");
  shape.validate();
  const Aabb box = bounding_box(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec3> points;
  points.reserve(n);
  const std::size_t budget = 1000 * n;
  for (std::size_t attempt = 0; attempt < budget && points.size() < n; ++attempt) {
    Vec3 p;
    for (int d = 0; d < 3; ++d) p[d] = box.lower[d] + unit(rng) * (box.upper[d] - box.lower[d]);
    if (sdf(shape, p) < 0.0) points.push_back(p);
  }
  if (points.size() < n)
    throw SamplingError("rejection sampling exhausted " + std::to_string(budget) + " attempts with " +
                        std::to_string(points.size()) + " of " + std::to_string(n) + " points");
  return ParticleCloud(std::move(points));
}

// ---------------------------------------------------------------------------
// ASCII PLY

struct PlyChannel {
  std::string name;
  std::span<const double> values;
};

/// Writes `element vertex` with float x, y, z and any extra per-vertex scalar
/// channels. Comments go into the header, one per line.
inline std::string to_ply(const ParticleCloud& cloud, const std::vector<PlyChannel>& channels = {},
                          const std::vector<std::string>& comments = {}) {
  for (const auto& [name, values] : channels)
    if (values.size() != cloud.size()) throw ShapeMismatchError("PLY channel '" + name + "' has wrong length");
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\n";
  for (const auto& c : comments) {
    if (c.find('\n') != std::string::npos) throw InvalidArgument("PLY comment spans lines");
    out << "comment " << c << "\n";
  }
  out << "element vertex " << cloud.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  for (const auto& [name, values] : channels) out << "property float " << name << "\n";
  out << "end_header\n";
  char buf[64];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g", p.x(), p.y(), p.z());
    out << buf;
    for (const auto& [name, values] : channels) {
      std::snprintf(buf, sizeof buf, " %.9g", values[i]);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

inline ParticleCloud from_ply(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw InvalidArgument("not a PLY stream");
  std::size_t count = 0;
  int ix = -1, iy = -1, iz = -1, nprops = 0;
  bool in_vertex = false;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    std::string key;
    words >> key;
    if (key == "format") {
      std::string fmt;
      words >> fmt;
      if (fmt != "ascii") throw InvalidArgument("only ASCII PLY is supported");
    } else if (key == "element") {
      std::string name;
      words >> name;
      in_vertex = name == "vertex";
      if (in_vertex) words >> count;
    } else if (key == "property" && in_vertex) {
      std::string type, name;
      words >> type >> name;
      if (name == "x") ix = nprops;
      if (name == "y") iy = nprops;
      if (name == "z") iz = nprops;
      ++nprops;
    } else if (key == "end_header") {
      break;
    }
  }
  if (ix < 0 || iy < 0 || iz < 0) throw InvalidArgument("PLY vertex element lacks x, y, z");
  std::vector<Vec3> pts;
  pts.reserve(count);
  std::vector<double> row(static_cast<std::size_t>(nprops));
  for (std::size_t i = 0; i < count; ++i) {
    for (auto& v : row)
      if (!(in >> v)) throw InvalidArgument("truncated PLY vertex list");
    pts.emplace_back(row[ix], row[iy], row[iz]);
  }
  return ParticleCloud(std::move(pts));
}

inline ParticleCloud read_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  return from_ply(in);
}

}  // namespace cpdeform
