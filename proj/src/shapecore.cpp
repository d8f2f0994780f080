#include "poseforge/shapecore.hpp"

#include "poseforge/binio.hpp"
#include "poseforge/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace poseforge {

namespace {

constexpr std::string_view kPointCloudMagic{"PFSPC\0\0\1", 8};

struct Token {
  std::string_view text;
  int column;  // 1-based
};

std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    out.push_back({line.substr(start, i - start), static_cast<int>(start) + 1});
  }
  return out;
}

}  // namespace

ObjParseError::ObjParseError(const std::string& path, int line, int column,
                             const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ":" +
                         std::to_string(column) + ": " + what),
      line_(line),
      column_(column) {}

void TriangleMesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (const auto& v : vertices) {
    if (!v.allFinite()) throw std::invalid_argument("mesh has non-finite vertex");
  }
  for (const auto& f : faces) {
    for (int idx : f) {
      if (idx < 0 || idx >= n) throw std::invalid_argument("mesh face index out of range");
    }
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
      throw std::invalid_argument("mesh face repeats a vertex");
    }
  }
}

TriangleMesh parse_obj(const std::string& text, const std::string& origin) {
  TriangleMesh mesh;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    std::string_view view(line);
    if (hash != std::string::npos) view = view.substr(0, hash);
    const auto tokens = tokenize(view);
    if (tokens.empty()) continue;
    const auto& kind = tokens[0].text;
    if (kind == "v") {
      if (tokens.size() < 4) {
        throw ObjParseError(origin, lineno, tokens[0].column,
                            "vertex record needs 3 coordinates");
      }
      Vec3 v;
      for (int k = 0; k < 3; ++k) {
        const auto& tok = tokens[k + 1];
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(tok.text.data(), tok.text.data() + tok.text.size(), value);
        if (ec != std::errc() || ptr != tok.text.data() + tok.text.size() || !std::isfinite(value)) {
          throw ObjParseError(origin, lineno, tok.column,
                              "bad coordinate '" + std::string(tok.text) + "'");
        }
        v[k] = value;
      }
      mesh.vertices.push_back(v);
    } else if (kind == "f") {
      if (tokens.size() < 4) {
        throw ObjParseError(origin, lineno, tokens[0].column,
                            "face record needs at least 3 vertices");
      }
      std::vector<int> poly;
      for (std::size_t k = 1; k < tokens.size(); ++k) {
        const auto& tok = tokens[k];
        const auto head = tok.text.substr(0, tok.text.find('/'));
        long idx = 0;
        auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), idx);
        if (ec != std::errc() || ptr != head.data() + head.size() || idx == 0) {
          throw ObjParseError(origin, lineno, tok.column,
                              "bad face index '" + std::string(tok.text) + "'");
        }
        const long n = static_cast<long>(mesh.vertices.size());
        const long resolved = idx > 0 ? idx - 1 : n + idx;
        if (resolved < 0 || resolved >= n) {
          throw ObjParseError(origin, lineno, tok.column,
                              "face index " + std::to_string(idx) +
                                  " out of range (" + std::to_string(n) + " vertices)");
        }
        poly.push_back(static_cast<int>(resolved));
      }
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        std::array<int, 3> tri{poly[0], poly[k], poly[k + 1]};
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
        mesh.faces.push_back(tri);
      }
    }
    // vt, vn, g, o, s, usemtl, mtllib and the rest carry nothing we render.
  }
  return mesh;
}

TriangleMesh load_obj(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("OBJ file not found: " + path.string());
  }
  return parse_obj(binio::read_text(path), path.string());
}

void save_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces) {
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  }
  binio::write_text(path, out.str());
}

double max_vertex_norm(const TriangleMesh& mesh) {
  double m = 0.0;
  for (const auto& v : mesh.vertices) m = std::max(m, v.norm());
  return m;
}

TriangleMesh normalize(const TriangleMesh& mesh) {
  if (mesh.vertices.empty()) throw std::invalid_argument("normalize: empty mesh");
  Vec3 centroid = Vec3::Zero();
  for (const auto& v : mesh.vertices) centroid += v;
  centroid /= static_cast<double>(mesh.vertices.size());
  TriangleMesh out = mesh;
  double radius = 0.0;
  for (auto& v : out.vertices) {
    v -= centroid;
    radius = std::max(radius, v.norm());
  }
  if (radius == 0.0) throw std::invalid_argument("normalize: all vertices coincide");
  for (auto& v : out.vertices) v /= radius;
  return out;
}

double triangle_area(const TriangleMesh& mesh, std::size_t face) {
  const auto& f = mesh.faces[face];
  const Vec3& a = mesh.vertices[f[0]];
  return 0.5 * (mesh.vertices[f[1]] - a).cross(mesh.vertices[f[2]] - a).norm();
}

double surface_area(const TriangleMesh& mesh) {
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) total += triangle_area(mesh, i);
  return total;
}

PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed,
                          std::vector<std::size_t>* source_faces) {
  if (n == 0) throw std::invalid_argument("sample_surface: n must be >= 1");
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    total += triangle_area(mesh, i);
    cumulative[i] = total;
  }
  if (!(total > 0.0)) throw std::invalid_argument("sample_surface: mesh has zero area");

  Rng rng(seed);
  PointCloud cloud;
  cloud.points.reserve(n);
  if (source_faces) source_faces->clear();
  for (std::size_t i = 0; i < n; ++i) {
    const double target = uniform01(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    std::size_t face = static_cast<std::size_t>(it - cumulative.begin());
    if (face >= cumulative.size()) face = cumulative.size() - 1;
    // Skip zero-area faces that share a cumulative value with a neighbour.
    while (triangle_area(mesh, face) == 0.0 && face + 1 < cumulative.size()) ++face;
    double u = uniform01(rng), v = uniform01(rng);
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const auto& f = mesh.faces[face];
    const Vec3& a = mesh.vertices[f[0]];
    cloud.points.push_back(a + u * (mesh.vertices[f[1]] - a) + v * (mesh.vertices[f[2]] - a));
    if (source_faces) source_faces->push_back(face);
  }
  return cloud;
}

double diameter(const std::vector<Vec3>& points) {
  double best = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      best = std::max(best, (points[i] - points[j]).squaredNorm());
    }
  }
  return std::sqrt(best);
}

ShapeMeta shape_meta(const TriangleMesh& mesh) {
  ShapeMeta meta;
  meta.diameter = diameter(mesh.vertices);
  if (!mesh.vertices.empty()) {
    for (const auto& v : mesh.vertices) meta.centroid += v;
    meta.centroid /= static_cast<double>(mesh.vertices.size());
  }
  return meta;
}

TriangleMesh rotate_about_up(const TriangleMesh& mesh, double alpha) {
  const Mat3 r = rot_y(alpha);
  TriangleMesh out = mesh;
  for (auto& v : out.vertices) v = r * v;
  return out;
}

PointCloud rotate_about_up(const PointCloud& cloud, double alpha) {
  const Mat3 r = rot_y(alpha);
  PointCloud out = cloud;
  for (auto& p : out.points) p = r * p;
  return out;
}

std::vector<std::uint8_t> encode_point_cloud(const PointCloud& cloud) {
  binio::Writer w;
  w.magic(kPointCloudMagic);
  w.pod<std::uint64_t>(cloud.points.size());
  for (const auto& p : cloud.points) {
    for (int k = 0; k < 3; ++k) w.pod<float>(static_cast<float>(p[k]));
  }
  return w.take();
}

PointCloud decode_point_cloud(const std::vector<std::uint8_t>& bytes) {
  binio::Reader r(bytes);
  r.expect_magic(kPointCloudMagic, "point cloud");
  const auto n = r.pod<std::uint64_t>();
  if (n > r.remaining() / 12 || r.remaining() != n * 12) {
    throw std::runtime_error("point cloud payload size does not match its count");
  }
  PointCloud cloud;
  cloud.points.resize(n);
  for (auto& p : cloud.points) {
    for (int k = 0; k < 3; ++k) p[k] = r.pod<float>();
  }
  return cloud;
}

void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  binio::write_file(path, encode_point_cloud(cloud));
}

PointCloud load_point_cloud(const std::filesystem::path& path) {
  return decode_point_cloud(binio::read_file(path));
}

}  // namespace poseforge
