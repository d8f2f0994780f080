#pragma once

#include "poseforge/rotcore.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace poseforge {

class ObjParseError : public std::runtime_error {
 public:
  ObjParseError(const std::string& path, int line, int column,
                const std::string& what);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  bool empty() const { return faces.empty(); }
  /// Throws std::invalid_argument on bad indices, repeated indices within a
  /// face or non-finite coordinates.
  void validate() const;
};

struct PointCloud {
  std::vector<Vec3> points;
};

struct ShapeMeta {
  double diameter = 0.0;
  Vec3 centroid = Vec3::Zero();
};

/// Wavefront OBJ reader: `v` and `f` records only. Polygons are
/// fan-triangulated from their first vertex; negative indices are relative.
TriangleMesh load_obj(const std::filesystem::path& path);
TriangleMesh parse_obj(const std::string& text, const std::string& origin);
void save_obj(const TriangleMesh& mesh, const std::filesystem::path& path);

/// Centres the vertex centroid on the origin and scales the farthest vertex
/// to unit norm.
TriangleMesh normalize(const TriangleMesh& mesh);
double max_vertex_norm(const TriangleMesh& mesh);

double triangle_area(const TriangleMesh& mesh, std::size_t face);
double surface_area(const TriangleMesh& mesh);

/// Area-weighted i.i.d. surface samples. When `source_faces` is non-null it
/// receives the triangle index each point was drawn from.
PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n,
                          std::uint64_t seed,
                          std::vector<std::size_t>* source_faces = nullptr);

/// Exact maximum pairwise distance.
double diameter(const std::vector<Vec3>& points);
inline double diameter(const PointCloud& cloud) { return diameter(cloud.points); }
inline double diameter(const TriangleMesh& mesh) { return diameter(mesh.vertices); }

ShapeMeta shape_meta(const TriangleMesh& mesh);

TriangleMesh rotate_about_up(const TriangleMesh& mesh, double alpha);
PointCloud rotate_about_up(const PointCloud& cloud, double alpha);

/// Binary point cloud: magic "PFSPC\0\0\1", u64 count, then little-endian
/// f32 xyz triples.
void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud load_point_cloud(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_point_cloud(const PointCloud& cloud);
PointCloud decode_point_cloud(const std::vector<std::uint8_t>& bytes);

}  // namespace poseforge
