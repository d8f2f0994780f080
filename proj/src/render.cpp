#include "poseforge/render.hpp"

#include "poseforge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace poseforge {

namespace {

struct ScreenVertex {
  double x, y;  // pixel coordinates, y down
  double depth;  // distance along the optical axis
};

double edge(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

// A pixel centre lying exactly on an edge belongs to only one of the two
// triangles sharing it.
bool owns_edge(const ScreenVertex& a, const ScreenVertex& b) {
  const double dy = b.y - a.y, dx = b.x - a.x;
  return dy > 0.0 || (dy == 0.0 && dx < 0.0);
}

}  // namespace

void Camera::validate() const {
  if (!(distance > 1.0)) throw std::invalid_argument("camera distance must exceed 1");
  if (!(fov > 0.0 && fov < kPi)) throw std::invalid_argument("camera fov must be in (0, pi)");
  if (!std::isfinite(azimuth) || !std::isfinite(elevation)) {
    throw std::invalid_argument("camera angles must be finite");
  }
}

std::vector<Camera> place_cameras(int n_azi, const std::vector<double>& elevations,
                                  double distance, double fov) {
  if (n_azi < 1) throw std::invalid_argument("place_cameras: n_azi must be >= 1");
  if (elevations.empty()) throw std::invalid_argument("place_cameras: no elevations");
  std::vector<Camera> cams;
  cams.reserve(static_cast<std::size_t>(n_azi) * elevations.size());
  for (double ele : elevations) {
    if (!(ele >= 0.0 && ele <= kPi / 2.0)) {
      throw std::invalid_argument("place_cameras: elevation outside [0, pi/2]");
    }
    for (int k = 0; k < n_azi; ++k) {
      Camera cam{k * (2.0 * kPi / n_azi), ele, distance, fov};
      cam.validate();
      cams.push_back(cam);
    }
  }
  return cams;
}

Image render_view(const TriangleMesh& mesh, const Camera& camera, double inplane,
                  const RenderConfig& config) {
  return render_view(mesh, camera, inplane, config, nullptr);
}

Image render_view(const TriangleMesh& mesh, const Camera& camera, double inplane,
                  const RenderConfig& config, std::vector<std::uint8_t>* coverage) {
  camera.validate();
  if (config.size < 8) throw std::invalid_argument("render: image size must be >= 8");
  if (max_vertex_norm(mesh) > 1.0 + 1e-6) {
    throw std::invalid_argument("render: mesh is not normalized (max vertex norm > 1)");
  }
  mesh.validate();

  const int size = config.size;
  const int depth_c = config.depth_channel ? 3 : -1;
  const int normal_c = config.normal_channel ? (config.depth_channel ? 4 : 3) : -1;
  Image img(config.channels(), size, size);
  for (int c = 0; c < 3; ++c) {
    std::fill_n(img.data().begin() + static_cast<std::ptrdiff_t>(c) * size * size,
                size * size, config.background[c]);
  }
  if (depth_c >= 0) {
    std::fill_n(img.data().begin() + static_cast<std::ptrdiff_t>(depth_c) * size * size,
                size * size, 1.0f);
  }
  if (coverage) coverage->assign(static_cast<std::size_t>(size) * size, 0);

  // Same composition as euler_to_matrix, without range checks so that
  // unwrapped azimuths render identically to their wrapped equivalents.
  const Mat3 rot = rot_z(inplane) * rot_x(camera.elevation) * rot_y(-camera.azimuth);
  const double focal = 1.0 / std::tan(camera.fov / 2.0);
  const double half = size / 2.0;
  const double far_plane = camera.distance + 2.0;

  std::vector<Vec3> cam_pts(mesh.vertices.size());
  std::vector<ScreenVertex> screen(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    Vec3 p = rot * mesh.vertices[i];
    p.z() -= camera.distance;
    cam_pts[i] = p;
    const double depth = -p.z();
    screen[i] = {half + half * focal * p.x() / depth, half - half * focal * p.y() / depth, depth};
  }

  std::vector<double> zbuf(static_cast<std::size_t>(size) * size,
                           std::numeric_limits<double>::infinity());
  for (const auto& f : mesh.faces) {
    ScreenVertex v0 = screen[f[0]], v1 = screen[f[1]], v2 = screen[f[2]];
    double area = edge(v0, v1, v2.x, v2.y);
    if (area == 0.0 || !std::isfinite(area)) continue;
    if (area < 0.0) {
      std::swap(v1, v2);
      area = -area;
    }

    const Vec3& a = cam_pts[f[0]];
    Vec3 normal = (cam_pts[f[1]] - a).cross(cam_pts[f[2]] - a);
    const double nlen = normal.norm();
    if (nlen == 0.0) continue;
    normal /= nlen;
    const Vec3 to_eye = -(a + cam_pts[f[1]] + cam_pts[f[2]]).normalized();
    double lambert = normal.dot(to_eye);
    if (lambert < 0.0) {
      normal = -normal;
      lambert = -lambert;
    }
    const float shade = config.ambient + (1.0f - config.ambient) * static_cast<float>(lambert);

    const int x_lo = std::max(0, static_cast<int>(std::floor(std::min({v0.x, v1.x, v2.x}))));
    const int x_hi = std::min(size - 1, static_cast<int>(std::ceil(std::max({v0.x, v1.x, v2.x}))));
    const int y_lo = std::max(0, static_cast<int>(std::floor(std::min({v0.y, v1.y, v2.y}))));
    const int y_hi = std::min(size - 1, static_cast<int>(std::ceil(std::max({v0.y, v1.y, v2.y}))));
    const bool own0 = owns_edge(v1, v2), own1 = owns_edge(v2, v0), own2 = owns_edge(v0, v1);

    for (int y = y_lo; y <= y_hi; ++y) {
      const double py = y + 0.5;
      for (int x = x_lo; x <= x_hi; ++x) {
        const double px = x + 0.5;
        const double w0 = edge(v1, v2, px, py);
        const double w1 = edge(v2, v0, px, py);
        const double w2 = edge(v0, v1, px, py);
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        if ((w0 == 0.0 && !own0) || (w1 == 0.0 && !own1) || (w2 == 0.0 && !own2)) continue;
        // Perspective-correct depth: 1/depth is affine in screen space.
        const double inv_depth = (w0 / v0.depth + w1 / v1.depth + w2 / v2.depth) / area;
        const double depth = 1.0 / inv_depth;
        const std::size_t pix = static_cast<std::size_t>(y) * size + x;
        if (!(depth < zbuf[pix])) continue;
        zbuf[pix] = depth;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = config.albedo[c] * shade;
        if (depth_c >= 0) img.at(depth_c, y, x) = static_cast<float>(depth / far_plane);
        if (normal_c >= 0) {
          for (int k = 0; k < 3; ++k) {
            img.at(normal_c + k, y, x) = static_cast<float>(0.5 * (normal[k] + 1.0));
          }
        }
        if (coverage) (*coverage)[pix] = 1;
      }
    }
  }
  return img;
}

ViewSet render_view_set(const TriangleMesh& mesh, const ViewLayout& layout,
                        const RenderConfig& config) {
  const auto cams =
      place_cameras(layout.n_azi, layout.elevations, config.distance, deg2rad(config.fov_deg));
  ViewSet set;
  set.layout = layout;
  set.images.resize(cams.size());
  parallel_for(cams.size(), [&](std::size_t i) {
    set.images[i] = render_view(mesh, cams[i], 0.0, config);
  });
  return set;
}

}  // namespace poseforge
