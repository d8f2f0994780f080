#pragma once

#include "poseforge/image.hpp"
#include "poseforge/rotcore.hpp"
#include "poseforge/shapecore.hpp"

#include <array>
#include <vector>

namespace poseforge {

struct Camera {
  double azimuth = 0.0;
  double elevation = 0.0;
  double distance = 2.5;
  double fov = deg2rad(50.0);  // vertical, square image

  void validate() const;
};

struct RenderConfig {
  int size = 64;
  double distance = 2.5;
  double fov_deg = 50.0;
  std::array<float, 3> background{0.0f, 0.0f, 0.0f};
  std::array<float, 3> albedo{0.85f, 0.85f, 0.85f};
  float ambient = 0.2f;
  bool depth_channel = false;
  bool normal_channel = false;

  int channels() const { return 3 + (depth_channel ? 1 : 0) + (normal_channel ? 3 : 0); }
  Camera camera(double azimuth, double elevation) const {
    return {azimuth, elevation, distance, deg2rad(fov_deg)};
  }
};

struct ViewLayout {
  int n_azi = 6;
  std::vector<double> elevations{deg2rad(0.0), deg2rad(30.0)};

  int count() const { return n_azi * static_cast<int>(elevations.size()); }
};

/// Elevation-major, azimuth-minor images of one shape.
struct ViewSet {
  ViewLayout layout;
  std::vector<Image> images;
};

/// N_azi x |elevations| cameras looking at the origin; azimuths k * 2pi/N_azi.
std::vector<Camera> place_cameras(int n_azi, const std::vector<double>& elevations,
                                  double distance, double fov = deg2rad(50.0));

/// Perspective z-buffered rasterization with flat headlight shading. The
/// image plane is rotated by `inplane` about the optical axis. Meshes must be
/// normalized (max vertex norm <= 1 + 1e-6).
Image render_view(const TriangleMesh& mesh, const Camera& camera, double inplane,
                  const RenderConfig& config);

/// As above, and fills `coverage` with 1 for every pixel a triangle covers.
Image render_view(const TriangleMesh& mesh, const Camera& camera, double inplane,
                  const RenderConfig& config, std::vector<std::uint8_t>* coverage);

ViewSet render_view_set(const TriangleMesh& mesh, const ViewLayout& layout,
                        const RenderConfig& config);

}  // namespace poseforge
