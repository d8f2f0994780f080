#pragma once

#include "poseforge/image.hpp"
#include "poseforge/random.hpp"
#include "poseforge/render.hpp"
#include "poseforge/rotcore.hpp"
#include "poseforge/shapecore.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace poseforge {

enum class ShapeFamily { cuboid, l_shape, cylinder, composite };

std::string to_string(ShapeFamily family);
/// Accepts "cuboid", "l_shape", "cylinder" (or "cylinder-approx") and "composite".
ShapeFamily shape_family_from_string(const std::string& s);

/// Normalized procedural meshes. Every family carries a marker block off the
/// up axis, so no rotation about +Y maps a shape onto itself, while the whole
/// construction stays mirror-symmetric about the YZ plane.
std::vector<TriangleMesh> make_procedural_shapes(int n, ShapeFamily family, std::uint64_t seed);

/// Axis-aligned box centred on the origin, normalized, without a marker.
TriangleMesh make_reference_box(double hx, double hy, double hz);

/// True when some rotation about +Y by a whole number of degrees in
/// [1, 359] maps the vertex set onto itself within `tol`.
bool has_up_axis_symmetry(const TriangleMesh& mesh, double tol = 1e-6);
/// True when the vertex set is not invariant under x -> -x, i.e. a
/// horizontal image flip does not correspond to a relabelled view.
bool is_chiral(const TriangleMesh& mesh, double tol = 1e-6);

enum class SplitMode { random, novel_shape };
std::string to_string(SplitMode mode);
SplitMode split_mode_from_string(const std::string& s);

struct DatagenConfig {
  int views_per_shape = 20;
  double azi_lo_deg = -180.0, azi_hi_deg = 180.0;
  double ele_lo_deg = 0.0, ele_hi_deg = 60.0;
  double inp_lo_deg = -15.0, inp_hi_deg = 15.0;
  /// black | solid | gradient | noise | mixed
  std::string background = "mixed";
  int num_points = 2500;
  RenderConfig render;
  ViewLayout views;
  int view_size = 64;
  SplitMode split_mode = SplitMode::random;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  /// Families held out as the test split in novel-shape mode.
  std::vector<std::string> heldout_families{"l_shape"};

  void validate() const;
};

void to_json(nlohmann::json& j, const DatagenConfig& c);

/// Fills `img` (RGB channels only) with a procedural background.
void paint_background(Image& img, const std::string& mode, Rng& rng);

struct ShapeSpec {
  std::string id;
  std::string family;
  TriangleMesh mesh;
};

struct ShapeRecord {
  std::string id;
  std::string family;
  std::string mesh_path;
  std::string points_path;
  std::string views_path;
  double diameter = 0.0;
  bool chiral = false;
  bool symmetric = false;
};

struct SampleRecord {
  std::string id;
  std::string shape_id;
  std::string image_png;
  std::string image_raw;
  EulerPose pose;
  Vec3 translation = Vec3::Zero();
  std::string split;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string config_sha256;
  nlohmann::json datagen;
  std::string datagen_sha256;
  std::vector<ShapeRecord> shapes;
  std::vector<SampleRecord> samples;

  const ShapeRecord& shape(const std::string& id) const;
  std::vector<const SampleRecord*> split(const std::string& name) const;
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Renders `views_per_shape` random views of every shape over procedural
/// backgrounds and writes images, point clouds, view sets, meshes and
/// manifest.json under `out`. Deterministic under `seed`.
DatasetManifest generate_dataset(const std::vector<ShapeSpec>& shapes, const DatagenConfig& config,
                                 std::uint64_t seed, const std::filesystem::path& out,
                                 const std::string& config_sha256);

/// Reads manifest.json, checks that every referenced file exists and that
/// the stored generation config still hashes to its recorded digest. When
/// `expected` is given the stored config must equal it.
DatasetManifest load_manifest(const std::filesystem::path& dir,
                              const std::optional<DatagenConfig>& expected = std::nullopt);

/// View-set bundle: magic "PFSVIEW\1", u32 n_azi, u32 n_ele, f64 elevations,
/// then one length-prefixed raw image per view.
void save_view_set(const ViewSet& views, const std::filesystem::path& path);
ViewSet load_view_set(const std::filesystem::path& path);

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  double crop_prob = 0.5;
  double crop_frac = 0.1;
  double color_prob = 0.5;
  double gain_lo = 0.8, gain_hi = 1.2;
  double brightness = 0.1;
  double azimuth_range_deg = 45.0;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);

/// What augment() drew, for inspection.
struct AugmentDraw {
  bool flip = false;
  bool crop = false;
  std::array<double, 4> crop_box{0, 0, 0, 0};  // left, top, right, bottom offsets as fractions
  bool color = false;
  std::array<double, 3> gain{1, 1, 1};
  std::array<double, 3> offset{0, 0, 0};
  double alpha = 0.0;
};

AugmentDraw draw_augment(const AugmentConfig& config, Rng& rng);

/// Samples src over the box [x0, x1] x [y0, y1] (pixel units, may exceed
/// the image; edges clamp) back to the source resolution.
Image crop_resize(const Image& src, double x0, double y0, double x1, double y1);

struct AugmentedImage {
  Image image;
  EulerPose pose;
};

/// Image-side effects of a draw: flip, crop, color jitter, and the label
/// remap for the flip and the shape rotation by -alpha.
AugmentedImage apply_image_augment(const Image& image, const EulerPose& pose, const AugmentDraw& draw);

struct AugmentedSample {
  Image image;
  EulerPose pose;
  TriangleMesh shape;
  AugmentDraw draw;
};

/// Full augmentation of one sample. The shape is turned by
/// rotate_about_up(shape, -alpha) and the label by shift_azimuth(pose, alpha),
/// which keeps the image a faithful view of the turned shape.
AugmentedSample augment(const Image& image, const EulerPose& pose, const TriangleMesh& shape,
                        const AugmentConfig& config, Rng& rng);

}  // namespace poseforge
