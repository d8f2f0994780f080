#include "poseforge/datagen.hpp"

#include "poseforge/binio.hpp"
#include "poseforge/config.hpp"
#include "poseforge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

namespace poseforge {

namespace fs = std::filesystem;

std::string to_string(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::cuboid: return "cuboid";
    case ShapeFamily::l_shape: return "l_shape";
    case ShapeFamily::cylinder: return "cylinder";
    case ShapeFamily::composite: return "composite";
  }
  return "cuboid";
}

ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "cuboid") return ShapeFamily::cuboid;
  if (s == "l_shape") return ShapeFamily::l_shape;
  if (s == "cylinder" || s == "cylinder-approx") return ShapeFamily::cylinder;
  if (s == "composite") return ShapeFamily::composite;
  throw std::invalid_argument("unknown shape family '" + s + "'");
}

std::string to_string(SplitMode mode) { return mode == SplitMode::random ? "random" : "novel-shape"; }

SplitMode split_mode_from_string(const std::string& s) {
  if (s == "random") return SplitMode::random;
  if (s == "novel-shape" || s == "novel_shape") return SplitMode::novel_shape;
  throw std::invalid_argument("unknown split mode '" + s + "' (expected random or novel-shape)");
}

namespace {

void add_box(TriangleMesh& mesh, const Vec3& c, const Vec3& h) {
  const int base = static_cast<int>(mesh.vertices.size());
  for (int i = 0; i < 8; ++i) {
    mesh.vertices.emplace_back(c.x() + ((i & 1) ? h.x() : -h.x()), c.y() + ((i & 2) ? h.y() : -h.y()),
                               c.z() + ((i & 4) ? h.z() : -h.z()));
  }
  static constexpr int quads[6][4] = {{0, 2, 6, 4}, {1, 5, 7, 3}, {0, 4, 5, 1},
                                      {2, 3, 7, 6}, {0, 1, 3, 2}, {4, 6, 7, 5}};
  for (const auto& q : quads) {
    mesh.faces.push_back({base + q[0], base + q[1], base + q[2]});
    mesh.faces.push_back({base + q[0], base + q[2], base + q[3]});
  }
}

// n-gon prism around +Y; vertex k sits at angle 2 pi k / n from +Z, which
// keeps the ring symmetric under x -> -x.
void add_prism(TriangleMesh& mesh, int n, double radius, double half_height) {
  const int base = static_cast<int>(mesh.vertices.size());
  for (int k = 0; k < n; ++k) {
    const double t = 2.0 * kPi * k / n;
    mesh.vertices.emplace_back(radius * std::sin(t), -half_height, radius * std::cos(t));
    mesh.vertices.emplace_back(radius * std::sin(t), half_height, radius * std::cos(t));
  }
  const int bottom = static_cast<int>(mesh.vertices.size());
  mesh.vertices.emplace_back(0.0, -half_height, 0.0);
  mesh.vertices.emplace_back(0.0, half_height, 0.0);
  for (int k = 0; k < n; ++k) {
    const int a0 = base + 2 * k, a1 = a0 + 1;
    const int b0 = base + 2 * ((k + 1) % n), b1 = b0 + 1;
    mesh.faces.push_back({a0, b0, b1});
    mesh.faces.push_back({a0, b1, a1});
    mesh.faces.push_back({bottom, b0, a0});
    mesh.faces.push_back({bottom + 1, a1, b1});
  }
}

// Small block resting on top of a surface at height `top`, pushed toward +Z.
void add_marker(TriangleMesh& mesh, double top, double z, double size) {
  const double s = 1.8 * size;
  add_box(mesh, Vec3(0.0, top + s, z), Vec3(s, s, s));
}

TriangleMesh make_shape(ShapeFamily family, Rng& rng) {
  TriangleMesh mesh;
  switch (family) {
    case ShapeFamily::cuboid: {
      const Vec3 h(uniform(rng, 0.3, 0.8), uniform(rng, 0.2, 0.7), uniform(rng, 0.3, 0.8));
      add_box(mesh, Vec3::Zero(), h);
      const double s = 0.25 * std::min({h.x(), h.y(), h.z()}) + 0.05;
      add_marker(mesh, h.y(), uniform(rng, 0.4, 0.7) * h.z(), s);
      break;
    }
    case ShapeFamily::l_shape: {
      const double hx = uniform(rng, 0.3, 0.7), hz = uniform(rng, 0.4, 0.8);
      const double hb = uniform(rng, 0.1, 0.25);
      add_box(mesh, Vec3(0.0, hb, 0.0), Vec3(hx, hb, hz));
      const double hu = uniform(rng, 0.3, 0.6), tz = uniform(rng, 0.1, 0.25);
      add_box(mesh, Vec3(0.0, 2.0 * hb + hu, -hz + tz), Vec3(hx, hu, tz));
      add_marker(mesh, 2.0 * hb, uniform(rng, 0.4, 0.7) * hz, 0.08 + 0.1 * hb);
      break;
    }
    case ShapeFamily::cylinder: {
      const int n = 6 + static_cast<int>(uniform_index(rng, 7));
      const double r = uniform(rng, 0.3, 0.7), h = uniform(rng, 0.2, 0.7);
      add_prism(mesh, n, r, h);
      add_marker(mesh, h, uniform(rng, 0.4, 0.6) * r, 0.08 + 0.1 * r);
      break;
    }
    case ShapeFamily::composite: {
      const Vec3 h0(uniform(rng, 0.3, 0.7), uniform(rng, 0.15, 0.4), uniform(rng, 0.3, 0.7));
      add_box(mesh, Vec3::Zero(), h0);
      const Vec3 h1(uniform(rng, 0.1, 0.3), uniform(rng, 0.2, 0.5), uniform(rng, 0.1, 0.3));
      add_box(mesh, Vec3(0.0, h0.y() + h1.y(), -uniform(rng, 0.0, 0.5) * h0.z()), h1);
      if (coin(rng, 0.5)) {
        const Vec3 h2(uniform(rng, 0.05, 0.15), uniform(rng, 0.1, 0.3), uniform(rng, 0.05, 0.2));
        const double x = h0.x() + h2.x(), z = uniform(rng, -0.5, 0.5) * h0.z();
        add_box(mesh, Vec3(x, 0.0, z), h2);
        add_box(mesh, Vec3(-x, 0.0, z), h2);
      }
      add_marker(mesh, h0.y(), uniform(rng, 0.5, 0.8) * h0.z(), 0.06 + 0.1 * h0.y());
      break;
    }
  }
  return normalize(mesh);
}

// Each point must have a partner in `target` within tol.
bool maps_onto(const std::vector<Vec3>& moved, const std::vector<Vec3>& target, double tol) {
  for (const Vec3& p : moved) {
    bool found = false;
    for (const Vec3& q : target) {
      if ((p - q).cwiseAbs().maxCoeff() <= tol) {
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace

std::vector<TriangleMesh> make_procedural_shapes(int n, ShapeFamily family, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("make_procedural_shapes: n must be >= 1");
  std::vector<TriangleMesh> out;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(family), static_cast<std::uint64_t>(i)}));
    out.push_back(make_shape(family, rng));
  }
  return out;
}

TriangleMesh make_reference_box(double hx, double hy, double hz) {
  TriangleMesh mesh;
  add_box(mesh, Vec3::Zero(), Vec3(hx, hy, hz));
  return normalize(mesh);
}

bool has_up_axis_symmetry(const TriangleMesh& mesh, double tol) {
  for (int deg = 1; deg < 360; ++deg) {
    const Mat3 r = rot_y(deg2rad(deg));
    std::vector<Vec3> moved;
    moved.reserve(mesh.vertices.size());
    for (const auto& v : mesh.vertices) moved.push_back(r * v);
    if (maps_onto(moved, mesh.vertices, tol)) return true;
  }
  return false;
}

bool is_chiral(const TriangleMesh& mesh, double tol) {
  std::vector<Vec3> mirrored;
  for (const auto& v : mesh.vertices) mirrored.emplace_back(-v.x(), v.y(), v.z());
  return !maps_onto(mirrored, mesh.vertices, tol);
}

void DatagenConfig::validate() const {
  if (views_per_shape < 1) throw std::invalid_argument("datagen: views_per_shape must be >= 1");
  if (!(azi_lo_deg < azi_hi_deg) || !(ele_lo_deg <= ele_hi_deg) || !(inp_lo_deg <= inp_hi_deg)) {
    throw std::invalid_argument("datagen: empty pose range");
  }
  if (ele_lo_deg < -90.0 || ele_hi_deg > 90.0) throw std::invalid_argument("datagen: elevation outside [-90, 90]");
  static const std::set<std::string> modes{"black", "solid", "gradient", "noise", "mixed"};
  if (!modes.count(background)) throw std::invalid_argument("datagen: unknown background mode " + background);
  if (num_points < 1) throw std::invalid_argument("datagen: num_points must be >= 1");
  if (view_size < 8 || render.size < 8) throw std::invalid_argument("datagen: image size must be >= 8");
  if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction > 1.0) {
    throw std::invalid_argument("datagen: split fractions must be nonnegative and sum to <= 1");
  }
}

void to_json(nlohmann::json& j, const DatagenConfig& c) {
  std::vector<double> ele_deg;
  for (double e : c.views.elevations) ele_deg.push_back(rad2deg(e));
  j = {{"views_per_shape", c.views_per_shape},
       {"azi_range_deg", {c.azi_lo_deg, c.azi_hi_deg}},
       {"ele_range_deg", {c.ele_lo_deg, c.ele_hi_deg}},
       {"inp_range_deg", {c.inp_lo_deg, c.inp_hi_deg}},
       {"background", c.background},
       {"num_points", c.num_points},
       {"image_size", c.render.size},
       {"distance", c.render.distance},
       {"fov_deg", c.render.fov_deg},
       {"ambient", c.render.ambient},
       {"depth_channel", c.render.depth_channel},
       {"normal_channel", c.render.normal_channel},
       {"views", {{"n_azi", c.views.n_azi}, {"elevations_deg", ele_deg}, {"image_size", c.view_size}}},
       {"split_mode", to_string(c.split_mode)},
       {"val_fraction", c.val_fraction},
       {"test_fraction", c.test_fraction},
       {"heldout_families", c.heldout_families}};
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"enabled", c.enabled},         {"flip_prob", c.flip_prob},
       {"crop_prob", c.crop_prob},     {"crop_frac", c.crop_frac},
       {"color_prob", c.color_prob},   {"gain_range", {c.gain_lo, c.gain_hi}},
       {"brightness", c.brightness},   {"azimuth_range_deg", c.azimuth_range_deg}};
}

void paint_background(Image& img, const std::string& mode, Rng& rng) {
  std::string m = mode;
  if (m == "mixed") {
    static const char* kModes[] = {"solid", "gradient", "noise"};
    m = kModes[uniform_index(rng, 3)];
  }
  const int h = img.height(), w = img.width();
  if (m == "black") {
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.at(c, y, x) = 0.0f;
  } else if (m == "solid") {
    for (int c = 0; c < 3; ++c) {
      const float v = static_cast<float>(uniform01(rng));
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.at(c, y, x) = v;
    }
  } else if (m == "gradient") {
    double a[3], b[3];
    for (int c = 0; c < 3; ++c) {
      a[c] = uniform01(rng);
      b[c] = uniform01(rng);
    }
    const double t = uniform(rng, 0.0, 2.0 * kPi);
    const double dx = std::cos(t), dy = std::sin(t);
    const double span = std::abs(dx) * (w - 1) + std::abs(dy) * (h - 1);
    const double lo = std::min(0.0, dx * (w - 1)) + std::min(0.0, dy * (h - 1));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double s = span > 0 ? (dx * x + dy * y - lo) / span : 0.0;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(a[c] + (b[c] - a[c]) * s);
      }
    }
  } else if (m == "noise") {
    constexpr int kGrid = 6;
    for (int c = 0; c < 3; ++c) {
      double lattice[kGrid][kGrid];
      for (auto& row : lattice)
        for (auto& v : row) v = uniform01(rng);
      for (int y = 0; y < h; ++y) {
        const double gy = static_cast<double>(y) * (kGrid - 1) / std::max(1, h - 1);
        const int y0 = std::min(kGrid - 2, static_cast<int>(gy));
        const double fy = gy - y0;
        for (int x = 0; x < w; ++x) {
          const double gx = static_cast<double>(x) * (kGrid - 1) / std::max(1, w - 1);
          const int x0 = std::min(kGrid - 2, static_cast<int>(gx));
          const double fx = gx - x0;
          // smoothstep weights give the usual value-noise look
          const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
          const double top = lattice[y0][x0] + (lattice[y0][x0 + 1] - lattice[y0][x0]) * sx;
          const double bot = lattice[y0 + 1][x0] + (lattice[y0 + 1][x0 + 1] - lattice[y0 + 1][x0]) * sx;
          img.at(c, y, x) = static_cast<float>(top + (bot - top) * sy);
        }
      }
    }
  } else {
    throw std::invalid_argument("unknown background mode " + mode);
  }
}

const ShapeRecord& DatasetManifest::shape(const std::string& id) const {
  for (const auto& s : shapes) {
    if (s.id == id) return s;
  }
  throw std::runtime_error("manifest: unknown shape id " + id);
}

std::vector<const SampleRecord*> DatasetManifest::split(const std::string& name) const {
  std::vector<const SampleRecord*> out;
  for (const auto& s : samples) {
    if (s.split == name) out.push_back(&s);
  }
  return out;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : m.shapes) {
    shapes.push_back({{"id", s.id},
                      {"family", s.family},
                      {"mesh", s.mesh_path},
                      {"points", s.points_path},
                      {"views", s.views_path},
                      {"diameter", s.diameter},
                      {"chiral", s.chiral},
                      {"symmetric", s.symmetric}});
  }
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    samples.push_back({{"id", s.id},
                       {"shape_id", s.shape_id},
                       {"image", s.image_png},
                       {"image_raw", s.image_raw},
                       {"azi_deg", rad2deg(s.pose.azi)},
                       {"ele_deg", rad2deg(s.pose.ele)},
                       {"inp_deg", rad2deg(s.pose.inp)},
                       {"t", {s.translation.x(), s.translation.y(), s.translation.z()}},
                       {"split", s.split}});
  }
  return {{"seed", m.seed},
          {"config_sha256", m.config_sha256},
          {"datagen", m.datagen},
          {"datagen_sha256", m.datagen_sha256},
          {"shapes", shapes},
          {"samples", samples}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.seed = j.at("seed");
  m.config_sha256 = j.at("config_sha256");
  m.datagen = j.at("datagen");
  m.datagen_sha256 = j.at("datagen_sha256");
  for (const auto& s : j.at("shapes")) {
    m.shapes.push_back({s.at("id"), s.at("family"), s.at("mesh"), s.at("points"), s.at("views"),
                        s.at("diameter"), s.at("chiral"), s.at("symmetric")});
  }
  for (const auto& s : j.at("samples")) {
    SampleRecord r;
    r.id = s.at("id");
    r.shape_id = s.at("shape_id");
    r.image_png = s.at("image");
    r.image_raw = s.at("image_raw");
    r.pose = EulerPose::from_degrees(s.at("azi_deg"), s.at("ele_deg"), s.at("inp_deg"));
    const auto& t = s.at("t");
    r.translation = Vec3(t.at(0), t.at(1), t.at(2));
    r.split = s.at("split");
    m.samples.push_back(std::move(r));
  }
  return m;
}

void save_view_set(const ViewSet& views, const fs::path& path) {
  binio::Writer w;
  w.magic(std::string_view("PFSVIEW\1", 8));
  w.pod<std::uint32_t>(views.layout.n_azi);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(views.layout.elevations.size()));
  for (double e : views.layout.elevations) w.pod<double>(e);
  for (const auto& img : views.images) {
    const auto bytes = encode_raw_image(img);
    w.pod<std::uint64_t>(bytes.size());
    w.bytes(bytes.data(), bytes.size());
  }
  binio::write_file(path, w.take());
}

ViewSet load_view_set(const fs::path& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes);
  r.expect_magic(std::string_view("PFSVIEW\1", 8), "view set");
  ViewSet vs;
  vs.layout.n_azi = static_cast<int>(r.pod<std::uint32_t>());
  const auto n_ele = r.pod<std::uint32_t>();
  vs.layout.elevations.clear();
  for (std::uint32_t i = 0; i < n_ele; ++i) vs.layout.elevations.push_back(r.pod<double>());
  for (int i = 0; i < vs.layout.count(); ++i) {
    const auto n = r.pod<std::uint64_t>();
    if (n > r.remaining()) throw std::runtime_error("view set: truncated image");
    std::vector<std::uint8_t> img(n);
    r.bytes(img.data(), n);
    vs.images.push_back(decode_raw_image(img));
  }
  if (r.remaining() != 0) throw std::runtime_error("view set: trailing bytes");
  return vs;
}

namespace {

std::string fmt_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

// Salts for the per-purpose random streams.
enum : std::uint64_t { kPoseStream = 1, kAppearanceStream = 2, kPointStream = 3, kSplitStream = 4 };

}  // namespace

DatasetManifest generate_dataset(const std::vector<ShapeSpec>& shapes, const DatagenConfig& config,
                                 std::uint64_t seed, const fs::path& out, const std::string& config_sha256) {
  if (shapes.empty()) throw std::invalid_argument("generate_dataset: empty shape list");
  config.validate();
  fs::create_directories(out / "shapes");
  fs::create_directories(out / "images");

  DatasetManifest m;
  m.seed = seed;
  m.config_sha256 = config_sha256;
  m.datagen = config;
  m.datagen_sha256 = sha256_hex(m.datagen.dump());

  RenderConfig view_cfg = config.render;
  view_cfg.size = config.view_size;

  m.shapes.resize(shapes.size());
  parallel_for(shapes.size(), [&](std::size_t i) {
    const ShapeSpec& spec = shapes[i];
    ShapeRecord& rec = m.shapes[i];
    rec.id = spec.id;
    rec.family = spec.family;
    rec.mesh_path = "shapes/" + spec.id + ".obj";
    rec.points_path = "shapes/" + spec.id + ".pts";
    rec.views_path = "shapes/" + spec.id + ".views";
    save_obj(spec.mesh, out / rec.mesh_path);
    const PointCloud cloud = sample_surface(spec.mesh, config.num_points, derive_seed(seed, {kPointStream, i}));
    save_point_cloud(cloud, out / rec.points_path);
    save_view_set(render_view_set(spec.mesh, config.views, view_cfg), out / rec.views_path);
    rec.diameter = diameter(spec.mesh);
    rec.chiral = is_chiral(spec.mesh);
    rec.symmetric = has_up_axis_symmetry(spec.mesh);
  });

  // Splits are decided up front so they do not depend on rendering order.
  const std::size_t k = static_cast<std::size_t>(config.views_per_shape);
  const std::size_t total = shapes.size() * k;
  std::vector<std::string> split(total, "train");
  if (config.split_mode == SplitMode::random) {
    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    Rng rng(derive_seed(seed, {kSplitStream}));
    for (std::size_t i = total; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    const auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * total));
    const auto n_test = static_cast<std::size_t>(std::llround(config.test_fraction * total));
    for (std::size_t i = 0; i < n_val && i < total; ++i) split[order[i]] = "val";
    for (std::size_t i = n_val; i < n_val + n_test && i < total; ++i) split[order[i]] = "test";
  } else {
    const std::set<std::string> heldout(config.heldout_families.begin(), config.heldout_families.end());
    std::vector<std::size_t> seen;
    for (std::size_t s = 0; s < shapes.size(); ++s) {
      if (!heldout.count(shapes[s].family)) seen.push_back(s);
    }
    Rng rng(derive_seed(seed, {kSplitStream}));
    for (std::size_t i = seen.size(); i > 1; --i) std::swap(seen[i - 1], seen[uniform_index(rng, i)]);
    const auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * seen.size()));
    for (std::size_t s = 0; s < shapes.size(); ++s) {
      const bool held = heldout.count(shapes[s].family) > 0;
      const bool val = std::find(seen.begin(), seen.begin() + std::min(n_val, seen.size()), s) !=
                       seen.begin() + std::min(n_val, seen.size());
      for (std::size_t v = 0; v < k; ++v) split[s * k + v] = held ? "test" : (val ? "val" : "train");
    }
  }

  m.samples.resize(total);
  parallel_for(total, [&](std::size_t idx) {
    const std::size_t s = idx / k;
    const ShapeSpec& spec = shapes[s];
    Rng pose_rng(derive_seed(seed, {kPoseStream, idx}));
    const double azi = uniform(pose_rng, deg2rad(config.azi_lo_deg), deg2rad(config.azi_hi_deg));
    const double ele = uniform(pose_rng, deg2rad(config.ele_lo_deg), deg2rad(config.ele_hi_deg));
    const double inp = uniform(pose_rng, deg2rad(config.inp_lo_deg), deg2rad(config.inp_hi_deg));
    // The manifest stores degrees; render exactly the pose a reader will get back.
    const EulerPose pose = EulerPose::from_degrees(rad2deg(azi), rad2deg(ele), rad2deg(inp));

    Rng look(derive_seed(seed, {kAppearanceStream, idx}));
    RenderConfig rc = config.render;
    for (auto& a : rc.albedo) a = static_cast<float>(uniform(look, 0.35, 1.0));
    std::vector<std::uint8_t> mask;
    Image fg = render_view(spec.mesh, rc.camera(pose.azi, pose.ele), pose.inp, rc, &mask);
    Image img = fg;
    paint_background(img, config.background, look);
    const int n = rc.size * rc.size;
    for (int c = 0; c < 3; ++c) {
      for (int p = 0; p < n; ++p) {
        if (mask[p]) img.data()[static_cast<std::size_t>(c) * n + p] = fg.data()[static_cast<std::size_t>(c) * n + p];
      }
    }

    SampleRecord& rec = m.samples[idx];
    rec.id = fmt_id("s", idx);
    rec.shape_id = spec.id;
    rec.image_png = "images/" + rec.id + ".png";
    rec.image_raw = "images/" + rec.id + ".raw";
    rec.pose = pose;
    rec.translation = Vec3(0.0, 0.0, -rc.distance);
    rec.split = split[idx];
    save_png(img, out / rec.image_png);
    save_raw_image(img, out / rec.image_raw);
  });

  // Write-then-rename keeps a half-written manifest from ever being read.
  const fs::path tmp = out / "manifest.json.tmp";
  binio::write_text(tmp, manifest_to_json(m).dump(2) + "\n");
  fs::rename(tmp, out / "manifest.json");
  return m;
}

DatasetManifest load_manifest(const fs::path& dir, const std::optional<DatagenConfig>& expected) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw std::runtime_error("no manifest.json in " + dir.string());
  DatasetManifest m = manifest_from_json(nlohmann::json::parse(binio::read_text(path)));
  if (sha256_hex(m.datagen.dump()) != m.datagen_sha256) {
    throw std::runtime_error("manifest: generation config does not match its recorded hash");
  }
  if (expected && nlohmann::json(*expected) != m.datagen) {
    throw std::runtime_error("manifest: stale dataset, generated with a different datagen config");
  }
  std::set<std::string> ids;
  for (const auto& s : m.shapes) {
    if (!ids.insert(s.id).second) throw std::runtime_error("manifest: duplicate shape id " + s.id);
    for (const auto& p : {s.mesh_path, s.points_path, s.views_path}) {
      if (!fs::exists(dir / p)) throw std::runtime_error("manifest: missing file " + p);
    }
  }
  std::set<std::string> sample_ids;
  for (const auto& s : m.samples) {
    if (!sample_ids.insert(s.id).second) throw std::runtime_error("manifest: duplicate sample id " + s.id);
    if (!ids.count(s.shape_id)) throw std::runtime_error("manifest: sample " + s.id + " has unknown shape");
    if (!fs::exists(dir / s.image_raw)) throw std::runtime_error("manifest: missing file " + s.image_raw);
    if (!fs::exists(dir / s.image_png)) throw std::runtime_error("manifest: missing file " + s.image_png);
    if (s.split != "train" && s.split != "val" && s.split != "test") {
      throw std::runtime_error("manifest: bad split '" + s.split + "' for " + s.id);
    }
  }
  return m;
}

AugmentDraw draw_augment(const AugmentConfig& config, Rng& rng) {
  AugmentDraw d;
  if (!config.enabled) return d;
  d.flip = coin(rng, config.flip_prob);
  d.crop = coin(rng, config.crop_prob);
  if (d.crop) {
    for (auto& v : d.crop_box) v = uniform(rng, -config.crop_frac, config.crop_frac);
  }
  d.color = coin(rng, config.color_prob);
  if (d.color) {
    for (auto& g : d.gain) g = uniform(rng, config.gain_lo, config.gain_hi);
    for (auto& o : d.offset) o = uniform(rng, -config.brightness, config.brightness);
  }
  d.alpha = deg2rad(uniform(rng, -config.azimuth_range_deg, config.azimuth_range_deg));
  return d;
}

Image crop_resize(const Image& src, double x0, double y0, double x1, double y1) {
  const int h = src.height(), w = src.width();
  Image out(src.channels(), h, w);
  const double sx = (x1 - x0) / w, sy = (y1 - y0) / h;
  for (int y = 0; y < h; ++y) {
    const double fy = std::clamp(y0 + (y + 0.5) * sy - 0.5, 0.0, h - 1.0);
    const int iy = std::min(static_cast<int>(fy), h - 2 < 0 ? 0 : h - 2);
    const double ty = fy - iy;
    const int iy1 = std::min(iy + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const double fx = std::clamp(x0 + (x + 0.5) * sx - 0.5, 0.0, w - 1.0);
      const int ix = std::min(static_cast<int>(fx), w - 2 < 0 ? 0 : w - 2);
      const double tx = fx - ix;
      const int ix1 = std::min(ix + 1, w - 1);
      for (int c = 0; c < src.channels(); ++c) {
        const double top = src.at(c, iy, ix) + (src.at(c, iy, ix1) - src.at(c, iy, ix)) * tx;
        const double bot = src.at(c, iy1, ix) + (src.at(c, iy1, ix1) - src.at(c, iy1, ix)) * tx;
        out.at(c, y, x) = static_cast<float>(top + (bot - top) * ty);
      }
    }
  }
  return out;
}

AugmentedImage apply_image_augment(const Image& image, const EulerPose& pose, const AugmentDraw& d) {
  AugmentedImage out{image, pose};
  if (d.flip) {
    out.image = flip_horizontal(out.image);
    out.pose = EulerPose::make(-pose.azi, pose.ele, -pose.inp);
  }
  if (d.crop) {
    const double w = image.width(), h = image.height();
    out.image = crop_resize(out.image, d.crop_box[0] * w, d.crop_box[1] * h, w + d.crop_box[2] * w,
                            h + d.crop_box[3] * h);
  }
  if (d.color) {
    for (int c = 0; c < std::min(3, out.image.channels()); ++c) {
      for (int y = 0; y < out.image.height(); ++y) {
        for (int x = 0; x < out.image.width(); ++x) {
          float& v = out.image.at(c, y, x);
          v = static_cast<float>(std::clamp(v * d.gain[c] + d.offset[c], 0.0, 1.0));
        }
      }
    }
  }
  out.pose = shift_azimuth(out.pose, d.alpha);
  return out;
}

AugmentedSample augment(const Image& image, const EulerPose& pose, const TriangleMesh& shape,
                        const AugmentConfig& config, Rng& rng) {
  const AugmentDraw d = draw_augment(config, rng);
  AugmentedImage ai = apply_image_augment(image, pose, d);
  AugmentedSample out{std::move(ai.image), ai.pose, d.alpha == 0.0 ? shape : rotate_about_up(shape, -d.alpha), d};
  return out;
}

}  // namespace poseforge
