#include "helpers.hpp"

#include "poseforge/binio.hpp"
#include "poseforge/datagen.hpp"

#include <doctest.h>

#include <nlohmann/json.hpp>

#include <set>

using namespace poseforge;
namespace fs = std::filesystem;

namespace {

const std::vector<ShapeFamily> kFamilies{ShapeFamily::cuboid, ShapeFamily::l_shape, ShapeFamily::cylinder,
                                         ShapeFamily::composite};

// Independent brute-force symmetry check over whole-degree turns about +Y.
bool brute_up_symmetry(const TriangleMesh& m, double tol) {
  for (int deg = 1; deg < 360; ++deg) {
    const double c = std::cos(deg2rad(deg)), s = std::sin(deg2rad(deg));
    bool all = true;
    for (const Vec3& v : m.vertices) {
      const Vec3 w(c * v.x() + s * v.z(), v.y(), -s * v.x() + c * v.z());
      bool hit = false;
      for (const Vec3& u : m.vertices) hit = hit || (u - w).norm() <= tol;
      if (!hit) {
        all = false;
        break;
      }
    }
    if (all) return true;
  }
  return false;
}

DatagenConfig small_config() {
  DatagenConfig c;
  c.render.size = 32;
  c.view_size = 16;
  c.views = ViewLayout{2, {0.0}};
  c.num_points = 64;
  return c;
}

std::vector<ShapeSpec> specs(int n, std::uint64_t seed) {
  std::vector<ShapeSpec> out;
  for (int i = 0; i < n; ++i) {
    const ShapeFamily f = kFamilies[i % kFamilies.size()];
    out.push_back({to_string(f) + "_" + std::to_string(i), to_string(f),
                   make_procedural_shapes(i / 4 + 1, f, seed).back()});
  }
  return out;
}

std::map<std::string, std::vector<std::uint8_t>> read_tree(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = binio::read_file(e.path());
  }
  return files;
}

}  // namespace

TEST_CASE("procedural shapes") {
  const auto cub = make_procedural_shapes(1, ShapeFamily::cuboid, 3);
  REQUIRE(cub.size() == 1);
  CHECK(cub[0].faces.size() == 24);

  for (ShapeFamily f : kFamilies) {
    const auto a = make_procedural_shapes(4, f, 11), b = make_procedural_shapes(4, f, 11);
    const auto c = make_procedural_shapes(4, f, 12);
    for (int i = 0; i < 4; ++i) {
      CAPTURE(to_string(f));
      CHECK(a[i].vertices == b[i].vertices);
      CHECK(a[i].faces == b[i].faces);
      CHECK(a[i].vertices != c[i].vertices);
      CHECK(std::abs(max_vertex_norm(a[i]) - 1.0) < 1e-9);
      CHECK_FALSE(brute_up_symmetry(a[i], 1e-6));
      CHECK_FALSE(has_up_axis_symmetry(a[i]));
      CHECK_FALSE(is_chiral(a[i]));
    }
  }
  CHECK_THROWS(make_procedural_shapes(0, ShapeFamily::cuboid, 1));
  CHECK(shape_family_from_string("cylinder-approx") == ShapeFamily::cylinder);
  CHECK_THROWS(shape_family_from_string("sphere"));
}

TEST_CASE("symmetry helpers on reference shapes") {
  const TriangleMesh box = make_reference_box(0.5, 0.3, 0.7);
  CHECK(has_up_axis_symmetry(box));
  CHECK(brute_up_symmetry(box, 1e-6));
  CHECK_FALSE(is_chiral(box));
  TriangleMesh skew = make_procedural_shapes(1, ShapeFamily::cuboid, 1)[0];
  skew.vertices[0].x() += 0.05;
  CHECK(is_chiral(skew));
}

TEST_CASE("backgrounds") {
  Rng rng(1);
  Image black(3, 16, 16, 0.5f);
  paint_background(black, "black", rng);
  for (float v : black.data()) CHECK(v == 0.0f);

  RenderConfig rc;
  rc.size = 16;
  const Image empty = render_view(TriangleMesh{}, rc.camera(0.2, 0.1), 0.0, rc);
  for (float v : empty.data()) CHECK(v == 0.0f);

  for (const char* mode : {"solid", "gradient", "noise", "mixed"}) {
    Image img(3, 16, 16);
    paint_background(img, mode, rng);
    for (float v : img.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  Image img(3, 8, 8);
  CHECK_THROWS(paint_background(img, "plaid", rng));
}

TEST_CASE("generate_dataset writes a complete, deterministic dataset") {
  const auto dir = testing::scratch_dir("gen");
  DatagenConfig cfg = small_config();
  cfg.views_per_shape = 20;
  const auto shapes = specs(10, 4);
  const DatasetManifest m = generate_dataset(shapes, cfg, 77, dir / "a", "abc");
  CHECK(m.samples.size() == 200);
  CHECK(m.shapes.size() == 10);
  CHECK(m.seed == 77);
  CHECK(m.config_sha256 == "abc");

  std::set<std::string> ids;
  for (const auto& s : m.samples) {
    CHECK(s.pose.valid());
    CHECK(rad2deg(s.pose.ele) >= 0.0);
    CHECK(rad2deg(s.pose.ele) <= 60.0);
    CHECK(std::abs(rad2deg(s.pose.inp)) <= 15.0);
    CHECK(fs::exists(dir / "a" / s.image_png));
    CHECK(fs::exists(dir / "a" / s.image_raw));
    CHECK_NOTHROW(m.shape(s.shape_id));
    ids.insert(s.id);
  }
  CHECK(ids.size() == 200);
  for (const auto& r : m.shapes) {
    CHECK(r.diameter > 0.0);
    CHECK_FALSE(r.chiral);
    CHECK_FALSE(r.symmetric);
    CHECK(load_point_cloud(dir / "a" / r.points_path).points.size() == 64);
    CHECK(load_view_set(dir / "a" / r.views_path).images.size() == 2);
  }

  const Image first = load_raw_image(dir / "a" / m.samples[0].image_raw);
  CHECK(first.height() == 32);

  SUBCASE("same seed gives byte-identical output") {
    generate_dataset(shapes, cfg, 77, dir / "b", "abc");
    CHECK(read_tree(dir / "a") == read_tree(dir / "b"));
  }

  SUBCASE("manifest JSON carries degrees and the config hash") {
    const auto j = nlohmann::json::parse(binio::read_text(dir / "a" / "manifest.json"));
    CHECK(j.at("config_sha256") == "abc");
    CHECK(j.at("seed") == 77);
    const auto& s0 = j.at("samples").at(0);
    CHECK(s0.at("azi_deg").get<double>() == doctest::Approx(rad2deg(m.samples[0].pose.azi)));
    const DatasetManifest back = load_manifest(dir / "a");
    REQUIRE(back.samples.size() == m.samples.size());
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
      CHECK(back.samples[i].pose.azi == doctest::Approx(m.samples[i].pose.azi).epsilon(1e-12));
      CHECK(back.samples[i].pose.ele == doctest::Approx(m.samples[i].pose.ele).epsilon(1e-12));
      CHECK(back.samples[i].pose.inp == doctest::Approx(m.samples[i].pose.inp).epsilon(1e-12));
    }
  }

  SUBCASE("stale or incomplete manifests are rejected") {
    DatagenConfig other = cfg;
    other.views_per_shape = 3;
    CHECK_THROWS(load_manifest(dir / "a", other));
    CHECK_NOTHROW(load_manifest(dir / "a", cfg));

    auto j = nlohmann::json::parse(binio::read_text(dir / "a" / "manifest.json"));
    j["datagen"]["views_per_shape"] = 21;
    binio::write_text(dir / "a" / "manifest.json", j.dump());
    CHECK_THROWS(load_manifest(dir / "a"));

    generate_dataset(shapes, cfg, 77, dir / "c", "abc");
    fs::remove(dir / "c" / m.samples[5].image_png);
    CHECK_THROWS(load_manifest(dir / "c"));
  }

  CHECK_THROWS(generate_dataset({}, cfg, 1, dir / "d", "x"));
}

TEST_CASE("splits") {
  const auto dir = testing::scratch_dir("splits");
  DatagenConfig cfg = small_config();
  cfg.views_per_shape = 5;

  SUBCASE("random mode is disjoint and covers every sample") {
    const DatasetManifest m = generate_dataset(specs(8, 2), cfg, 3, dir / "r", "x");
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const char* s : {"train", "val", "test"}) {
      for (const auto* r : m.split(s)) {
        CHECK(seen.insert(r->id).second);
        ++total;
      }
    }
    CHECK(total == m.samples.size());
    CHECK(m.split("train").size() > m.split("test").size());
  }

  SUBCASE("novel-shape mode keeps each shape in one split and holds out families") {
    cfg.split_mode = SplitMode::novel_shape;
    cfg.val_fraction = 0.25;
    const DatasetManifest m = generate_dataset(specs(12, 5), cfg, 3, dir / "n", "x");
    std::map<std::string, std::set<std::string>> splits_of_shape;
    for (const auto& s : m.samples) splits_of_shape[s.shape_id].insert(s.split);
    for (const auto& [shape, splits] : splits_of_shape) {
      CHECK(splits.size() == 1);
      const bool heldout = m.shape(shape).family == "l_shape";
      CHECK((*splits.begin() == "test") == heldout);
    }
    CHECK_FALSE(m.split("val").empty());
  }
}

TEST_CASE("augment") {
  const TriangleMesh shape = make_procedural_shapes(1, ShapeFamily::composite, 8)[0];
  RenderConfig rc;
  rc.size = 48;
  const EulerPose pose = EulerPose::from_degrees(30, 20, 5);
  const Image img = render_view(shape, rc.camera(pose.azi, pose.ele), pose.inp, rc);

  SUBCASE("nothing drawn leaves the sample unchanged") {
    const AugmentedImage out = apply_image_augment(img, pose, AugmentDraw{});
    CHECK(out.image == img);
    CHECK(out.pose.azi == pose.azi);
    CHECK(out.pose.ele == pose.ele);
    CHECK(out.pose.inp == pose.inp);

    AugmentConfig off;
    off.enabled = false;
    Rng rng(1);
    const AugmentedSample s = augment(img, pose, shape, off, rng);
    CHECK(s.image == img);
    CHECK(s.shape.vertices == shape.vertices);
  }

  SUBCASE("alpha 45 remaps azimuth 30 to -15") {
    AugmentDraw d;
    d.alpha = deg2rad(45);
    CHECK(rad2deg(apply_image_augment(img, pose, d).pose.azi) == doctest::Approx(-15));
  }

  SUBCASE("flip is an involution") {
    AugmentDraw d;
    d.flip = true;
    const AugmentedImage once = apply_image_augment(img, pose, d);
    const AugmentedImage twice = apply_image_augment(once.image, once.pose, d);
    CHECK(twice.image == img);
    CHECK(twice.pose.azi == doctest::Approx(pose.azi));
    CHECK(twice.pose.inp == doctest::Approx(pose.inp));
    CHECK(rad2deg(once.pose.azi) == doctest::Approx(-30));
    CHECK(rad2deg(once.pose.inp) == doctest::Approx(-5));
  }

  SUBCASE("flip remap is exact for mirror-symmetric shapes") {
    // Per-face shading depends on how quads are split, which is not mirrored.
    rc.ambient = 1.0f;
    for (const TriangleMesh& m : {make_reference_box(0.6, 0.4, 0.3), shape}) {
      const Image flipped = flip_horizontal(render_view(m, rc.camera(pose.azi, pose.ele), pose.inp, rc));
      const Image direct = render_view(m, rc.camera(-pose.azi, pose.ele), -pose.inp, rc);
      for (int c = 0; c < 3; ++c) CHECK(mean_abs_diff(flipped, direct, c) < 1e-3);
    }
  }

  SUBCASE("the remapped label describes the turned shape") {
    Rng rng(9);
    AugmentConfig cfg;
    cfg.flip_prob = cfg.crop_prob = cfg.color_prob = 0.0;
    for (int t = 0; t < 10; ++t) {
      const AugmentedSample s = augment(img, pose, shape, cfg, rng);
      CHECK(std::abs(rad2deg(s.draw.alpha)) <= 45.0);
      for (double beta : {0.0, 1.0, -2.0}) {
        const Image a = render_view(s.shape, rc.camera(s.pose.azi + beta, s.pose.ele), s.pose.inp, rc);
        const Image b = render_view(shape, rc.camera(pose.azi + beta, pose.ele), pose.inp, rc);
        for (int c = 0; c < 3; ++c) CHECK(mean_abs_diff(a, b, c) < 1e-3);
      }
    }
  }

  SUBCASE("augmented labels stay encodable") {
    Rng rng(10);
    const AngleBinning bins;
    const AugmentConfig cfg;
    int flips = 0, crops = 0, colors = 0;
    for (int t = 0; t < 200; ++t) {
      const EulerPose p = EulerPose::make(uniform(rng, -kPi, kPi), uniform(rng, 0, 1), uniform(rng, -0.3, 0.3));
      const AugmentedSample s = augment(img, p, shape, cfg, rng);
      flips += s.draw.flip;
      crops += s.draw.crop;
      colors += s.draw.color;
      CHECK(s.pose.valid());
      const BinnedPose b = encode_bins(s.pose, bins);
      for (int k = 0; k < 3; ++k) {
        CHECK(b.label[k] >= 0);
        CHECK(b.label[k] < bins.bins(static_cast<Angle>(k)));
        CHECK(std::abs(b.offset[k]) <= 1.0);
      }
      for (float v : s.image.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }
    CHECK(flips > 60);
    CHECK(flips < 140);
    CHECK(crops > 60);
    CHECK(colors > 60);
  }
}

TEST_CASE("view set files") {
  const auto dir = testing::scratch_dir("viewset");
  RenderConfig rc;
  rc.size = 16;
  const ViewSet vs = render_view_set(make_procedural_shapes(1, ShapeFamily::cylinder, 2)[0], ViewLayout{3, {0.0, 0.5}}, rc);
  save_view_set(vs, dir / "v.bin");
  const ViewSet back = load_view_set(dir / "v.bin");
  CHECK(back.layout.n_azi == 3);
  CHECK(back.layout.elevations == vs.layout.elevations);
  REQUIRE(back.images.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(back.images[i] == vs.images[i]);
}
