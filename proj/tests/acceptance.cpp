// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include "poseforge/binio.hpp"
#include "poseforge/config.hpp"
#include "poseforge/gradcheck.hpp"
#include "poseforge/metrics.hpp"
#include "poseforge/trainloop.hpp"

#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

using namespace poseforge;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = POSEFORGE_SOURCE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "poseforge_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Runs the CLI, returning stdout; throws on a nonzero exit.
std::string cli(const std::string& args) {
  const fs::path out = work_dir() / "cli_stdout.txt";
  const std::string cmd = std::string("\"") + POSEFORGE_CLI + "\" " + args + " >" + q(out);
  const int status = std::system(cmd.c_str());
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) throw std::runtime_error("command failed: poseforge " + args);
  return binio::read_text(out);
}

std::map<std::string, std::vector<std::uint8_t>> read_tree(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = binio::read_file(e.path());
  }
  return files;
}

Mat3 rodrigues(const Vec3& axis, double phi) {
  Mat3 k;
  k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  return Mat3::Identity() + std::sin(phi) * k + (1.0 - std::cos(phi)) * k * k;
}

Vec3 random_axis(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

EulerPose random_pose(Rng& rng) {
  return EulerPose::make(uniform(rng, -kPi, kPi), uniform(rng, -kPi / 2 + 1e-3, kPi / 2 - 1e-3),
                         uniform(rng, -kPi, kPi));
}

double angle_gap(double a, double b) { return std::abs(wrap_angle(a - b)); }

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradcheck_suite(1);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  bool all = !results.empty();
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    all = all && r.passed;
  }
  return {all && worst < 1e-4 && secs < 60.0, std::to_string(results.size()) + " checks, max rel err " +
                                                  fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome rotation_oracle() {
  Rng rng(2);
  double geo = 0.0, euler = 0.0, bins = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double phi = uniform(rng, 0.0, kPi);
    geo = std::max(geo, std::abs(geodesic_distance(Mat3::Identity(), rodrigues(random_axis(rng), phi)) - phi));
  }
  const AngleBinning b;
  for (int i = 0; i < 10000; ++i) {
    const EulerPose p = random_pose(rng);
    const EulerPose r = matrix_to_euler(euler_to_matrix(p));
    euler = std::max({euler, angle_gap(r.azi, p.azi), std::abs(r.ele - p.ele), angle_gap(r.inp, p.inp)});
    const EulerPose d = decode_bins(encode_bins(p, b), b);
    bins = std::max({bins, std::abs(d.azi - p.azi), std::abs(d.ele - p.ele), std::abs(d.inp - p.inp)});
  }
  return {geo < 1e-9 && euler < 1e-9 && bins < 1e-12, "geodesic " + fmt("%.1e", geo) + ", euler " + fmt("%.1e", euler) +
                                                          ", bins " + fmt("%.1e", bins)};
}

Outcome render_equivariance() {
  Rng rng(3);
  RenderConfig cfg;
  cfg.size = 64;
  std::vector<TriangleMesh> shapes;
  for (ShapeFamily f : {ShapeFamily::cuboid, ShapeFamily::l_shape, ShapeFamily::cylinder, ShapeFamily::composite}) {
    shapes.push_back(make_procedural_shapes(1, f, 17)[0]);
  }
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const TriangleMesh& m = shapes[t % shapes.size()];
    const double a = uniform(rng, -kPi, kPi), alpha = uniform(rng, -kPi, kPi), ele = uniform(rng, 0.0, 1.2);
    const Image lhs = render_view(rotate_about_up(m, alpha), cfg.camera(a, ele), 0.0, cfg);
    const Image rhs = render_view(m, cfg.camera(a - alpha, ele), 0.0, cfg);
    // Same picture, same label: shift_azimuth maps the rotated-shape label back.
    const EulerPose label = shift_azimuth(EulerPose::make(wrap_angle(a), ele, 0.0), alpha);
    if (angle_gap(label.azi, a - alpha) > 1e-12) return {false, "shift_azimuth label disagrees with the renderer"};
    for (int c = 0; c < 3; ++c) worst = std::max(worst, mean_abs_diff(lhs, rhs, c));
  }
  return {worst < 1e-3, "20 triples, worst per-channel mean abs diff " + fmt("%.2e", worst)};
}

Outcome loss_anatomy() {
  const AngleBinning b;
  const EulerPose centre = EulerPose::make(b.bin_center(Angle::azi, 5), b.bin_center(Angle::ele, 7),
                                           b.bin_center(Angle::inp, 11));
  const BinnedPose t = encode_bins(centre, b);
  ad::Graph<double> g(true);
  const ad::Var head = g.input(ad::Tensor<double>(ad::Shape{1, 120}, 0.0), true);
  const ad::Var loss = pose_loss(g, head, {t}, b);
  g.backward(loss);
  const double value = g.value(loss).item();
  const double expect = std::log(24.0) + std::log(12.0) + std::log(24.0);
  int nonzero = 0;
  const auto grad = g.grad(head);
  int start = 0;
  for (int a = 0; a < 3; ++a) {
    const int n = b.bins(static_cast<Angle>(a));
    for (int k = 0; k < n; ++k) {
      if (k != t.label[a] && grad.vec()[60 + start + k] != 0.0) ++nonzero;
    }
    start += n;
  }
  return {std::abs(value - expect) < 1e-6 && nonzero == 0,
          "loss " + fmt("%.6f", value) + " vs " + fmt("%.6f", expect) + ", nonzero non-gt offset grads " +
              std::to_string(nonzero)};
}

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path cfg = kSource / "configs" / "overfit.json";
  const fs::path data = work_dir() / "overfit_data", run = work_dir() / "overfit_run";
  cli("gen-data --config " + q(cfg) + " --out " + q(data) + " --shapes 4 --views-per-shape 8 --seed 5");
  cli("train --config " + q(cfg) + " --data " + q(data) + " --mode pc --seed 0 --quiet --out " + q(run));
  const auto rep = nlohmann::json::parse(
      cli("eval --config " + q(cfg) + " --ckpt " + q(run / "last.ckpt") + " --data " + q(data) + " --split train"));
  const auto& agg = rep.at("aggregate");
  const double acc = agg.at("acc_pi6"), med = agg.at("mederr_deg");
  const int n = agg.at("n");
  const double secs = seconds_since(t0);
  return {n == 32 && acc == 1.0 && med < 10.0 && secs < 600.0,
          std::to_string(n) + " samples, 500 steps: train acc " + fmt("%.3f", acc) + ", MedErr " + fmt("%.2f", med) +
              " deg, " + fmt("%.0f", secs) + " s"};
}

Outcome generalization() {
  const auto t0 = std::chrono::steady_clock::now();
  // Probability that a uniformly random rotation lies within theta of a fixed
  // one: (theta - sin theta) / pi.
  const double theta = kPi / 6;
  const double chance = (theta - std::sin(theta)) / kPi;
  const fs::path cfg = kSource / "configs" / "novel_shape.json";
  int hits = 0, total = 0;
  std::string per_seed;
  for (int seed : {8, 9, 10}) {
    const fs::path data = work_dir() / ("novel_data_" + std::to_string(seed));
    const fs::path run = work_dir() / ("novel_run_" + std::to_string(seed));
    cli("gen-data --config " + q(cfg) + " --out " + q(data) + " --shapes 12 --views-per-shape 20 --seed " +
        std::to_string(seed));
    const DatasetManifest m = load_manifest(data);
    if (m.split("train").size() != 160 || m.split("test").size() != 80) return {false, "unexpected split sizes"};
    for (const auto* s : m.split("train")) {
      if (m.shape(s->shape_id).family != "cuboid") return {false, "non-cuboid shape in the training split"};
    }
    for (const auto* s : m.split("test")) {
      if (m.shape(s->shape_id).family != "l_shape") return {false, "non-l_shape shape in the test split"};
    }
    cli("train --config " + q(cfg) + " --data " + q(data) + " --seed 0 --quiet --out " + q(run));
    const auto rep = nlohmann::json::parse(cli("eval --config " + q(cfg) + " --ckpt " + q(run / "last.ckpt") +
                                               " --data " + q(data) + " --split test"));
    const double acc = rep.at("aggregate").at("acc_pi6");
    const int n = rep.at("aggregate").at("n");
    hits += static_cast<int>(std::lround(acc * n));
    total += n;
    per_seed += (per_seed.empty() ? "" : ", ") + fmt("%.4f", acc);
  }
  const double pooled = static_cast<double>(hits) / total;
  const double secs = seconds_since(t0);
  return {pooled >= 10.0 * chance && secs < 1800.0,
          "held-out acc " + fmt("%.4f", pooled) + " over " + std::to_string(total) + " samples (seeds 8, 9, 10: " +
              per_seed + "), bar 10 x chance = " + fmt("%.4f", 10.0 * chance) + ", " + fmt("%.0f", secs) + " s"};
}

Outcome metric_oracles() {
  Rng rng(7);
  PointCloud pc;
  for (int i = 0; i < 200; ++i) pc.points.emplace_back(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
  bool ok = true;
  for (int t = 0; t < 100; ++t) {
    const Mat3 r = rodrigues(random_axis(rng), uniform(rng, 0, kPi));
    const Vec3 base(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    const Vec3 moved = base + Vec3(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
    const Vec3 v = moved - base;
    ok = ok && metrics::add({{r, moved}, {r, base}}, pc) == v.norm();
  }
  const bool translation_ok = ok;

  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    PointCloud small;
    for (int i = 0; i < 12; ++i) small.points.emplace_back(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    const metrics::PosePair p{{rodrigues(random_axis(rng), uniform(rng, 0, kPi)), Vec3(uniform(rng, -1, 1), 0, 0)},
                              {rodrigues(random_axis(rng), uniform(rng, 0, kPi)), Vec3(0, uniform(rng, -1, 1), 0)}};
    violations += metrics::add_s(p, small) > metrics::add(p, small);
  }

  PointCloud ring;
  for (int k = 0; k < 12; ++k) ring.points.emplace_back(std::cos(k * kPi / 6), 0.0, std::sin(k * kPi / 6));
  const metrics::PosePair step{{rodrigues(Vec3::UnitY(), kPi / 6), Vec3::Zero()}, {Mat3::Identity(), Vec3::Zero()}};
  const double ring_s = metrics::add_s(step, ring), ring_a = metrics::add(step, ring);

  std::vector<metrics::PosePair> injected;
  for (double d : {10.0, 20.0, 40.0, 50.0}) {
    const Mat3 gt = rodrigues(random_axis(rng), uniform(rng, 0, kPi));
    injected.push_back({{gt * rodrigues(random_axis(rng), deg2rad(d)), {}}, {gt, {}}});
  }
  const double acc = metrics::acc_pi_6(injected), med = metrics::med_err(injected);
  const bool pass = translation_ok && violations == 0 && ring_s <= 1e-9 && ring_a > 0.0 && acc == 0.5 &&
                    std::abs(med - 30.0) < 1e-9;
  return {pass, std::string("translation ") + (translation_ok ? "exact" : "inexact") + ", add_s > add in " +
                    std::to_string(violations) + "/1000, ring add_s " + fmt("%.1e", ring_s) + " add " +
                    fmt("%.3f", ring_a) + ", injected acc " + fmt("%.2f", acc) + " median " + fmt("%.6f", med)};
}

std::vector<std::string> log_lines_without_wall(const fs::path& path) {
  std::vector<std::string> out;
  std::istringstream in(binio::read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("wall_ms");
    out.push_back(j.dump());
  }
  return out;
}

Outcome determinism() {
  const fs::path cfg = work_dir() / "determinism.json";
  binio::write_text(cfg, R"({"render": {"image_size": 16},
    "network": {"image_channels": [8, 16], "point_widths": [16, 32], "num_points": 64, "view_channels": [8],
                "view_size": 16, "views": {"n_azi": 3, "elevations_deg": [0]}, "head_hidden": [32]},
    "datagen": {"num_points": 64, "val_fraction": 0.2, "test_fraction": 0.2},
    "training": {"batch_size": 8, "schedule": [{"lr": 1e-3, "epochs": 3}], "checkpoint_every": 1}})");
  std::vector<std::string> diffs;
  for (const char* mode : {"pc", "mv"}) {
    for (int i : {1, 2}) {
      const std::string tag = std::string(mode) + std::to_string(i);
      const fs::path data = work_dir() / ("det_data_" + tag), run = work_dir() / ("det_run_" + tag);
      cli("gen-data --config " + q(cfg) + " --out " + q(data) + " --shapes 6 --views-per-shape 5 --seed 11");
      cli("train --config " + q(cfg) + " --data " + q(data) + " --mode " + mode + " --seed 3 --quiet --out " + q(run));
      cli("eval --config " + q(cfg) + " --ckpt " + q(run / "last.ckpt") + " --data " + q(data) + " --report " +
          q(run / "report.json"));
    }
    const std::string a = std::string(mode) + "1", b = std::string(mode) + "2";
    if (read_tree(work_dir() / ("det_data_" + a)) != read_tree(work_dir() / ("det_data_" + b))) {
      diffs.push_back(std::string(mode) + " gen-data");
    }
    auto run_files = [&](const std::string& tag) {
      auto files = read_tree(work_dir() / ("det_run_" + tag));
      files.erase("train_log.jsonl");
      return files;
    };
    if (run_files(a) != run_files(b)) diffs.push_back(std::string(mode) + " train/eval files");
    if (log_lines_without_wall(work_dir() / ("det_run_" + a) / "train_log.jsonl") !=
        log_lines_without_wall(work_dir() / ("det_run_" + b) / "train_log.jsonl")) {
      diffs.push_back(std::string(mode) + " train log");
    }
  }
  std::string detail = "gen-data trees, checkpoints, eval reports and train logs (wall_ms excluded) compared in both modes";
  for (const auto& d : diffs) detail += "; differs: " + d;
  return {diffs.empty(), detail};
}

Outcome config_fidelity() {
  const auto golden = nlohmann::json::parse(binio::read_text(kSource / "tests" / "golden" / "config_defaults.json"));
  const GlobalConfig cfg;
  const TrainConfig t = cfg.training();
  const PoseNetworkConfig n = cfg.network();
  const DatagenConfig d = cfg.datagen();
  const auto& loss = cfg.doc().at("training").at("loss");
  std::vector<std::string> bad;
  if (cfg.doc() != golden) bad.push_back("golden dump");
  if (t.batch_size != 16) bad.push_back("batch");
  if (n.head_hidden != std::vector<int>{800, 400, 200}) bad.push_back("head");
  if (n.head_output_dim() != 2 * n.binning.total_bins() || n.head_output_dim() != 120) bad.push_back("output dim");
  if (loss.at("classification") != "cross_entropy" || loss.at("regression") != "huber") bad.push_back("loss");
  if (d.views_per_shape != 20) bad.push_back("views per shape");
  if (t.augment.azimuth_range_deg != 45.0) bad.push_back("azimuth range");
  if (n.views.n_azi != 6 || n.views.elevations.size() != 2 || n.views.elevations[0] != 0.0 ||
      std::abs(rad2deg(n.views.elevations[1]) - 30.0) > 1e-12) {
    bad.push_back("6x2 views");
  }
  std::string detail = "defaults match golden dump and published values";
  if (!bad.empty()) {
    detail = "mismatch:";
    for (const auto& b : bad) detail += " " + b;
  }
  return {bad.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"rotation oracle", rotation_oracle},
      {"render equivariance", render_equivariance},
      {"loss anatomy", loss_anatomy},
      {"overfit oracle", overfit},
      {"novel-shape generalization", generalization},
      {"metric oracles", metric_oracles},
      {"determinism", determinism},
      {"config fidelity", config_fidelity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
