// poseforge: data generation, rendering, training and evaluation front end.

#include "poseforge/autodiff/tensor.hpp"
#include "poseforge/binio.hpp"
#include "poseforge/config.hpp"
#include "poseforge/datagen.hpp"
#include "poseforge/gradcheck.hpp"
#include "poseforge/plot.hpp"
#include "poseforge/render.hpp"
#include "poseforge/shapecore.hpp"
#include "poseforge/trainloop.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace poseforge;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct CliError : std::runtime_error {
  CliError(int c, const std::string& m) : std::runtime_error(m), code(c) {}
  int code;
};

int fail(int code, const std::string& message) {
  std::cerr << nlohmann::json{{"code", code}, {"message", message}}.dump() << std::endl;
  return code;
}

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "JSON config file layered over the built-in defaults");
    app->add_option("--set", sets, "Override a config entry, e.g. --set training.batch_size=8")->take_all();
  }

  GlobalConfig resolve() const {
    GlobalConfig cfg;
    if (!file.empty()) cfg.merge_file(file);
    for (const auto& s : sets) cfg.set(s);
    return cfg;
  }
};

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CliError(kUsage, "cannot parse number '" + item + "' in list '" + text + "'");
    }
  }
  if (out.empty()) throw CliError(kUsage, "empty list");
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) { binio::write_text(path, j.dump(2) + "\n"); }

Image load_image_any(const fs::path& path) {
  if (path.extension() == ".raw") return load_raw_image(path);
  return load_png(path);
}

// ---- gen-data ----------------------------------------------------------------

struct GenDataArgs {
  ConfigFlags cfg;
  std::string out;
  int shapes = 0;
  int views = -1;
  long long seed = -1;
  std::string split_mode;
};

int run_gen_data(const GenDataArgs& a) {
  GlobalConfig g = a.cfg.resolve();
  if (a.seed >= 0) g.set("seed=" + std::to_string(a.seed));
  if (a.views >= 0) g.set("datagen.views_per_shape=" + std::to_string(a.views));
  if (!a.split_mode.empty()) g.set("datagen.split_mode=\"" + a.split_mode + "\"");
  if (a.shapes < 1) throw CliError(kUsage, "--shapes must be >= 1");
  const DatagenConfig dc = g.datagen();
  const auto families = g.doc().at("datagen").at("families").get<std::vector<std::string>>();
  if (families.empty()) throw ConfigError("config datagen.families is empty");

  // Shapes are dealt round-robin over the configured families; a family may
  // be listed more than once to weight it.
  std::map<std::string, int> per_family;
  for (int i = 0; i < a.shapes; ++i) ++per_family[families[i % families.size()]];
  std::map<std::string, std::vector<TriangleMesh>> meshes;
  for (const auto& [name, count] : per_family) {
    meshes[name] = make_procedural_shapes(count, shape_family_from_string(name), g.seed());
  }
  std::vector<ShapeSpec> specs;
  std::map<std::string, int> taken;
  for (int i = 0; i < a.shapes; ++i) {
    const std::string& fam = families[i % families.size()];
    const int k = taken[fam]++;
    char id[64];
    std::snprintf(id, sizeof id, "%s_%03d", fam.c_str(), k);
    specs.push_back({id, fam, meshes[fam][k]});
  }
  const fs::path out(a.out);
  const DatasetManifest m = generate_dataset(specs, dc, g.seed(), out, g.sha256());
  write_json(out / "config.json", g.doc());
  std::cout << nlohmann::json{{"manifest", (out / "manifest.json").string()},
                              {"shapes", m.shapes.size()},
                              {"samples", m.samples.size()},
                              {"config_sha256", g.sha256()}}
                   .dump()
            << std::endl;
  return kOk;
}

// ---- render-views -------------------------------------------------------------

struct RenderViewsArgs {
  ConfigFlags cfg;
  std::string mesh, out, elevations = "0,30";
  int n_azi = 6;
};

int run_render_views(const RenderViewsArgs& a) {
  const GlobalConfig g = a.cfg.resolve();
  const TriangleMesh mesh = normalize(load_obj(a.mesh));
  ViewLayout layout;
  layout.n_azi = a.n_azi;
  layout.elevations.clear();
  for (double e : parse_list(a.elevations)) layout.elevations.push_back(deg2rad(e));
  RenderConfig rc = g.render();
  rc.size = g.network().view_encoder.image_size;
  const auto cams = place_cameras(layout.n_azi, layout.elevations, rc.distance, deg2rad(rc.fov_deg));
  const ViewSet vs = render_view_set(mesh, layout, rc);
  const fs::path out(a.out);
  fs::create_directories(out);
  nlohmann::json views = nlohmann::json::array();
  for (std::size_t i = 0; i < vs.images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "view_%02zu", i);
    save_png(vs.images[i], out / (std::string(name) + ".png"));
    save_raw_image(vs.images[i], out / (std::string(name) + ".raw"));
    views.push_back({{"index", i},
                     {"azi_deg", rad2deg(cams[i].azimuth)},
                     {"ele_deg", rad2deg(cams[i].elevation)},
                     {"png", std::string(name) + ".png"},
                     {"raw", std::string(name) + ".raw"}});
  }
  save_view_set(vs, out / "views.bin");
  const nlohmann::json summary{{"views", views}, {"n_azi", layout.n_azi}, {"config_sha256", g.sha256()}};
  write_json(out / "views.json", summary);
  std::cout << nlohmann::json{{"images", vs.images.size()}, {"out", out.string()}, {"config_sha256", g.sha256()}}.dump()
            << std::endl;
  return kOk;
}

// ---- sample-points ------------------------------------------------------------

struct SamplePointsArgs {
  ConfigFlags cfg;
  std::string mesh, out;
  long long n = 2500;
  long long seed = 0;
  bool raw_units = false;
};

int run_sample_points(const SamplePointsArgs& a) {
  const GlobalConfig g = a.cfg.resolve();
  if (a.n < 1) throw CliError(kUsage, "--n must be >= 1");
  TriangleMesh mesh = load_obj(a.mesh);
  if (!a.raw_units) mesh = normalize(mesh);
  const PointCloud cloud = sample_surface(mesh, static_cast<std::size_t>(a.n), static_cast<std::uint64_t>(a.seed));
  save_point_cloud(cloud, a.out);
  std::cout << nlohmann::json{{"points", cloud.points.size()},
                              {"out", a.out},
                              {"diameter", diameter(cloud)},
                              {"config_sha256", g.sha256()}}
                   .dump()
            << std::endl;
  return kOk;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  ConfigFlags cfg;
  std::string data, mode, out, resume;
  long long seed = -1;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  GlobalConfig g = a.cfg.resolve();
  if (!a.mode.empty()) g.set("network.shape_mode=\"" + a.mode + "\"");
  if (a.seed >= 0) g.set("seed=" + std::to_string(a.seed));
  const PoseNetworkConfig nc = g.network();
  const TrainConfig tc = g.training();
  const Dataset data = Dataset::load(a.data);
  PoseNetwork<float> net(nc, derive_seed(g.seed(), {0x6e6574}));
  const fs::path out(a.out);
  fs::create_directories(out);
  write_json(out / "config.json", g.doc());
  TrainOptions opt;
  opt.out_dir = out;
  if (!a.resume.empty()) opt.resume = fs::path(a.resume);
  opt.config_sha256 = g.sha256();
  if (!a.quiet) {
    opt.on_epoch = [](const EpochRecord& r) { std::cerr << to_json(r).dump() << std::endl; };
  }
  const TrainResult res = train(tc, data, net, g.render(), opt);
  std::cout << nlohmann::json{{"epochs", res.epochs.size()},
                              {"steps", res.steps},
                              {"checkpoint", (out / "last.ckpt").string()},
                              {"config_sha256", g.sha256()}}
                   .dump()
            << std::endl;
  return kOk;
}

// ---- eval ---------------------------------------------------------------------

struct EvalArgs {
  ConfigFlags cfg;
  std::string ckpt, poses, data, split = "test", report;
};

int run_eval(const EvalArgs& a) {
  const GlobalConfig g = a.cfg.resolve();
  if (a.ckpt.empty() == a.poses.empty()) throw CliError(kUsage, "eval needs exactly one of --ckpt or --poses");
  const Dataset data = Dataset::load(a.data);
  EvalReport report;
  if (!a.ckpt.empty()) {
    PoseNetwork<float> net = PoseNetwork<float>::load(a.ckpt);
    report = evaluate(net, data, a.split, g.render());
  } else {
    report = evaluate_poses(parse_pose_file(nlohmann::json::parse(binio::read_text(a.poses))), data, a.split);
  }
  const nlohmann::json j = report.to_json(g.sha256());
  if (a.report.empty()) {
    std::cout << j.dump(2) << std::endl;
  } else {
    write_json(a.report, j);
    std::cout << j.at("aggregate").dump() << std::endl;
  }
  return kOk;
}

// ---- predict ------------------------------------------------------------------

struct PredictArgs {
  ConfigFlags cfg;
  std::string ckpt, image, mesh;
  long long seed = 0;
};

int run_predict(const PredictArgs& a) {
  const GlobalConfig g = a.cfg.resolve();
  PoseNetwork<float> net = PoseNetwork<float>::load(a.ckpt);
  const PoseNetworkConfig& nc = net.config();
  Image img = load_image_any(a.image);
  if (img.channels() != nc.image_encoder.input_channels) {
    throw std::runtime_error("image has " + std::to_string(img.channels()) + " channels, network expects " +
                             std::to_string(nc.image_encoder.input_channels));
  }
  if (img.height() != nc.image_encoder.image_size || img.width() != nc.image_encoder.image_size) {
    img = resize_bilinear(img, nc.image_encoder.image_size, nc.image_encoder.image_size);
  }
  const TriangleMesh mesh = normalize(load_obj(a.mesh));
  PosePrediction pred;
  if (nc.shape_mode == ShapeMode::point_cloud) {
    pred = net.predict(img, sample_surface(mesh, nc.point_encoder.num_points, static_cast<std::uint64_t>(a.seed)));
  } else {
    RenderConfig rc = g.render();
    rc.size = nc.view_encoder.image_size;
    pred = net.predict(img, render_view_set(mesh, nc.views, rc));
  }
  const EulerPose pose = decode_prediction(pred, nc.binning);
  std::cout << nlohmann::json{{"azi_deg", rad2deg(pose.azi)},
                              {"ele_deg", rad2deg(pose.ele)},
                              {"inp_deg", rad2deg(pose.inp)},
                              {"config_sha256", g.sha256()}}
                   .dump()
            << std::endl;
  return kOk;
}

// ---- gradcheck ----------------------------------------------------------------

int run_gradcheck(long long seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradcheck_suite(static_cast<std::uint64_t>(seed));
  bool ok = true;
  for (const auto& r : results) {
    std::cout << nlohmann::json{{"check", r.name},
                                {"max_rel_error", r.max_rel_error},
                                {"entries", r.checked},
                                {"passed", r.passed}}
                     .dump()
              << "\n";
    ok = ok && r.passed;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << nlohmann::json{{"checks", results.size()}, {"all_passed", ok}, {"seconds", secs}}.dump() << std::endl;
  if (!ok) return fail(kNumerical, "gradient check failed");
  return kOk;
}

// ---- plot ---------------------------------------------------------------------

int run_plot(const std::string& report, const std::string& out) {
  binio::write_text(out, report_svg(nlohmann::json::parse(binio::read_text(report))));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"poseforge: shape-conditioned object pose estimation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen.cfg.attach(gen_cmd);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--shapes", gen.shapes, "Number of procedural shapes")->required();
  gen_cmd->add_option("--views-per-shape", gen.views, "Query images per shape (default 20)");
  gen_cmd->add_option("--seed", gen.seed, "Generation seed");
  gen_cmd->add_option("--split-mode", gen.split_mode, "random | novel-shape")
      ->check(CLI::IsMember({"random", "novel-shape"}));

  RenderViewsArgs rv;
  auto* rv_cmd = app.add_subcommand("render-views", "Render the canonical view set of a mesh");
  rv.cfg.attach(rv_cmd);
  rv_cmd->add_option("--mesh", rv.mesh, "OBJ mesh")->required()->check(CLI::ExistingFile);
  rv_cmd->add_option("--n-azi", rv.n_azi, "Azimuths per elevation")->capture_default_str();
  rv_cmd->add_option("--elevations", rv.elevations, "Comma-separated elevations in degrees")->capture_default_str();
  rv_cmd->add_option("--out", rv.out, "Output directory")->required();

  SamplePointsArgs sp;
  auto* sp_cmd = app.add_subcommand("sample-points", "Sample a point cloud on a mesh surface");
  sp.cfg.attach(sp_cmd);
  sp_cmd->add_option("--mesh", sp.mesh, "OBJ mesh")->required()->check(CLI::ExistingFile);
  sp_cmd->add_option("--n", sp.n, "Number of points")->capture_default_str();
  sp_cmd->add_option("--seed", sp.seed, "Sampling seed")->capture_default_str();
  sp_cmd->add_option("--out", sp.out, "Output point-cloud file")->required();
  sp_cmd->add_flag("--raw-units", sp.raw_units, "Skip normalization to the unit sphere");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "Train a pose network");
  tr.cfg.attach(tr_cmd);
  tr_cmd->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr_cmd->add_option("--mode", tr.mode, "Shape input: pc | mv")->check(CLI::IsMember({"pc", "mv"}));
  tr_cmd->add_option("--out", tr.out, "Output directory")->required();
  tr_cmd->add_option("--resume", tr.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  tr_cmd->add_option("--seed", tr.seed, "Training seed");
  tr_cmd->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or a pose file on a split");
  ev.cfg.attach(ev_cmd);
  ev_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->check(CLI::ExistingFile);
  ev_cmd->add_option("--poses", ev.poses, "Pose file instead of a checkpoint")->check(CLI::ExistingFile);
  ev_cmd->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev_cmd->add_option("--split", ev.split, "train | val | test")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test"}));
  ev_cmd->add_option("--report", ev.report, "Report path (stdout when omitted)");

  PredictArgs pr;
  auto* pr_cmd = app.add_subcommand("predict", "Predict the pose of one image");
  pr.cfg.attach(pr_cmd);
  pr_cmd->add_option("--ckpt", pr.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  pr_cmd->add_option("--image", pr.image, "PNG or .raw image")->required()->check(CLI::ExistingFile);
  pr_cmd->add_option("--mesh", pr.mesh, "OBJ mesh of the object")->required()->check(CLI::ExistingFile);
  pr_cmd->add_option("--seed", pr.seed, "Point sampling seed (point-cloud networks)")->capture_default_str();

  long long gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc_cmd->add_option("--seed", gc_seed, "Seed for the random test tensors")->capture_default_str();

  std::string plot_report, plot_out;
  auto* pl_cmd = app.add_subcommand("plot", "SVG error histogram and accuracy curve of a report");
  pl_cmd->add_option("--report", plot_report, "EvalReport JSON")->required()->check(CLI::ExistingFile);
  pl_cmd->add_option("--out", plot_out, "SVG output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kUsage, e.what());
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*rv_cmd) return run_render_views(rv);
    if (*sp_cmd) return run_sample_points(sp);
    if (*tr_cmd) return run_train(tr);
    if (*ev_cmd) return run_eval(ev);
    if (*pr_cmd) return run_predict(pr);
    if (*gc_cmd) return run_gradcheck(gc_seed);
    if (*pl_cmd) return run_plot(plot_report, plot_out);
  } catch (const CliError& e) {
    return fail(e.code, e.what());
  } catch (const ad::NumericalError& e) {
    return fail(kNumerical, e.what());
  } catch (const std::exception& e) {
    return fail(kData, e.what());
  }
  return fail(kUsage, "no subcommand");
}
