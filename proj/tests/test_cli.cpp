#include "helpers.hpp"

#include "poseforge/binio.hpp"

#include <doctest.h>

#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>

namespace fs = std::filesystem;
using poseforge::binio::read_file;
using poseforge::binio::read_text;
using poseforge::binio::write_text;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

const fs::path& work() {
  static const fs::path dir = testing::scratch_dir("cli");
  return dir;
}

Run run(const std::string& args) {
  const fs::path out = work() / "stdout.txt", err = work() / "stderr.txt";
  const std::string cmd = std::string("\"") + POSEFORGE_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text(out);
  r.err = read_text(err);
  return r;
}

std::string p(const fs::path& path) { return "\"" + path.string() + "\""; }

// Tiny network/data sizes so the whole file runs in seconds.
const fs::path& tiny_config() {
  static const fs::path path = [] {
    const fs::path f = work() / "tiny.json";
    write_text(f, R"({"network": {"image_channels": [4, 8], "point_widths": [8, 16], "num_points": 64,
                                   "head_hidden": [16], "view_channels": [4], "view_size": 16,
                                   "views": {"n_azi": 2, "elevations_deg": [0]}},
                      "render": {"image_size": 16},
                      "datagen": {"num_points": 64, "val_fraction": 0.25, "test_fraction": 0.25},
                      "training": {"batch_size": 4, "schedule": [{"lr": 0.001, "epochs": 2}], "checkpoint_every": 1}})");
    return f;
  }();
  return path;
}

std::map<std::string, std::vector<std::uint8_t>> read_tree(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return files;
}

void check_error_line(const Run& r, int code) {
  CHECK(r.code == code);
  REQUIRE_FALSE(r.err.empty());
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j.at("code") == code);
  CHECK(j.at("message").is_string());
}

}  // namespace

TEST_CASE("help for every subcommand lists its flags") {
  const std::map<std::string, std::vector<std::string>> flags{
      {"gen-data", {"--out", "--shapes", "--views-per-shape", "--seed", "--split-mode", "--config", "--set"}},
      {"render-views", {"--mesh", "--n-azi", "--elevations", "--out", "--config", "--set"}},
      {"sample-points", {"--mesh", "--n", "--seed", "--out", "--config", "--set"}},
      {"train", {"--config", "--data", "--mode", "--out", "--resume", "--seed", "--set"}},
      {"eval", {"--ckpt", "--poses", "--data", "--split", "--report", "--config", "--set"}},
      {"predict", {"--ckpt", "--image", "--mesh", "--config", "--set"}},
      {"gradcheck", {"--seed"}},
      {"plot", {"--report", "--out"}},
  };
  const Run top = run("--help");
  CHECK(top.code == 0);
  for (const auto& [cmd, list] : flags) {
    CAPTURE(cmd);
    CHECK(top.out.find(cmd) != std::string::npos);
    const Run r = run(cmd + " --help");
    CHECK(r.code == 0);
    for (const auto& f : list) {
      CAPTURE(f);
      CHECK(r.out.find(f) != std::string::npos);
    }
  }
}

TEST_CASE("usage and data errors") {
  check_error_line(run(""), 1);
  check_error_line(run("frobnicate"), 1);
  check_error_line(run("gen-data --shapes 2"), 1);
  check_error_line(run("gen-data --out " + p(work() / "x") + " --shapes 2 --split-mode sideways"), 1);
  check_error_line(run("gen-data --out " + p(work() / "x") + " --shapes 2 --set render.fov=3"), 2);
  check_error_line(run("render-views --mesh " + p(work() / "missing.obj") + " --out " + p(work() / "v")), 1);
  write_text(work() / "broken.obj", "v 0 0 0\nf 1 2 3\n");
  check_error_line(run("render-views --mesh " + p(work() / "broken.obj") + " --out " + p(work() / "v")), 2);
}

TEST_CASE("gradcheck passes") {
  const Run r = run("gradcheck --seed 1");
  CHECK(r.code == 0);
  std::istringstream lines(r.out);
  std::string line, last;
  int n = 0;
  while (std::getline(lines, line)) {
    last = line;
    ++n;
  }
  CHECK(n > 20);
  const auto summary = nlohmann::json::parse(last);
  CHECK(summary.at("all_passed") == true);
}

TEST_CASE("render-views and sample-points") {
  write_text(work() / "cube.obj",
             "v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\nv -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1\n"
             "f 1 2 3 4\nf 5 8 7 6\nf 1 5 6 2\nf 2 6 7 3\nf 3 7 8 4\nf 4 8 5 1\n");
  const Run r = run("render-views --mesh " + p(work() / "cube.obj") + " --n-azi 6 --elevations 0,30 --out " +
                    p(work() / "views") + " --set render.image_size=32");
  REQUIRE(r.code == 0);
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(work() / "views")) pngs += e.path().extension() == ".png";
  CHECK(pngs == 12);
  const auto meta = nlohmann::json::parse(read_text(work() / "views" / "views.json"));
  CHECK(meta.at("config_sha256").get<std::string>().size() == 64);

  const Run s = run("sample-points --mesh " + p(work() / "cube.obj") + " --n 500 --seed 3 --out " +
                    p(work() / "a.pts"));
  REQUIRE(s.code == 0);
  run("sample-points --mesh " + p(work() / "cube.obj") + " --n 500 --seed 3 --out " + p(work() / "b.pts"));
  CHECK(read_file(work() / "a.pts") == read_file(work() / "b.pts"));
}

TEST_CASE("pipeline: gen-data, train, eval, predict, plot") {
  const std::string cfg = "--config " + p(tiny_config());
  const Run g1 = run("gen-data " + cfg + " --out " + p(work() / "d1") + " --shapes 4 --views-per-shape 4 --seed 2");
  REQUIRE(g1.code == 0);
  const auto gen = nlohmann::json::parse(g1.out);
  CHECK(gen.at("samples") == 16);
  const std::string sha = gen.at("config_sha256");
  CHECK(nlohmann::json::parse(read_text(work() / "d1" / "manifest.json")).at("config_sha256") == sha);
  REQUIRE(run("gen-data " + cfg + " --out " + p(work() / "d2") + " --shapes 4 --views-per-shape 4 --seed 2").code == 0);
  CHECK(read_tree(work() / "d1") == read_tree(work() / "d2"));

  // Ground-truth pose file for the test split.
  const auto manifest = nlohmann::json::parse(read_text(work() / "d1" / "manifest.json"));
  nlohmann::json poses = nlohmann::json::array();
  for (const auto& s : manifest.at("samples")) {
    poses.push_back({{"sample_id", s.at("id")}, {"azi_deg", s.at("azi_deg")}, {"ele_deg", s.at("ele_deg")},
                     {"inp_deg", s.at("inp_deg")}});
  }
  write_text(work() / "gt.json", poses.dump());
  const Run e = run("eval " + cfg + " --poses " + p(work() / "gt.json") + " --data " + p(work() / "d1") +
                    " --report " + p(work() / "gt_report.json"));
  REQUIRE(e.code == 0);
  const auto report = nlohmann::json::parse(read_text(work() / "gt_report.json"));
  CHECK(report.at("aggregate").at("acc_pi6") == 1.0);
  CHECK(report.at("aggregate").at("mederr_deg").get<double>() < 1e-6);
  CHECK(report.at("config_sha256").get<std::string>().size() == 64);

  const Run plot = run("plot --report " + p(work() / "gt_report.json") + " --out " + p(work() / "gt.svg"));
  REQUIRE(plot.code == 0);
  CHECK(read_text(work() / "gt.svg").rfind("<svg", 0) == 0);

  const std::string train = "train " + cfg + " --data " + p(work() / "d1") + " --mode pc --seed 1 --quiet --out ";
  REQUIRE(run(train + p(work() / "t1")).code == 0);
  REQUIRE(run(train + p(work() / "t2")).code == 0);
  CHECK(read_file(work() / "t1" / "last.ckpt") == read_file(work() / "t2" / "last.ckpt"));
  CHECK(nlohmann::json::parse(read_text(work() / "t1" / "config.json")) == nlohmann::json::parse(read_text(work() / "t2" / "config.json")));
  check_error_line(run("train " + cfg + " --data " + p(work() / "d1") + " --mode pc --quiet --set render.image_size=24 --out " +
                       p(work() / "t3")),
                   2);

  const std::string ev = "eval " + cfg + " --ckpt " + p(work() / "t1" / "last.ckpt") + " --data " + p(work() / "d1");
  REQUIRE(run(ev + " --report " + p(work() / "r1.json")).code == 0);
  REQUIRE(run(ev + " --report " + p(work() / "r2.json")).code == 0);
  CHECK(read_file(work() / "r1.json") == read_file(work() / "r2.json"));
  check_error_line(run(ev + " --poses " + p(work() / "gt.json")), 1);

  const std::string image = manifest.at("samples").at(0).at("image");
  const std::string mesh = manifest.at("shapes").at(0).at("mesh");
  const std::string pred = "predict " + cfg + " --ckpt " + p(work() / "t1" / "last.ckpt") + " --mesh " + p(work() / "d1" / mesh);
  const Run pr = run(pred + " --image " + p(work() / "d1" / image));
  REQUIRE(pr.code == 0);
  const auto pose = nlohmann::json::parse(pr.out);
  for (const char* k : {"azi_deg", "ele_deg", "inp_deg", "config_sha256"}) CHECK(pose.contains(k));

  std::string nan_raw("PFSIMG\0\1", 8);
  const std::uint32_t dims[3] = {3, 16, 16};
  nan_raw.append(reinterpret_cast<const char*>(dims), sizeof dims);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (int i = 0; i < 3 * 16 * 16; ++i) nan_raw.append(reinterpret_cast<const char*>(&nan), sizeof nan);
  std::ofstream(work() / "nan.raw", std::ios::binary) << nan_raw;
  check_error_line(run(pred + " --image " + p(work() / "nan.raw")), 3);
}
