#include "poseforge/config.hpp"

#include "poseforge/binio.hpp"
#include "poseforge/trainloop.hpp"

#include <openssl/evp.h>

#include <cstdio>

namespace poseforge {

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

nlohmann::json GlobalConfig::defaults() {
  return nlohmann::json::parse(R"({
    "seed": 0,
    "render": {
      "image_size": 64,
      "distance": 2.5,
      "fov_deg": 50.0,
      "ambient": 0.2,
      "albedo": [0.85, 0.85, 0.85],
      "background": [0.0, 0.0, 0.0],
      "depth_channel": false,
      "normal_channel": false
    },
    "binning": {"azi": 24, "ele": 12, "inp": 24},
    "network": {
      "shape_mode": "mv",
      "image_channels": [16, 32, 64, 128],
      "point_widths": [64, 128, 256],
      "num_points": 2500,
      "view_channels": [16, 32, 64, 128],
      "view_size": 64,
      "views": {"n_azi": 6, "elevations_deg": [0.0, 30.0]},
      "head_hidden": [800, 400, 200]
    },
    "training": {
      "batch_size": 16,
      "schedule": [{"lr": 1e-4, "epochs": 100}, {"lr": 1e-5, "epochs": 100}],
      "checkpoint_every": 10,
      "max_steps": 0,
      "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
      "loss": {"classification": "cross_entropy", "regression": "huber", "huber_delta": 1.0},
      "augment": {
        "enabled": true,
        "flip_prob": 0.5,
        "crop_prob": 0.5,
        "crop_frac": 0.1,
        "color_prob": 0.5,
        "gain_range": [0.8, 1.2],
        "brightness": 0.1,
        "azimuth_range_deg": 45.0
      }
    },
    "datagen": {
      "views_per_shape": 20,
      "azi_range_deg": [-180.0, 180.0],
      "ele_range_deg": [0.0, 60.0],
      "inp_range_deg": [-15.0, 15.0],
      "background": "mixed",
      "num_points": 2500,
      "families": ["cuboid", "l_shape", "cylinder", "composite"],
      "split_mode": "random",
      "val_fraction": 0.1,
      "test_fraction": 0.1,
      "heldout_families": ["l_shape"]
    }
  })");
}

GlobalConfig::GlobalConfig() : doc_(defaults()) {}

namespace {

bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

void merge_into(nlohmann::json& base, const nlohmann::json& overlay, const std::string& path,
                const std::string& origin) {
  if (!overlay.is_object()) throw ConfigError(origin + ": '" + path + "' must be an object");
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(origin + ": unknown config key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_into(slot, it.value(), key, origin);
    } else if (!same_kind(slot, it.value())) {
      throw ConfigError(origin + ": '" + key + "' expects " + slot.type_name() + ", got " + it.value().type_name());
    } else {
      slot = it.value();
    }
  }
}

template <class T>
T get(const nlohmann::json& j, const char* key, const char* section) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config ") + section + "." + key + ": " + e.what());
  }
}

}  // namespace

void GlobalConfig::merge(const nlohmann::json& overlay, const std::string& origin) {
  nlohmann::json next = doc_;
  merge_into(next, overlay, "", origin);
  doc_ = std::move(next);
}

void GlobalConfig::merge_file(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(binio::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  merge(j, path.string());
}

void GlobalConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json overlay = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = nlohmann::json{{*it, overlay}};
  merge(overlay, "--set " + key);
}

std::uint64_t GlobalConfig::seed() const { return get<std::uint64_t>(doc_, "seed", "root"); }

RenderConfig GlobalConfig::render() const {
  const auto& r = doc_.at("render");
  RenderConfig c;
  c.size = get<int>(r, "image_size", "render");
  c.distance = get<double>(r, "distance", "render");
  c.fov_deg = get<double>(r, "fov_deg", "render");
  c.ambient = get<float>(r, "ambient", "render");
  const auto albedo = get<std::vector<float>>(r, "albedo", "render");
  const auto bg = get<std::vector<float>>(r, "background", "render");
  if (albedo.size() != 3 || bg.size() != 3) throw ConfigError("config render: albedo and background need 3 values");
  std::copy(albedo.begin(), albedo.end(), c.albedo.begin());
  std::copy(bg.begin(), bg.end(), c.background.begin());
  c.depth_channel = get<bool>(r, "depth_channel", "render");
  c.normal_channel = get<bool>(r, "normal_channel", "render");
  if (c.size < 8) throw ConfigError("config render.image_size must be >= 8");
  if (!(c.distance > 1.0)) throw ConfigError("config render.distance must exceed 1");
  if (!(c.fov_deg > 0.0 && c.fov_deg < 180.0)) throw ConfigError("config render.fov_deg must be in (0, 180)");
  return c;
}

PoseNetworkConfig GlobalConfig::network() const {
  const auto& n = doc_.at("network");
  const auto& b = doc_.at("binning");
  const RenderConfig rc = render();
  PoseNetworkConfig c;
  try {
    c.shape_mode = shape_mode_from_string(get<std::string>(n, "shape_mode", "network"));
    c.image_encoder.input_channels = rc.channels();
    c.image_encoder.image_size = rc.size;
    c.image_encoder.channels = get<std::vector<int>>(n, "image_channels", "network");
    c.point_encoder.widths = get<std::vector<int>>(n, "point_widths", "network");
    c.point_encoder.num_points = get<int>(n, "num_points", "network");
    c.view_encoder.input_channels = rc.channels();
    c.view_encoder.image_size = get<int>(n, "view_size", "network");
    c.view_encoder.channels = get<std::vector<int>>(n, "view_channels", "network");
    const auto& v = n.at("views");
    c.views.n_azi = get<int>(v, "n_azi", "network.views");
    c.views.elevations.clear();
    for (double e : get<std::vector<double>>(v, "elevations_deg", "network.views")) {
      c.views.elevations.push_back(deg2rad(e));
    }
    c.head_hidden = get<std::vector<int>>(n, "head_hidden", "network");
    c.binning = AngleBinning(get<int>(b, "azi", "binning"), get<int>(b, "ele", "binning"), get<int>(b, "inp", "binning"));
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config network: ") + e.what());
  }
  return c;
}

DatagenConfig GlobalConfig::datagen() const {
  const auto& d = doc_.at("datagen");
  DatagenConfig c;
  auto range = [&](const char* key, double& lo, double& hi) {
    const auto v = get<std::vector<double>>(d, key, "datagen");
    if (v.size() != 2) throw ConfigError(std::string("config datagen.") + key + " needs [lo, hi]");
    lo = v[0];
    hi = v[1];
  };
  c.views_per_shape = get<int>(d, "views_per_shape", "datagen");
  range("azi_range_deg", c.azi_lo_deg, c.azi_hi_deg);
  range("ele_range_deg", c.ele_lo_deg, c.ele_hi_deg);
  range("inp_range_deg", c.inp_lo_deg, c.inp_hi_deg);
  c.background = get<std::string>(d, "background", "datagen");
  c.num_points = get<int>(d, "num_points", "datagen");
  c.render = render();
  const PoseNetworkConfig net = network();
  c.views = net.views;
  c.view_size = net.view_encoder.image_size;
  try {
    c.split_mode = split_mode_from_string(get<std::string>(d, "split_mode", "datagen"));
    for (const auto& f : get<std::vector<std::string>>(d, "families", "datagen")) shape_family_from_string(f);
    for (const auto& f : get<std::vector<std::string>>(d, "heldout_families", "datagen")) shape_family_from_string(f);
    c.val_fraction = get<double>(d, "val_fraction", "datagen");
    c.test_fraction = get<double>(d, "test_fraction", "datagen");
    c.heldout_families = get<std::vector<std::string>>(d, "heldout_families", "datagen");
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config datagen: ") + e.what());
  }
  return c;
}

TrainConfig GlobalConfig::training() const {
  const auto& t = doc_.at("training");
  TrainConfig c;
  c.batch_size = get<int>(t, "batch_size", "training");
  c.schedule.clear();
  for (const auto& s : t.at("schedule")) {
    if (!s.is_object() || s.size() != 2 || !s.contains("lr") || !s.contains("epochs")) {
      throw ConfigError("config training.schedule entries must be {\"lr\": x, \"epochs\": n}");
    }
    c.schedule.push_back({get<double>(s, "lr", "training.schedule"), get<int>(s, "epochs", "training.schedule")});
  }
  c.seed = seed();
  c.checkpoint_every = get<int>(t, "checkpoint_every", "training");
  c.max_steps = get<int>(t, "max_steps", "training");
  const auto& a = t.at("adam");
  c.adam.beta1 = get<double>(a, "beta1", "training.adam");
  c.adam.beta2 = get<double>(a, "beta2", "training.adam");
  c.adam.eps = get<double>(a, "eps", "training.adam");
  c.adam.lr = c.schedule.empty() ? 0.0 : c.schedule.front().lr;
  const auto& l = t.at("loss");
  if (get<std::string>(l, "classification", "training.loss") != "cross_entropy" ||
      get<std::string>(l, "regression", "training.loss") != "huber") {
    throw ConfigError("config training.loss: only cross_entropy classification with huber regression is supported");
  }
  c.huber_delta = get<double>(l, "huber_delta", "training.loss");
  const auto& g = t.at("augment");
  c.augment.enabled = get<bool>(g, "enabled", "training.augment");
  c.augment.flip_prob = get<double>(g, "flip_prob", "training.augment");
  c.augment.crop_prob = get<double>(g, "crop_prob", "training.augment");
  c.augment.crop_frac = get<double>(g, "crop_frac", "training.augment");
  c.augment.color_prob = get<double>(g, "color_prob", "training.augment");
  const auto gain = get<std::vector<double>>(g, "gain_range", "training.augment");
  if (gain.size() != 2) throw ConfigError("config training.augment.gain_range needs [lo, hi]");
  c.augment.gain_lo = gain[0];
  c.augment.gain_hi = gain[1];
  c.augment.brightness = get<double>(g, "brightness", "training.augment");
  c.augment.azimuth_range_deg = get<double>(g, "azimuth_range_deg", "training.augment");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config ") + e.what());
  }
  return c;
}

}  // namespace poseforge
