#include "poseforge/trainloop.hpp"

#include "poseforge/autodiff/ops.hpp"
#include "poseforge/binio.hpp"
#include "poseforge/metrics.hpp"
#include "poseforge/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace poseforge {

namespace fs = std::filesystem;
using ad::Graph;
using ad::Var;

int TrainConfig::total_epochs() const {
  int n = 0;
  for (const auto& s : schedule) n += s.epochs;
  return n;
}

double TrainConfig::lr_for_epoch(int epoch) const {
  int end = 0;
  for (const auto& s : schedule) {
    end += s.epochs;
    if (epoch < end) return s.lr;
  }
  throw std::out_of_range("epoch " + std::to_string(epoch) + " beyond the schedule");
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("training: batch size must be >= 2 for batchnorm");
  if (schedule.empty()) throw std::invalid_argument("training: empty schedule");
  for (const auto& s : schedule) {
    if (!(s.lr > 0.0)) throw std::invalid_argument("training: learning rates must be positive");
    if (s.epochs < 0) throw std::invalid_argument("training: negative epoch count");
  }
  if (checkpoint_every < 0) throw std::invalid_argument("training: checkpoint_every must be >= 0");
  if (max_steps < 0) throw std::invalid_argument("training: max_steps must be >= 0");
  if (!(huber_delta > 0.0)) throw std::invalid_argument("training: huber_delta must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  nlohmann::json sched = nlohmann::json::array();
  for (const auto& s : c.schedule) sched.push_back({{"lr", s.lr}, {"epochs", s.epochs}});
  j = {{"batch_size", c.batch_size},
       {"schedule", sched},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
       {"huber_delta", c.huber_delta},
       {"augment", c.augment},
       {"max_steps", c.max_steps}};
}

template <class T>
Var pose_loss(Graph<T>& g, Var head, const std::vector<BinnedPose>& targets, const AngleBinning& binning,
              T huber_delta) {
  const auto& hs = g.shape(head);
  const int total = binning.total_bins();
  if (hs.size() != 2 || hs[1] != 2 * total) {
    throw std::invalid_argument("pose_loss: head output " + ad::shape_str(hs) + " does not match binning with " +
                                std::to_string(total) + " bins");
  }
  if (static_cast<int>(targets.size()) != hs[0]) {
    throw std::invalid_argument("pose_loss: " + std::to_string(targets.size()) + " targets for batch of " +
                                std::to_string(hs[0]));
  }
  Var per_sample;
  int start = 0;
  for (int a = 0; a < 3; ++a) {
    const int n = binning.bins(static_cast<Angle>(a));
    std::vector<int> labels;
    std::vector<T> offsets;
    for (const auto& t : targets) {
      if (t.label[a] < 0 || t.label[a] >= n) throw std::invalid_argument("pose_loss: label outside binning");
      labels.push_back(t.label[a]);
      offsets.push_back(static_cast<T>(t.offset[a]));
    }
    Var probs = ad::softmax(g, ad::slice_cols(g, head, start, n));
    Var ce = ad::cross_entropy(g, probs, labels);
    Var delta = ad::tanh(g, ad::slice_cols(g, head, total + start, n));
    Var reg = ad::huber(g, ad::gather_cols(g, delta, labels), offsets, huber_delta);
    Var term = ad::add(g, ce, reg);
    per_sample = a == 0 ? term : ad::add(g, per_sample, term);
    start += n;
  }
  return ad::mean(g, per_sample);
}

template Var pose_loss<float>(Graph<float>&, Var, const std::vector<BinnedPose>&, const AngleBinning&, float);
template Var pose_loss<double>(Graph<double>&, Var, const std::vector<BinnedPose>&, const AngleBinning&, double);

double pose_loss_value(const PosePrediction& pred, const BinnedPose& target, const AngleBinning& binning,
                       double huber_delta) {
  double loss = 0.0;
  for (int a = 0; a < 3; ++a) {
    const auto n = static_cast<std::size_t>(binning.bins(static_cast<Angle>(a)));
    if (pred.probabilities[a].size() != n || pred.offsets[a].size() != n) {
      throw std::invalid_argument("pose_loss: prediction does not match binning");
    }
    const int l = target.label[a];
    if (l < 0 || static_cast<std::size_t>(l) >= n) throw std::invalid_argument("pose_loss: label outside binning");
    loss += ad::cross_entropy_value(pred.probabilities[a], l);
    loss += ad::huber_value(pred.offsets[a][l] - target.offset[a], huber_delta);
  }
  return loss;
}

Dataset Dataset::load(const fs::path& root) {
  Dataset d;
  d.root = root;
  d.manifest = load_manifest(root);
  for (const auto& s : d.manifest.shapes) {
    d.meshes[s.id] = load_obj(root / s.mesh_path);
    d.clouds[s.id] = load_point_cloud(root / s.points_path);
  }
  for (const auto& s : d.manifest.samples) d.images[s.id] = load_raw_image(root / s.image_raw);
  return d;
}

ShapeInputBuilder::ShapeInputBuilder(const PoseNetworkConfig& net, const RenderConfig& render)
    : net_(net), view_render_(render) {
  view_render_.size = net.view_encoder.image_size;
}

void ShapeInputBuilder::fill(PreparedSample& s, const TriangleMesh& mesh, const PointCloud& cloud,
                             double rotation) const {
  if (net_.shape_mode == ShapeMode::point_cloud) {
    const auto n = static_cast<std::size_t>(net_.point_encoder.num_points);
    if (cloud.points.size() < n) {
      throw std::runtime_error("point cloud has " + std::to_string(cloud.points.size()) +
                               " points, network expects " + std::to_string(n));
    }
    // Surface samples are i.i.d., so any prefix is itself a valid sample.
    s.cloud.points.assign(cloud.points.begin(), cloud.points.begin() + static_cast<std::ptrdiff_t>(n));
    if (rotation != 0.0) s.cloud = rotate_about_up(s.cloud, rotation);
  } else {
    s.views = render_view_set(rotation != 0.0 ? rotate_about_up(mesh, rotation) : mesh, net_.views, view_render_);
  }
}

template <class T>
PoseBatch<T> make_batch(const std::vector<PreparedSample>& samples, ShapeMode mode) {
  std::vector<const Image*> images;
  for (const auto& s : samples) images.push_back(&s.image);
  PoseBatch<T> batch;
  batch.images = image_tensor<T>(images);
  if (mode == ShapeMode::point_cloud) {
    std::vector<const PointCloud*> clouds;
    for (const auto& s : samples) clouds.push_back(&s.cloud);
    batch.shapes = point_tensor<T>(clouds);
  } else {
    std::vector<const ViewSet*> views;
    for (const auto& s : samples) views.push_back(&s.views);
    batch.shapes = view_tensor<T>(views);
  }
  return batch;
}

template PoseBatch<float> make_batch<float>(const std::vector<PreparedSample>&, ShapeMode);
template PoseBatch<double> make_batch<double>(const std::vector<PreparedSample>&, ShapeMode);

nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["mean_loss"] = r.mean_loss;
  j["val_acc_pi6"] = r.val_acc_pi6 ? nlohmann::json(*r.val_acc_pi6) : nlohmann::json(nullptr);
  j["val_mederr"] = r.val_mederr ? nlohmann::json(*r.val_mederr) : nlohmann::json(nullptr);
  j["wall_ms"] = r.wall_ms;
  return j;
}

namespace {

enum : std::uint64_t { kShuffleStream = 11, kAugmentStream = 12 };

void check_image_input(const PoseNetworkConfig& net, const Image& img) {
  const auto& ic = net.image_encoder;
  if (img.channels() != ic.input_channels || img.height() != ic.image_size || img.width() != ic.image_size) {
    throw std::runtime_error("dataset images are " + std::to_string(img.channels()) + "x" +
                             std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                             " but the network expects " + std::to_string(ic.input_channels) + "x" +
                             std::to_string(ic.image_size) + "x" + std::to_string(ic.image_size));
  }
}

std::vector<const SampleRecord*> sorted_split(const DatasetManifest& m, const std::string& split) {
  auto v = m.split(split);
  std::sort(v.begin(), v.end(), [](const SampleRecord* a, const SampleRecord* b) { return a->id < b->id; });
  return v;
}

bool better(double acc, double med, double best_acc, double best_med) {
  return acc > best_acc || (acc == best_acc && med < best_med);
}

std::string snapshot_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04d.ckpt", epoch);
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& data, PoseNetwork<float>& net,
                  const RenderConfig& render, const TrainOptions& options) {
  config.validate();
  const auto train_set = sorted_split(data.manifest, "train");
  if (train_set.empty()) throw std::runtime_error("training split is empty");
  const bool has_val = !data.manifest.split("val").empty();
  const nlohmann::json config_json = config;

  TrainResult result;
  int start_epoch = 0;
  double best_acc = -1.0, best_med = std::numeric_limits<double>::infinity();
  fs::create_directories(options.out_dir);
  const fs::path log_path = options.out_dir / "train_log.jsonl";

  if (options.resume) {
    nlohmann::json extra;
    PoseNetwork<float> restored = PoseNetwork<float>::load(*options.resume, &extra);
    if (nlohmann::json(restored.config()) != nlohmann::json(net.config())) {
      throw std::runtime_error("checkpoint network config does not match the requested network");
    }
    if (extra.at("train") != config_json) {
      throw std::runtime_error("checkpoint training config does not match the requested training config");
    }
    net = std::move(restored);
    start_epoch = extra.at("epoch");
    result.steps = extra.at("steps");
    best_acc = extra.at("best_acc");
    best_med = extra.at("best_mederr").is_null() ? std::numeric_limits<double>::infinity()
                                                 : extra.at("best_mederr").get<double>();
    // Keep the log lines of the epochs the checkpoint covers.
    std::vector<std::string> kept;
    if (fs::exists(log_path)) {
      std::istringstream in(binio::read_text(log_path));
      std::string line;
      while (static_cast<int>(kept.size()) < start_epoch && std::getline(in, line)) kept.push_back(line);
    }
    std::string text;
    for (const auto& l : kept) text += l + "\n";
    binio::write_text(log_path, text);
  } else {
    binio::write_text(log_path, "");
  }

  for (const auto* s : train_set) check_image_input(net.config(), data.images.at(s->id));
  const ShapeInputBuilder builder(net.config(), render);
  const AngleBinning& binning = net.config().binning;
  const ShapeMode mode = net.config().shape_mode;
  auto params = net.parameters();

  auto save = [&](const fs::path& path, int epochs_done) {
    nlohmann::json extra{{"epoch", epochs_done},
                         {"steps", result.steps},
                         {"train", config_json},
                         {"best_acc", best_acc},
                         {"best_mederr", std::isfinite(best_med) ? nlohmann::json(best_med) : nlohmann::json(nullptr)},
                         {"config_sha256", options.config_sha256}};
    net.save(path, extra);
  };

  const int total = config.total_epochs();
  bool stop = false;
  for (int epoch = start_epoch; epoch < total && !stop; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = config.lr_for_epoch(epoch);
    ad::AdamOptions adam = config.adam;
    adam.lr = lr;

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(derive_seed(config.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle, i)]);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t end = std::min(order.size(), begin + bs);
      // A trailing single sample cannot be batch-normalized.
      if (end - begin < 2) break;
      if (config.max_steps > 0 && result.steps >= config.max_steps) {
        stop = true;
        break;
      }
      std::vector<PreparedSample> batch(end - begin);
      parallel_for(batch.size(), [&](std::size_t i) {
        const std::size_t idx = order[begin + i];
        const SampleRecord& rec = *train_set[idx];
        Rng rng(derive_seed(config.seed, {kAugmentStream, static_cast<std::uint64_t>(epoch), idx}));
        const AugmentDraw draw = draw_augment(config.augment, rng);
        AugmentedImage ai = apply_image_augment(data.images.at(rec.id), rec.pose, draw);
        PreparedSample& s = batch[i];
        s.image = std::move(ai.image);
        s.pose = ai.pose;
        s.target = encode_bins(ai.pose, binning);
        builder.fill(s, data.meshes.at(rec.shape_id), data.clouds.at(rec.shape_id), -draw.alpha);
      });
      std::vector<BinnedPose> targets;
      for (const auto& s : batch) targets.push_back(s.target);

      Graph<float> g(true);
      Var head = net.forward(g, make_batch<float>(batch, mode));
      Var loss = pose_loss(g, head, targets, binning, static_cast<float>(config.huber_delta));
      g.backward(loss);
      ad::adam_step<float>(params, adam);
      ++result.steps;
      loss_sum += static_cast<double>(g.value(loss).item()) * static_cast<double>(batch.size());
      loss_count += batch.size();
    }
    if (loss_count == 0) break;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.mean_loss = loss_sum / static_cast<double>(loss_count);
    if (has_val) {
      const EvalReport val = evaluate(net, data, "val", render);
      rec.val_acc_pi6 = val.acc_pi6;
      rec.val_mederr = val.mederr_deg;
    }
    const int done = epoch + 1;
    if (!has_val || better(*rec.val_acc_pi6, *rec.val_mederr, best_acc, best_med)) {
      if (has_val) {
        best_acc = *rec.val_acc_pi6;
        best_med = *rec.val_mederr;
      }
      save(options.out_dir / "best.ckpt", done);
    }
    save(options.out_dir / "last.ckpt", done);
    if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0) {
      save(options.out_dir / snapshot_name(done), done);
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    {
      std::ofstream log(log_path, std::ios::app);
      log << to_json(rec).dump() << "\n";
    }
    if (options.on_epoch) options.on_epoch(rec);
    result.epochs.push_back(rec);
  }
  return result;
}

void EvalReport::aggregate() {
  std::vector<double> errors;
  for (const auto& s : per_sample) errors.push_back(s.error_rad);
  if (errors.empty()) throw std::runtime_error("evaluation split '" + split + "' is empty");
  acc_pi6 = metrics::acc_pi_6_from_errors(errors);
  mederr_deg = metrics::med_err_from_errors(errors);
  add_accuracy.reset();
  if (std::all_of(per_sample.begin(), per_sample.end(), [](const SampleError& s) { return s.add_correct.has_value(); })) {
    std::size_t ok = 0;
    for (const auto& s : per_sample) ok += *s.add_correct ? 1 : 0;
    add_accuracy = static_cast<double>(ok) / static_cast<double>(per_sample.size());
  }
}

namespace {

nlohmann::json pose_json(const EulerPose& p) {
  return {{"azi_deg", rad2deg(p.azi)}, {"ele_deg", rad2deg(p.ele)}, {"inp_deg", rad2deg(p.inp)}};
}

}  // namespace

nlohmann::json EvalReport::to_json(const std::string& config_sha256) const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : per_sample) {
    nlohmann::json r{{"sample_id", s.sample_id},
                     {"shape_id", s.shape_id},
                     {"error_rad", s.error_rad},
                     {"error_deg", rad2deg(s.error_rad)},
                     {"predicted", pose_json(s.predicted)},
                     {"truth", pose_json(s.truth)}};
    if (s.add) r["add"] = *s.add;
    if (s.add_s) r["add_s"] = *s.add_s;
    if (s.add_correct) r["add_correct"] = *s.add_correct;
    rows.push_back(std::move(r));
  }
  nlohmann::json agg{{"n", per_sample.size()}, {"acc_pi6", acc_pi6}, {"mederr_deg", mederr_deg}};
  if (add_accuracy) agg["add_accuracy"] = *add_accuracy;
  return {{"config_sha256", config_sha256}, {"split", split}, {"counts", counts},
          {"per_sample", rows}, {"aggregate", agg}};
}

namespace {

std::map<std::string, int> split_counts(const DatasetManifest& m) {
  std::map<std::string, int> c{{"train", 0}, {"val", 0}, {"test", 0}};
  for (const auto& s : m.samples) ++c[s.split];
  return c;
}

}  // namespace

template <class T>
EvalReport evaluate(PoseNetwork<T>& net, const Dataset& data, const std::string& split, const RenderConfig& render) {
  const auto samples = sorted_split(data.manifest, split);
  if (samples.empty()) throw std::runtime_error("evaluation split '" + split + "' is empty");
  const ShapeInputBuilder builder(net.config(), render);
  const ShapeMode mode = net.config().shape_mode;

  // Canonical shape inputs are the same for every view of a shape.
  std::map<std::string, PreparedSample> shape_inputs;
  for (const auto* s : samples) {
    if (!shape_inputs.count(s->shape_id)) {
      PreparedSample p;
      builder.fill(p, data.meshes.at(s->shape_id), data.clouds.at(s->shape_id), 0.0);
      shape_inputs.emplace(s->shape_id, std::move(p));
    }
  }

  EvalReport report;
  report.split = split;
  report.counts = split_counts(data.manifest);
  constexpr std::size_t kBatch = 32;
  for (std::size_t begin = 0; begin < samples.size(); begin += kBatch) {
    const std::size_t end = std::min(samples.size(), begin + kBatch);
    std::vector<PreparedSample> batch;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& src = shape_inputs.at(samples[i]->shape_id);
      PreparedSample p;
      p.image = data.images.at(samples[i]->id);
      check_image_input(net.config(), p.image);
      p.cloud = src.cloud;
      p.views = src.views;
      batch.push_back(std::move(p));
    }
    const auto preds = net.predict_batch(make_batch<T>(batch, mode));
    for (std::size_t i = begin; i < end; ++i) {
      const SampleRecord& rec = *samples[i];
      SampleError e;
      e.sample_id = rec.id;
      e.shape_id = rec.shape_id;
      e.truth = rec.pose;
      e.predicted = decode_prediction(preds[i - begin], net.config().binning);
      e.error_rad = geodesic_distance(euler_to_matrix(e.predicted), euler_to_matrix(e.truth));
      report.per_sample.push_back(std::move(e));
    }
  }
  report.aggregate();
  return report;
}

template EvalReport evaluate<float>(PoseNetwork<float>&, const Dataset&, const std::string&, const RenderConfig&);
template EvalReport evaluate<double>(PoseNetwork<double>&, const Dataset&, const std::string&, const RenderConfig&);

EvalReport evaluate_poses(const std::map<std::string, PoseGuess>& guesses, const Dataset& data,
                          const std::string& split) {
  const auto samples = sorted_split(data.manifest, split);
  if (samples.empty()) throw std::runtime_error("evaluation split '" + split + "' is empty");
  bool with_t = true;
  for (const auto* s : samples) {
    auto it = guesses.find(s->id);
    if (it == guesses.end()) throw std::runtime_error("pose file has no entry for sample " + s->id);
    with_t = with_t && it->second.translation.has_value();
  }
  EvalReport report;
  report.split = split;
  report.counts = split_counts(data.manifest);
  report.per_sample.resize(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const SampleRecord& rec = *samples[i];
    const PoseGuess& guess = guesses.at(rec.id);
    SampleError& e = report.per_sample[i];
    e.sample_id = rec.id;
    e.shape_id = rec.shape_id;
    e.truth = rec.pose;
    e.predicted = guess.pose;
    metrics::PosePair pair{{euler_to_matrix(guess.pose), guess.translation},
                           {euler_to_matrix(rec.pose), rec.translation}};
    e.error_rad = geodesic_distance(pair.predicted.rotation, pair.truth.rotation);
    if (with_t) {
      const ShapeRecord& shape = data.manifest.shape(rec.shape_id);
      const PointCloud& cloud = data.clouds.at(rec.shape_id);
      e.add = metrics::add(pair, cloud);
      e.add_s = metrics::add_s(pair, cloud);
      const metrics::ShapeEntry entry{&cloud, shape.diameter, shape.symmetric};
      e.add_correct = metrics::add_accuracy(std::span(&pair, 1), std::span(&entry, 1)) == 1.0;
    }
  });
  report.aggregate();
  return report;
}

std::map<std::string, PoseGuess> parse_pose_file(const nlohmann::json& j) {
  if (!j.is_array()) throw std::runtime_error("pose file must be a JSON array");
  std::map<std::string, PoseGuess> out;
  for (const auto& e : j) {
    PoseGuess g;
    g.pose = EulerPose::from_degrees(e.at("azi_deg"), e.at("ele_deg"), e.at("inp_deg"));
    if (e.contains("t") && !e.at("t").is_null()) {
      const auto& t = e.at("t");
      if (!t.is_array() || t.size() != 3) throw std::runtime_error("pose file: t must be [x, y, z]");
      g.translation = Vec3(t.at(0), t.at(1), t.at(2));
    }
    const std::string id = e.at("sample_id");
    if (!out.emplace(id, g).second) throw std::runtime_error("pose file: duplicate sample " + id);
  }
  return out;
}

}  // namespace poseforge
