#pragma once

#include "poseforge/autodiff/graph.hpp"
#include "poseforge/autodiff/optim.hpp"
#include "poseforge/datagen.hpp"
#include "poseforge/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace poseforge {

struct LrStage {
  double lr = 1e-4;
  int epochs = 100;
};

struct TrainConfig {
  int batch_size = 16;
  std::vector<LrStage> schedule{{1e-4, 100}, {1e-5, 100}};
  std::uint64_t seed = 0;
  /// last.ckpt is rewritten every epoch; every this many epochs a numbered
  /// epoch_NNNN.ckpt snapshot is kept as well (0 disables snapshots).
  int checkpoint_every = 10;
  ad::AdamOptions adam;
  double huber_delta = 1.0;
  AugmentConfig augment;
  /// Optional cap on optimizer steps; 0 means run the whole schedule.
  int max_steps = 0;

  /// Shorter schedule with a 10x higher starting rate for small datasets.
  static std::vector<LrStage> desk_schedule() { return {{1e-3, 30}, {1e-4, 30}}; }

  int total_epochs() const;
  double lr_for_epoch(int epoch) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);

/// Per-sample loss: cross-entropy on each angle's softmax plus Huber on the
/// tanh offset of the ground-truth bin. `head` is the raw [B, 2 sum(L)]
/// network output; the result is the batch mean.
template <class T>
ad::Var pose_loss(ad::Graph<T>& g, ad::Var head, const std::vector<BinnedPose>& targets,
                  const AngleBinning& binning, T huber_delta = T(1));

/// Same quantity for one already-read-out prediction.
double pose_loss_value(const PosePrediction& pred, const BinnedPose& target, const AngleBinning& binning,
                       double huber_delta = 1.0);

/// Manifest plus every asset a network needs, resident in memory.
struct Dataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::map<std::string, TriangleMesh> meshes;
  std::map<std::string, PointCloud> clouds;
  std::map<std::string, Image> images;

  static Dataset load(const std::filesystem::path& root);
};

/// Network input for one sample after any augmentation.
struct PreparedSample {
  Image image;
  PointCloud cloud;
  ViewSet views;
  BinnedPose target;
  EulerPose pose;
};

/// Renders/truncates the shape representation the network expects.
class ShapeInputBuilder {
 public:
  ShapeInputBuilder(const PoseNetworkConfig& net, const RenderConfig& render);
  /// Shape input of the mesh/cloud turned by rotate_about_up(., rotation).
  void fill(PreparedSample& s, const TriangleMesh& mesh, const PointCloud& cloud, double rotation) const;

 private:
  PoseNetworkConfig net_;
  RenderConfig view_render_;
};

template <class T>
PoseBatch<T> make_batch(const std::vector<PreparedSample>& samples, ShapeMode mode);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  std::optional<double> val_acc_pi6;
  std::optional<double> val_mederr;
  double wall_ms = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainResult {
  std::vector<EpochRecord> epochs;
  int steps = 0;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  std::string config_sha256;
  /// Called after each epoch, e.g. for progress output.
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Mini-batch Adam training with on-the-fly augmentation. Writes
/// out_dir/last.ckpt, out_dir/best.ckpt and out_dir/train_log.jsonl.
/// Resuming from a checkpoint continues exactly where it stopped.
TrainResult train(const TrainConfig& config, const Dataset& data, PoseNetwork<float>& net,
                  const RenderConfig& render, const TrainOptions& options);

struct SampleError {
  std::string sample_id;
  std::string shape_id;
  EulerPose predicted;
  EulerPose truth;
  double error_rad = 0.0;
  std::optional<double> add;
  std::optional<double> add_s;
  std::optional<bool> add_correct;
};

struct EvalReport {
  std::string split;
  std::vector<SampleError> per_sample;  // sorted by sample id
  double acc_pi6 = 0.0;
  double mederr_deg = 0.0;
  std::optional<double> add_accuracy;
  std::map<std::string, int> counts;

  /// Recomputes the aggregates from per_sample.
  void aggregate();
  nlohmann::json to_json(const std::string& config_sha256) const;
};

/// Network predictions on one split, no augmentation. Running statistics
/// are left untouched.
template <class T>
EvalReport evaluate(PoseNetwork<T>& net, const Dataset& data, const std::string& split,
                    const RenderConfig& render);

struct PoseGuess {
  EulerPose pose;
  std::optional<Vec3> translation;
};

/// Scores externally supplied poses (keyed by sample id) against a split.
/// ADD / ADD-S accuracy is reported when every guess carries a translation.
EvalReport evaluate_poses(const std::map<std::string, PoseGuess>& guesses, const Dataset& data,
                          const std::string& split);

/// Pose file: JSON array of {sample_id, azi_deg, ele_deg, inp_deg, t?}.
std::map<std::string, PoseGuess> parse_pose_file(const nlohmann::json& j);

}  // namespace poseforge
