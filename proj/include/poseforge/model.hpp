#pragma once

#include "poseforge/autodiff/graph.hpp"
#include "poseforge/autodiff/ops.hpp"
#include "poseforge/image.hpp"
#include "poseforge/render.hpp"
#include "poseforge/rotcore.hpp"
#include "poseforge/shapecore.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace poseforge {

enum class ShapeMode { point_cloud, multi_view };

std::string to_string(ShapeMode mode);
ShapeMode shape_mode_from_string(const std::string& s);

/// Stride-2 conv-bn-relu blocks followed by global average pooling. The
/// feature dimension is the last block's width.
struct CnnSpec {
  int input_channels = 3;
  int image_size = 64;
  std::vector<int> channels{16, 32, 64, 128};

  int feature_dim() const { return channels.empty() ? 0 : channels.back(); }
};

/// Shared per-point MLP followed by a global max pool.
struct PointEncoderSpec {
  std::vector<int> widths{64, 128, 256};
  int num_points = 2500;

  int feature_dim() const { return widths.empty() ? 0 : widths.back(); }
};

struct PoseNetworkConfig {
  CnnSpec image_encoder;
  ShapeMode shape_mode = ShapeMode::multi_view;
  PointEncoderSpec point_encoder;
  CnnSpec view_encoder;
  ViewLayout views;
  std::vector<int> head_hidden{800, 400, 200};
  AngleBinning binning;

  int shape_feature_dim() const;
  int head_input_dim() const;
  int head_output_dim() const { return 2 * binning.total_bins(); }
  /// Throws std::invalid_argument on inconsistent dimensions.
  void validate() const;
};

void to_json(nlohmann::json& j, const PoseNetworkConfig& c);
void from_json(const nlohmann::json& j, PoseNetworkConfig& c);

/// Per-angle softmax probabilities and tanh offsets, in azi/ele/inp order.
struct PosePrediction {
  std::array<std::vector<double>, 3> probabilities;
  std::array<std::vector<double>, 3> offsets;
};

/// Argmax bin per angle (lowest index on ties) read out with that bin's
/// predicted offset.
EulerPose decode_prediction(const PosePrediction& pred, const AngleBinning& binning);

/// Network input for one batch. Images are [B,C,H,W]; the shape tensor is
/// [B,N,3] points or [B,K,C,H,W] views depending on the network mode.
template <class T>
struct PoseBatch {
  ad::Tensor<T> images;
  ad::Tensor<T> shapes;
};

template <class T>
ad::Tensor<T> image_tensor(const std::vector<const Image*>& images);
template <class T>
ad::Tensor<T> point_tensor(const std::vector<const PointCloud*>& clouds);
template <class T>
ad::Tensor<T> view_tensor(const std::vector<const ViewSet*>& views);

/// Image encoder + shape encoder + MLP head.
template <class T>
class PoseNetwork {
 public:
  PoseNetwork(const PoseNetworkConfig& config, std::uint64_t seed);
  PoseNetwork(PoseNetwork&&) noexcept = default;
  PoseNetwork& operator=(PoseNetwork&&) noexcept = default;

  const PoseNetworkConfig& config() const { return config_; }

  /// Raw head output [B, 2 * sum(L)]: logits for azi/ele/inp, then the
  /// pre-tanh offsets in the same order.
  ad::Var forward(ad::Graph<T>& g, const PoseBatch<T>& batch);

  /// Eval-mode inference for a single sample.
  PosePrediction predict(const Image& image, const PointCloud& cloud);
  PosePrediction predict(const Image& image, const ViewSet& views);
  /// Eval-mode inference for a prepared batch.
  std::vector<PosePrediction> predict_batch(const PoseBatch<T>& batch);

  std::vector<ad::Parameter<T>*> parameters();
  std::size_t parameter_count() const;

  struct NamedBuffer {
    std::string name;
    ad::Tensor<T>* tensor;
  };
  std::vector<NamedBuffer> buffers();

  void save(const std::filesystem::path& path, const nlohmann::json& extra);
  /// Restores a checkpoint written by save(); `extra` receives the caller
  /// metadata stored alongside.
  static PoseNetwork load(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

 private:
  struct BatchNormLayer {
    ad::Parameter<T>* gamma = nullptr;
    ad::Parameter<T>* beta = nullptr;
    std::unique_ptr<ad::BatchNormState<T>> state;
    std::string name;
  };
  struct ConvBlock {
    ad::Parameter<T>* weight = nullptr;
    BatchNormLayer bn;
  };
  struct DenseLayer {
    ad::Parameter<T>* weight = nullptr;
    ad::Parameter<T>* bias = nullptr;
  };
  struct DenseBlock {
    DenseLayer dense;
    BatchNormLayer bn;
  };

  ad::Parameter<T>* make_param(const std::string& name, ad::Shape shape, int fan_in, bool zero);
  BatchNormLayer make_bn(const std::string& name, int channels);
  std::vector<ConvBlock> make_cnn(const std::string& prefix, const CnnSpec& spec);
  DenseBlock make_dense_block(const std::string& prefix, int in, int out);

  ad::Var run_cnn(ad::Graph<T>& g, std::vector<ConvBlock>& blocks, ad::Var x);
  ad::Var run_bn(ad::Graph<T>& g, BatchNormLayer& bn, ad::Var x);
  ad::Var run_dense_block(ad::Graph<T>& g, DenseBlock& block, ad::Var x);
  PosePrediction readout(const ad::Tensor<T>& head, int row) const;

  PoseNetworkConfig config_;
  std::uint64_t init_state_ = 0;
  std::vector<std::unique_ptr<ad::Parameter<T>>> params_;
  std::vector<ConvBlock> image_encoder_;
  std::vector<DenseBlock> point_encoder_;
  std::vector<ConvBlock> view_encoder_;
  std::vector<DenseBlock> head_hidden_;
  DenseLayer head_out_;
};

extern template class PoseNetwork<float>;
extern template class PoseNetwork<double>;

}  // namespace poseforge
