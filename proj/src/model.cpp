#include "poseforge/model.hpp"

#include "poseforge/autodiff/checkpoint.hpp"
#include "poseforge/random.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace poseforge {

using ad::Graph;
using ad::Parameter;
using ad::Shape;
using ad::Tensor;
using ad::Var;

std::string to_string(ShapeMode mode) {
  return mode == ShapeMode::point_cloud ? "pc" : "mv";
}

ShapeMode shape_mode_from_string(const std::string& s) {
  if (s == "pc" || s == "point_cloud") return ShapeMode::point_cloud;
  if (s == "mv" || s == "multi_view") return ShapeMode::multi_view;
  throw std::invalid_argument("unknown shape mode '" + s + "' (expected pc or mv)");
}

int PoseNetworkConfig::shape_feature_dim() const {
  if (shape_mode == ShapeMode::point_cloud) return point_encoder.feature_dim();
  return views.count() * view_encoder.feature_dim();
}

int PoseNetworkConfig::head_input_dim() const {
  return image_encoder.feature_dim() + shape_feature_dim();
}

void PoseNetworkConfig::validate() const {
  auto check_cnn = [](const CnnSpec& s, const char* what) {
    if (s.channels.empty()) throw std::invalid_argument(std::string(what) + ": no conv blocks");
    if (s.input_channels < 1) throw std::invalid_argument(std::string(what) + ": bad input channels");
    if (s.image_size < 8) throw std::invalid_argument(std::string(what) + ": images must be at least 8x8");
    int size = s.image_size;
    for (int c : s.channels) {
      if (c < 1) throw std::invalid_argument(std::string(what) + ": non-positive width");
      if (size < 2) throw std::invalid_argument(std::string(what) + ": image too small for depth");
      size = (size - 1) / 2 + 1;
    }
  };
  check_cnn(image_encoder, "image encoder");
  if (shape_mode == ShapeMode::point_cloud) {
    if (point_encoder.widths.empty() ||
        std::any_of(point_encoder.widths.begin(), point_encoder.widths.end(), [](int w) { return w < 1; })) {
      throw std::invalid_argument("point encoder: widths must be positive and non-empty");
    }
    if (point_encoder.num_points < 1) throw std::invalid_argument("point encoder: num_points < 1");
  } else {
    check_cnn(view_encoder, "view encoder");
    if (views.n_azi < 1 || views.elevations.empty()) {
      throw std::invalid_argument("view layout must have at least one view");
    }
  }
  if (std::any_of(head_hidden.begin(), head_hidden.end(), [](int w) { return w < 1; })) {
    throw std::invalid_argument("head: hidden sizes must be positive");
  }
  if (head_output_dim() != 2 * (binning.bins(Angle::azi) + binning.bins(Angle::ele) +
                                binning.bins(Angle::inp))) {
    throw std::invalid_argument("head: output dimension inconsistent with binning");
  }
}

namespace {

nlohmann::json cnn_to_json(const CnnSpec& s) {
  return {{"input_channels", s.input_channels}, {"image_size", s.image_size}, {"channels", s.channels}};
}

CnnSpec cnn_from_json(const nlohmann::json& j) {
  CnnSpec s;
  s.input_channels = j.at("input_channels");
  s.image_size = j.at("image_size");
  s.channels = j.at("channels").get<std::vector<int>>();
  return s;
}

}  // namespace

void to_json(nlohmann::json& j, const PoseNetworkConfig& c) {
  std::vector<double> ele_deg;
  for (double e : c.views.elevations) ele_deg.push_back(rad2deg(e));
  j = {{"image_encoder", cnn_to_json(c.image_encoder)},
       {"shape_mode", to_string(c.shape_mode)},
       {"point_encoder", {{"widths", c.point_encoder.widths}, {"num_points", c.point_encoder.num_points}}},
       {"view_encoder", cnn_to_json(c.view_encoder)},
       {"views", {{"n_azi", c.views.n_azi}, {"elevations_deg", ele_deg}}},
       {"head_hidden", c.head_hidden},
       {"binning",
        {{"azi", c.binning.bins(Angle::azi)},
         {"ele", c.binning.bins(Angle::ele)},
         {"inp", c.binning.bins(Angle::inp)}}}};
}

void from_json(const nlohmann::json& j, PoseNetworkConfig& c) {
  c.image_encoder = cnn_from_json(j.at("image_encoder"));
  c.shape_mode = shape_mode_from_string(j.at("shape_mode"));
  c.point_encoder.widths = j.at("point_encoder").at("widths").get<std::vector<int>>();
  c.point_encoder.num_points = j.at("point_encoder").at("num_points");
  c.view_encoder = cnn_from_json(j.at("view_encoder"));
  c.views.n_azi = j.at("views").at("n_azi");
  c.views.elevations.clear();
  for (double e : j.at("views").at("elevations_deg")) c.views.elevations.push_back(deg2rad(e));
  c.head_hidden = j.at("head_hidden").get<std::vector<int>>();
  const auto& b = j.at("binning");
  c.binning = AngleBinning(b.at("azi"), b.at("ele"), b.at("inp"));
}

EulerPose decode_prediction(const PosePrediction& pred, const AngleBinning& binning) {
  std::array<double, 3> angles{};
  for (int a = 0; a < 3; ++a) {
    const auto& p = pred.probabilities[a];
    if (static_cast<int>(p.size()) != binning.bins(static_cast<Angle>(a)) ||
        pred.offsets[a].size() != p.size()) {
      throw std::invalid_argument("decode_prediction: prediction does not match binning");
    }
    // max_element returns the first maximum, i.e. the lowest index on ties.
    const int best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    angles[a] = decode_angle(best, pred.offsets[a][best], static_cast<Angle>(a), binning);
  }
  return {angles[0], angles[1], angles[2]};
}

template <class T>
Tensor<T> image_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw std::invalid_argument("image_tensor: empty batch");
  const int c = images[0]->channels(), h = images[0]->height(), w = images[0]->width();
  Tensor<T> t(Shape{static_cast<int>(images.size()), c, h, w});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = *images[b];
    if (img.channels() != c || img.height() != h || img.width() != w) {
      throw std::invalid_argument("image_tensor: images differ in size");
    }
    std::copy(img.data().begin(), img.data().end(), t.data() + b * img.size());
  }
  return t;
}

template <class T>
Tensor<T> point_tensor(const std::vector<const PointCloud*>& clouds) {
  if (clouds.empty()) throw std::invalid_argument("point_tensor: empty batch");
  const std::size_t n = clouds[0]->points.size();
  if (n == 0) throw std::invalid_argument("point_tensor: empty point cloud");
  Tensor<T> t(Shape{static_cast<int>(clouds.size()), static_cast<int>(n), 3});
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    if (clouds[b]->points.size() != n) throw std::invalid_argument("point_tensor: clouds differ in size");
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) t[(b * n + i) * 3 + k] = static_cast<T>(clouds[b]->points[i][k]);
    }
  }
  return t;
}

template <class T>
Tensor<T> view_tensor(const std::vector<const ViewSet*>& views) {
  if (views.empty() || views[0]->images.empty()) throw std::invalid_argument("view_tensor: empty batch");
  const Image& first = views[0]->images[0];
  const int k = static_cast<int>(views[0]->images.size());
  Tensor<T> t(Shape{static_cast<int>(views.size()), k, first.channels(), first.height(), first.width()});
  std::size_t offset = 0;
  for (const ViewSet* vs : views) {
    if (static_cast<int>(vs->images.size()) != k) throw std::invalid_argument("view_tensor: view counts differ");
    for (const Image& img : vs->images) {
      if (img.channels() != first.channels() || img.height() != first.height() ||
          img.width() != first.width()) {
        throw std::invalid_argument("view_tensor: views differ in size");
      }
      std::copy(img.data().begin(), img.data().end(), t.data() + offset);
      offset += img.size();
    }
  }
  return t;
}

template <class T>
Parameter<T>* PoseNetwork<T>::make_param(const std::string& name, Shape shape, int fan_in, bool zero) {
  Tensor<T> init(shape);
  if (!zero) {
    Rng rng(derive_seed(init_state_, {params_.size()}));
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : init.vec()) v = static_cast<T>(uniform(rng, -bound, bound));
  }
  params_.push_back(std::make_unique<Parameter<T>>(name, std::move(init)));
  return params_.back().get();
}

template <class T>
typename PoseNetwork<T>::BatchNormLayer PoseNetwork<T>::make_bn(const std::string& name, int channels) {
  BatchNormLayer bn;
  bn.gamma = make_param(name + ".gamma", Shape{channels}, 1, true);
  bn.gamma->value.fill(T(1));
  bn.beta = make_param(name + ".beta", Shape{channels}, 1, true);
  bn.state = std::make_unique<ad::BatchNormState<T>>(channels);
  bn.name = name;
  return bn;
}

template <class T>
std::vector<typename PoseNetwork<T>::ConvBlock> PoseNetwork<T>::make_cnn(const std::string& prefix,
                                                                        const CnnSpec& spec) {
  std::vector<ConvBlock> blocks;
  int in = spec.input_channels;
  for (std::size_t i = 0; i < spec.channels.size(); ++i) {
    const std::string name = prefix + ".block" + std::to_string(i);
    ConvBlock block;
    block.weight = make_param(name + ".conv.weight", Shape{spec.channels[i], in, 3, 3}, in * 9, false);
    block.bn = make_bn(name + ".bn", spec.channels[i]);
    blocks.push_back(std::move(block));
    in = spec.channels[i];
  }
  return blocks;
}

template <class T>
typename PoseNetwork<T>::DenseBlock PoseNetwork<T>::make_dense_block(const std::string& prefix, int in,
                                                                     int out) {
  DenseBlock block;
  block.dense.weight = make_param(prefix + ".weight", Shape{in, out}, in, false);
  block.dense.bias = make_param(prefix + ".bias", Shape{out}, in, true);
  block.bn = make_bn(prefix + ".bn", out);
  return block;
}

template <class T>
PoseNetwork<T>::PoseNetwork(const PoseNetworkConfig& config, std::uint64_t seed)
    : config_(config), init_state_(seed) {
  config_.validate();
  image_encoder_ = make_cnn("image_encoder", config_.image_encoder);
  if (config_.shape_mode == ShapeMode::point_cloud) {
    int in = 3;
    for (std::size_t i = 0; i < config_.point_encoder.widths.size(); ++i) {
      const int out = config_.point_encoder.widths[i];
      point_encoder_.push_back(make_dense_block("point_encoder.mlp" + std::to_string(i), in, out));
      in = out;
    }
  } else {
    view_encoder_ = make_cnn("view_encoder", config_.view_encoder);
  }
  int in = config_.head_input_dim();
  for (std::size_t i = 0; i < config_.head_hidden.size(); ++i) {
    head_hidden_.push_back(make_dense_block("head.fc" + std::to_string(i), in, config_.head_hidden[i]));
    in = config_.head_hidden[i];
  }
  head_out_.weight = make_param("head.out.weight", Shape{in, config_.head_output_dim()}, in, false);
  head_out_.bias = make_param("head.out.bias", Shape{config_.head_output_dim()}, in, true);
}

template <class T>
Var PoseNetwork<T>::run_bn(Graph<T>& g, BatchNormLayer& bn, Var x) {
  return ad::batchnorm(g, x, g.param(*bn.gamma), g.param(*bn.beta), *bn.state);
}

template <class T>
Var PoseNetwork<T>::run_cnn(Graph<T>& g, std::vector<ConvBlock>& blocks, Var x) {
  for (auto& block : blocks) {
    x = ad::conv2d(g, x, g.param(*block.weight), Var{}, ad::Conv2dOptions{2, 1});
    x = ad::relu(g, run_bn(g, block.bn, x));
  }
  return ad::global_avg_pool(g, x);
}

template <class T>
Var PoseNetwork<T>::run_dense_block(Graph<T>& g, DenseBlock& block, Var x) {
  x = ad::linear(g, x, g.param(*block.dense.weight), g.param(*block.dense.bias));
  return ad::relu(g, run_bn(g, block.bn, x));
}

template <class T>
Var PoseNetwork<T>::forward(Graph<T>& g, const PoseBatch<T>& batch) {
  const auto& is = batch.images.shape();
  const auto& ic = config_.image_encoder;
  if (is.size() != 4 || is[1] != ic.input_channels || is[2] != ic.image_size || is[3] != ic.image_size) {
    throw ad::ShapeError("image batch " + ad::shape_str(is) + " does not match encoder input [B," +
                         std::to_string(ic.input_channels) + "," + std::to_string(ic.image_size) + "," +
                         std::to_string(ic.image_size) + "]");
  }
  const int b = is[0];
  Var image_feat = run_cnn(g, image_encoder_, g.input(batch.images));

  const auto& ss = batch.shapes.shape();
  Var shape_feat;
  if (config_.shape_mode == ShapeMode::point_cloud) {
    if (ss.size() != 3 || ss[0] != b || ss[2] != 3) {
      throw ad::ShapeError("point-cloud network expects [B,N,3] shapes, got " + ad::shape_str(ss));
    }
    const int n = ss[1];
    Var x = g.input(batch.shapes.reshaped(Shape{b * n, 3}));
    for (auto& block : point_encoder_) x = run_dense_block(g, block, x);
    x = ad::reshape(g, x, Shape{b, n, config_.point_encoder.feature_dim()});
    shape_feat = ad::global_max_pool(g, x);
  } else {
    const auto& vc = config_.view_encoder;
    const int k = config_.views.count();
    if (ss.size() != 5 || ss[0] != b || ss[1] != k || ss[2] != vc.input_channels ||
        ss[3] != vc.image_size || ss[4] != vc.image_size) {
      throw ad::ShapeError("multi-view network expects [B," + std::to_string(k) + "," +
                           std::to_string(vc.input_channels) + "," + std::to_string(vc.image_size) + "," +
                           std::to_string(vc.image_size) + "] shapes, got " + ad::shape_str(ss));
    }
    Var views = g.input(batch.shapes.reshaped(Shape{b * k, ss[2], ss[3], ss[4]}));
    Var per_view = run_cnn(g, view_encoder_, views);
    // Row-major [B*K, D] -> [B, K*D] concatenates each sample's views in order.
    shape_feat = ad::reshape(g, per_view, Shape{b, k * vc.feature_dim()});
  }

  Var x = ad::concat(g, std::vector<Var>{image_feat, shape_feat});
  for (auto& block : head_hidden_) x = run_dense_block(g, block, x);
  return ad::linear(g, x, g.param(*head_out_.weight), g.param(*head_out_.bias));
}

template <class T>
PosePrediction PoseNetwork<T>::readout(const Tensor<T>& head, int row) const {
  const int width = head.dim(1);
  const int total = config_.binning.total_bins();
  const T* r = head.data() + static_cast<std::size_t>(row) * width;
  PosePrediction pred;
  int offset = 0;
  for (int a = 0; a < 3; ++a) {
    const int n = config_.binning.bins(static_cast<Angle>(a));
    auto& p = pred.probabilities[a];
    auto& d = pred.offsets[a];
    p.resize(n);
    d.resize(n);
    double mx = r[offset];
    for (int i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(r[offset + i]));
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      p[i] = std::exp(static_cast<double>(r[offset + i]) - mx);
      z += p[i];
    }
    for (int i = 0; i < n; ++i) {
      p[i] /= z;
      d[i] = std::tanh(static_cast<double>(r[total + offset + i]));
    }
    offset += n;
  }
  return pred;
}

template <class T>
std::vector<PosePrediction> PoseNetwork<T>::predict_batch(const PoseBatch<T>& batch) {
  Graph<T> g(false);
  Var out = forward(g, batch);
  std::vector<PosePrediction> preds;
  for (int i = 0; i < g.shape(out)[0]; ++i) preds.push_back(readout(g.value(out), i));
  return preds;
}

template <class T>
PosePrediction PoseNetwork<T>::predict(const Image& image, const PointCloud& cloud) {
  if (config_.shape_mode != ShapeMode::point_cloud) {
    throw std::invalid_argument("predict: network expects rendered views, got a point cloud");
  }
  PoseBatch<T> batch{image_tensor<T>({&image}), point_tensor<T>({&cloud})};
  return predict_batch(batch).front();
}

template <class T>
PosePrediction PoseNetwork<T>::predict(const Image& image, const ViewSet& views) {
  if (config_.shape_mode != ShapeMode::multi_view) {
    throw std::invalid_argument("predict: network expects a point cloud, got rendered views");
  }
  PoseBatch<T> batch{image_tensor<T>({&image}), view_tensor<T>({&views})};
  return predict_batch(batch).front();
}

template <class T>
std::vector<Parameter<T>*> PoseNetwork<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
std::size_t PoseNetwork<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

template <class T>
std::vector<typename PoseNetwork<T>::NamedBuffer> PoseNetwork<T>::buffers() {
  std::vector<NamedBuffer> out;
  auto add_bn = [&](BatchNormLayer& bn) {
    out.push_back({bn.name + ".running_mean", &bn.state->running_mean});
    out.push_back({bn.name + ".running_var", &bn.state->running_var});
  };
  for (auto& b : image_encoder_) add_bn(b.bn);
  for (auto& b : point_encoder_) add_bn(b.bn);
  for (auto& b : view_encoder_) add_bn(b.bn);
  for (auto& b : head_hidden_) add_bn(b.bn);
  return out;
}

template <class T>
void PoseNetwork<T>::save(const std::filesystem::path& path, const nlohmann::json& extra) {
  std::vector<ad::NamedTensor<T>> bufs;
  for (auto& b : buffers()) bufs.push_back({b.name, b.tensor});
  nlohmann::json meta{{"network", config_}, {"extra", extra}};
  binio::write_file(path, ad::encode_checkpoint<T>(meta, parameters(), bufs));
}

template <class T>
PoseNetwork<T> PoseNetwork<T>::load(const std::filesystem::path& path, nlohmann::json* extra) {
  const auto bytes = binio::read_file(path);
  const auto meta = ad::read_checkpoint_meta(bytes);
  PoseNetwork net(meta.at("network").get<PoseNetworkConfig>(), 0);
  std::vector<ad::NamedTensor<T>> bufs;
  for (auto& b : net.buffers()) bufs.push_back({b.name, b.tensor});
  ad::decode_checkpoint<T>(bytes, net.parameters(), bufs);
  if (extra) *extra = meta.at("extra");
  return net;
}

template class PoseNetwork<float>;
template class PoseNetwork<double>;
template Tensor<float> image_tensor<float>(const std::vector<const Image*>&);
template Tensor<double> image_tensor<double>(const std::vector<const Image*>&);
template Tensor<float> point_tensor<float>(const std::vector<const PointCloud*>&);
template Tensor<double> point_tensor<double>(const std::vector<const PointCloud*>&);
template Tensor<float> view_tensor<float>(const std::vector<const ViewSet*>&);
template Tensor<double> view_tensor<double>(const std::vector<const ViewSet*>&);

}  // namespace poseforge
