#include "poseforge/gradcheck.hpp"

#include "poseforge/autodiff/ops.hpp"
#include "poseforge/model.hpp"
#include "poseforge/random.hpp"
#include "poseforge/trainloop.hpp"

#include <algorithm>
#include <cmath>

namespace poseforge {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

namespace {

double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.vec()) v = uniform(rng, lo, hi);
  return t;
}

// Values bounded away from zero so relu-style kinks sit far outside +-eps.
Tensor<double> off_zero_tensor(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.vec()) v = (coin(rng, 0.5) ? 1.0 : -1.0) * uniform(rng, 0.05, 1.0);
  return t;
}

// sum(x * w) for a fixed random w, so every output element carries a
// distinct weight into the loss.
Var weighted_sum(Graph<double>& g, Var x, std::uint64_t seed) {
  Rng rng(seed);
  Var w = g.input(random_tensor(g.shape(x), rng, 0.5, 1.5));
  return ad::sum(g, ad::mul(g, x, w));
}

GradCheckResult check_params(const std::string& name, std::vector<ad::Parameter<double>*> params,
                             const std::function<Var(Graph<double>&)>& fn, const GradCheckOptions& opt) {
  for (auto* p : params) p->zero_grad();
  {
    Graph<double> g(true);
    g.backward(fn(g));
  }
  GradCheckResult r{name, 0.0, 0, true};
  auto eval = [&] {
    Graph<double> g(true);
    return g.value(fn(g)).item();
  };
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + opt.eps;
      const double up = eval();
      p->value[i] = orig - opt.eps;
      const double down = eval();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.eps);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(p->grad[i], numeric, opt.floor));
      ++r.checked;
    }
  }
  for (auto* p : params) p->zero_grad();
  r.passed = r.max_rel_error < opt.tolerance;
  return r;
}

PoseNetworkConfig toy_network(ShapeMode mode) {
  PoseNetworkConfig c;
  c.shape_mode = mode;
  c.image_encoder = {3, 8, {3, 4}};
  c.point_encoder = {{4, 5}, 6};
  c.view_encoder = {3, 8, {2, 3}};
  c.views.n_azi = 2;
  c.views.elevations = {0.0};
  c.head_hidden = {6, 5};
  c.binning = AngleBinning(4, 3, 4);
  return c;
}

GradCheckResult check_network(ShapeMode mode, std::uint64_t seed, const GradCheckOptions& opt) {
  const PoseNetworkConfig cfg = toy_network(mode);
  PoseNetwork<double> net(cfg, seed);
  Rng rng(derive_seed(seed, {77, static_cast<std::uint64_t>(mode)}));
  constexpr int kBatch = 3;
  PoseBatch<double> batch;
  batch.images = random_tensor(Shape{kBatch, 3, 8, 8}, rng, 0.0, 1.0);
  batch.shapes = mode == ShapeMode::point_cloud ? random_tensor(Shape{kBatch, 6, 3}, rng)
                                                : random_tensor(Shape{kBatch, 2, 3, 8, 8}, rng, 0.0, 1.0);
  std::vector<BinnedPose> targets;
  for (int b = 0; b < kBatch; ++b) {
    const EulerPose p = EulerPose::make(uniform(rng, -kPi, kPi), uniform(rng, -1.2, 1.2), uniform(rng, -kPi, kPi));
    targets.push_back(encode_bins(p, cfg.binning));
  }
  return check_params(std::string("pose_network_") + to_string(mode), net.parameters(),
                      [&](Graph<double>& g) { return pose_loss(g, net.forward(g, batch), targets, cfg.binning); },
                      opt);
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, std::vector<Tensor<double>> inputs, const GraphFn& fn,
                                const GradCheckOptions& opt, bool training) {
  auto run = [&](bool backward, std::vector<Tensor<double>>* grads) {
    Graph<double> g(training);
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.input(t, true));
    Var out = fn(g, vars);
    if (backward) {
      g.backward(out);
      for (Var v : vars) grads->push_back(g.grad(v));
    }
    return g.value(out).item();
  };
  std::vector<Tensor<double>> analytic;
  run(true, &analytic);
  GradCheckResult r{name, 0.0, 0, true};
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + opt.eps;
      const double up = run(false, nullptr);
      inputs[k][i] = orig - opt.eps;
      const double down = run(false, nullptr);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * opt.eps);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[k][i], numeric, opt.floor));
      ++r.checked;
    }
  }
  r.passed = r.max_rel_error < opt.tolerance;
  return r;
}

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& opt) {
  Rng rng(derive_seed(seed, {1}));
  const std::uint64_t ws = derive_seed(seed, {2});
  std::vector<GradCheckResult> out;
  auto unary = [&](const std::string& name, Tensor<double> x, auto op, bool training = true) {
    out.push_back(check_gradients(
        name, {std::move(x)}, [&](Graph<double>& g, const std::vector<Var>& v) { return weighted_sum(g, op(g, v[0]), ws); },
        opt, training));
  };
  auto binary = [&](const std::string& name, Tensor<double> a, Tensor<double> b, auto op) {
    out.push_back(check_gradients(
        name, {std::move(a), std::move(b)},
        [&](Graph<double>& g, const std::vector<Var>& v) { return weighted_sum(g, op(g, v[0], v[1]), ws); }, opt));
  };

  binary("add", random_tensor({3, 4}, rng), random_tensor({3, 4}, rng),
         [](auto& g, Var a, Var b) { return ad::add(g, a, b); });
  binary("sub", random_tensor({3, 4}, rng), random_tensor({3, 4}, rng),
         [](auto& g, Var a, Var b) { return ad::sub(g, a, b); });
  binary("mul", random_tensor({3, 4}, rng), random_tensor({3, 4}, rng),
         [](auto& g, Var a, Var b) { return ad::mul(g, a, b); });
  unary("scale", random_tensor({2, 5}, rng), [](auto& g, Var x) { return ad::scale(g, x, -1.7); });
  binary("matmul", random_tensor({3, 4}, rng), random_tensor({4, 5}, rng),
         [](auto& g, Var a, Var b) { return ad::matmul(g, a, b); });
  out.push_back(check_gradients(
      "linear", {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)},
      [&](Graph<double>& g, const std::vector<Var>& v) { return weighted_sum(g, ad::linear(g, v[0], v[1], v[2]), ws); },
      opt));
  out.push_back(check_gradients(
      "conv2d_stride2_pad1", {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
      [&](Graph<double>& g, const std::vector<Var>& v) {
        return weighted_sum(g, ad::conv2d(g, v[0], v[1], v[2], ad::Conv2dOptions{2, 1}), ws);
      },
      opt));
  out.push_back(check_gradients(
      "conv2d_stride1_nobias", {random_tensor({1, 2, 4, 4}, rng), random_tensor({2, 2, 2, 2}, rng)},
      [&](Graph<double>& g, const std::vector<Var>& v) {
        return weighted_sum(g, ad::conv2d(g, v[0], v[1], Var{}, ad::Conv2dOptions{1, 0}), ws);
      },
      opt));
  for (const bool training : {true, false}) {
    for (const Shape& shape : {Shape{4, 3}, Shape{2, 3, 2, 2}}) {
      ad::BatchNormState<double> state(3);
      Rng srng(derive_seed(seed, {3}));
      for (auto& v : state.running_mean.vec()) v = uniform(srng, -0.5, 0.5);
      for (auto& v : state.running_var.vec()) v = uniform(srng, 0.5, 2.0);
      out.push_back(check_gradients(
          std::string("batchnorm_") + (training ? "train_" : "eval_") + (shape.size() == 2 ? "2d" : "4d"),
          {random_tensor(shape, rng), random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng)},
          [&](Graph<double>& g, const std::vector<Var>& v) {
            return weighted_sum(g, ad::batchnorm(g, v[0], v[1], v[2], state), ws);
          },
          opt, training));
    }
  }
  unary("relu", off_zero_tensor({3, 5}, rng), [](auto& g, Var x) { return ad::relu(g, x); });
  unary("tanh", random_tensor({3, 5}, rng, -2.0, 2.0), [](auto& g, Var x) { return ad::tanh(g, x); });
  unary("softmax", random_tensor({3, 5}, rng, -2.0, 2.0), [](auto& g, Var x) { return ad::softmax(g, x); });
  unary("global_max_pool", random_tensor({2, 5, 3}, rng), [](auto& g, Var x) { return ad::global_max_pool(g, x); });
  unary("global_avg_pool", random_tensor({2, 3, 3, 3}, rng), [](auto& g, Var x) { return ad::global_avg_pool(g, x); });
  unary("max_pool2d", random_tensor({1, 2, 4, 4}, rng), [](auto& g, Var x) { return ad::max_pool2d(g, x, 2, 2); });
  binary("concat", random_tensor({2, 3}, rng), random_tensor({2, 4}, rng),
         [](auto& g, Var a, Var b) { return ad::concat(g, std::vector<Var>{a, b}); });
  unary("slice_cols", random_tensor({3, 6}, rng), [](auto& g, Var x) { return ad::slice_cols(g, x, 2, 3); });
  unary("reshape", random_tensor({2, 6}, rng), [](auto& g, Var x) { return ad::reshape(g, x, Shape{3, 4}); });
  unary("sum", random_tensor({2, 3, 2}, rng), [](auto& g, Var x) { return ad::reshape(g, ad::sum(g, x), Shape{1}); });
  unary("mean", random_tensor({2, 3, 2}, rng), [](auto& g, Var x) { return ad::reshape(g, ad::mean(g, x), Shape{1}); });
  unary("cross_entropy", random_tensor({3, 4}, rng, -2.0, 2.0),
        [](auto& g, Var x) { return ad::cross_entropy(g, ad::softmax(g, x), std::vector<int>{0, 3, 1}); });
  unary("gather_cols", random_tensor({3, 4}, rng), [](auto& g, Var x) { return ad::gather_cols(g, x, {2, 0, 3}); });
  // Residuals on both sides of the quadratic/linear switch at |r| = 1.
  unary("huber", Tensor<double>(Shape{4}, std::vector<double>{0.3, -0.6, 1.8, -2.5}),
        [](auto& g, Var x) { return ad::huber(g, x, std::vector<double>{0.1, 0.2, -0.1, 0.0}); });

  {
    const AngleBinning binning(4, 3, 4);
    std::vector<BinnedPose> targets;
    for (int b = 0; b < 3; ++b) {
      targets.push_back(encode_bins(
          EulerPose::make(uniform(rng, -kPi, kPi), uniform(rng, -1.4, 1.4), uniform(rng, -kPi, kPi)), binning));
    }
    out.push_back(check_gradients(
        "pose_loss", {random_tensor({3, 2 * binning.total_bins()}, rng, -2.0, 2.0)},
        [&](Graph<double>& g, const std::vector<Var>& v) { return pose_loss(g, v[0], targets, binning); }, opt));
  }

  out.push_back(check_network(ShapeMode::point_cloud, seed, opt));
  out.push_back(check_network(ShapeMode::multi_view, seed, opt));
  return out;
}

}  // namespace poseforge
