#pragma once

#include "poseforge/autodiff/graph.hpp"

#include <vector>

// Differentiable primitives. Every op validates shapes and throws ShapeError
// with the offending shapes; the backward pass of each is checked against
// central finite differences in the test suite.
namespace poseforge::ad {

template <class T> Var add(Graph<T>& g, Var a, Var b);
template <class T> Var sub(Graph<T>& g, Var a, Var b);
template <class T> Var mul(Graph<T>& g, Var a, Var b);
template <class T> Var scale(Graph<T>& g, Var a, T factor);

/// [M,K] x [K,N] -> [M,N].
template <class T> Var matmul(Graph<T>& g, Var a, Var b);
/// x[B,in] W[in,out] + b[out].
template <class T> Var linear(Graph<T>& g, Var x, Var weight, Var bias);

struct Conv2dOptions {
  int stride = 1;
  int pad = 0;
};
/// x[N,C,H,W], weight[O,C,kh,kw], optional bias[O] (pass Var{} for none).
template <class T> Var conv2d(Graph<T>& g, Var x, Var weight, Var bias, Conv2dOptions opt);

/// Running statistics owned by a batchnorm layer.
template <class T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.9);
  T eps = T(1e-5);

  explicit BatchNormState(int channels = 0)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

/// Per-channel normalization over every axis but axis 1; accepts [B,C] and
/// [B,C,H,W]. Train mode (graph.training()) uses batch statistics and folds
/// them into `state` as running = momentum * running + (1 - momentum) * batch;
/// eval mode reads the running statistics.
template <class T>
Var batchnorm(Graph<T>& g, Var x, Var gamma, Var beta, BatchNormState<T>& state);

template <class T> Var relu(Graph<T>& g, Var x);
template <class T> Var tanh(Graph<T>& g, Var x);
/// Softmax over the last dimension.
template <class T> Var softmax(Graph<T>& g, Var x);

/// [B,N,C] -> [B,C], max over N. Ties go to the lowest index and only that
/// element receives gradient.
template <class T> Var global_max_pool(Graph<T>& g, Var x);
/// [N,C,H,W] -> [N,C].
template <class T> Var global_avg_pool(Graph<T>& g, Var x);
/// Square window, no padding.
template <class T> Var max_pool2d(Graph<T>& g, Var x, int kernel, int stride);

/// Concatenation of [B,D_i] blocks along axis 1.
template <class T> Var concat(Graph<T>& g, const std::vector<Var>& parts);
/// Columns [start, start+len) of a [B,D] tensor.
template <class T> Var slice_cols(Graph<T>& g, Var x, int start, int len);
template <class T> Var reshape(Graph<T>& g, Var x, Shape shape);

template <class T> Var sum(Graph<T>& g, Var x);
template <class T> Var mean(Graph<T>& g, Var x);

/// Per-row -log(max(p[target], 1e-12)) for probabilities [B,L] -> [B].
template <class T>
Var cross_entropy(Graph<T>& g, Var probs, const std::vector<int>& targets);
/// x[B,L] -> [B] picking column index[b] of each row.
template <class T> Var gather_cols(Graph<T>& g, Var x, const std::vector<int>& index);
/// Elementwise Huber loss of x - target.
template <class T>
Var huber(Graph<T>& g, Var x, const std::vector<T>& target, T delta = T(1));

/// Scalar helpers mirroring the op semantics, for tests and evaluation.
double huber_value(double residual, double delta = 1.0);
double cross_entropy_value(std::span<const double> probs, int target);

}  // namespace poseforge::ad
