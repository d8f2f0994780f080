#include "poseforge/autodiff/ops.hpp"

#include "poseforge/autodiff/gemm.hpp"

#include <cmath>
#include <memory>

namespace poseforge::ad {

namespace {

template <class T>
void require_same(const Graph<T>& g, Var a, Var b, const char* op) {
  if (g.shape(a) != g.shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(g.shape(a)) + " vs " +
                     shape_str(g.shape(b)));
  }
}

template <class T>
void require_rank(const Graph<T>& g, Var a, int rank, const char* op) {
  if (static_cast<int>(g.shape(a).size()) != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(g.shape(a)));
  }
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

}  // namespace

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  require_same(g, a, b, "add");
  Tensor<T> out = g.value(a);
  add_into(out, g.value(b));
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& go) {
    if (g.needs_grad(a)) add_into(g.accumulate(a), go);
    if (g.needs_grad(b)) add_into(g.accumulate(b), go);
  });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
  require_same(g, a, b, "sub");
  Tensor<T> out = g.value(a);
  const auto& bv = g.value(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& go) {
    if (g.needs_grad(a)) add_into(g.accumulate(a), go);
    if (g.needs_grad(b)) {
      auto& gb = g.accumulate(b);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= go[i];
    }
  });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  require_same(g, a, b, "mul");
  Tensor<T> out = g.value(a);
  const auto& bv = g.value(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& go) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (g.needs_grad(a)) {
      auto& ga = g.accumulate(a);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.needs_grad(b)) {
      auto& gb = g.accumulate(b);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

template <class T>
Var scale(Graph<T>& g, Var a, T factor) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.vec()) v *= factor;
  return g.record(std::move(out), {a}, [a, factor](Graph<T>& g, const Tensor<T>& go) {
    auto& ga = g.accumulate(a);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += factor * go[i];
  });
}

template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
  require_rank(g, a, 2, "matmul");
  require_rank(g, b, 2, "matmul");
  const int m = g.shape(a)[0], k = g.shape(a)[1], n = g.shape(b)[1];
  if (g.shape(b)[0] != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(g.shape(a)) + " x " +
                     shape_str(g.shape(b)));
  }
  Tensor<T> out(Shape{m, n});
  gemm_nn(m, n, k, g.value(a).data(), g.value(b).data(), out.data());
  return g.record(std::move(out), {a, b}, [a, b, m, n, k](Graph<T>& g, const Tensor<T>& go) {
    if (g.needs_grad(a)) gemm_nt(m, k, n, go.data(), g.value(b).data(), g.accumulate(a).data());
    if (g.needs_grad(b)) gemm_tn(k, n, m, g.value(a).data(), go.data(), g.accumulate(b).data());
  });
}

template <class T>
Var linear(Graph<T>& g, Var x, Var weight, Var bias) {
  require_rank(g, x, 2, "linear");
  require_rank(g, weight, 2, "linear");
  const int batch = g.shape(x)[0], in = g.shape(x)[1], out_dim = g.shape(weight)[1];
  if (g.shape(weight)[0] != in) {
    throw ShapeError("linear: input " + shape_str(g.shape(x)) + " vs weight " +
                     shape_str(g.shape(weight)));
  }
  if (g.shape(bias) != Shape{out_dim}) {
    throw ShapeError("linear: bias " + shape_str(g.shape(bias)) + " vs weight " +
                     shape_str(g.shape(weight)));
  }
  Tensor<T> out(Shape{batch, out_dim});
  const T* bv = g.value(bias).data();
  for (int r = 0; r < batch; ++r) std::copy(bv, bv + out_dim, out.data() + r * out_dim);
  gemm_nn(batch, out_dim, in, g.value(x).data(), g.value(weight).data(), out.data());
  return g.record(std::move(out), {x, weight, bias},
                  [x, weight, bias, batch, in, out_dim](Graph<T>& g, const Tensor<T>& go) {
                    if (g.needs_grad(x)) {
                      gemm_nt(batch, in, out_dim, go.data(), g.value(weight).data(),
                              g.accumulate(x).data());
                    }
                    if (g.needs_grad(weight)) {
                      gemm_tn(in, out_dim, batch, g.value(x).data(), go.data(),
                              g.accumulate(weight).data());
                    }
                    if (g.needs_grad(bias)) {
                      T* gb = g.accumulate(bias).data();
                      for (int r = 0; r < batch; ++r) {
                        const T* row = go.data() + r * out_dim;
                        for (int c = 0; c < out_dim; ++c) gb[c] += row[c];
                      }
                    }
                  });
}

template <class T>
Var conv2d(Graph<T>& g, Var x, Var weight, Var bias, Conv2dOptions opt) {
  require_rank(g, x, 4, "conv2d");
  require_rank(g, weight, 4, "conv2d");
  const auto& xs = g.shape(x);
  const auto& ws = g.shape(weight);
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int o = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != c) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " vs weight " + shape_str(ws));
  }
  if (opt.stride < 1 || opt.pad < 0) throw ShapeError("conv2d: bad stride/pad");
  const bool has_bias = bias.id >= 0;
  if (has_bias && g.shape(bias) != Shape{o}) {
    throw ShapeError("conv2d: bias " + shape_str(g.shape(bias)) + " vs weight " + shape_str(ws));
  }
  const int ho = (h + 2 * opt.pad - kh) / opt.stride + 1;
  const int wo = (w + 2 * opt.pad - kw) / opt.stride + 1;
  if (ho < 1 || wo < 1) {
    throw ShapeError("conv2d: kernel " + shape_str(ws) + " larger than input " + shape_str(xs));
  }
  const int patch = c * kh * kw;
  const int plane = ho * wo;
  const std::size_t cols_n = static_cast<std::size_t>(n) * plane;

  // cols[patch, n * plane]: one column per output pixel of the whole batch.
  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(patch) * cols_n, T(0));
  const T* xv = g.value(x).data();
  for (int ci = 0; ci < c; ++ci) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        T* row = cols->data() + static_cast<std::size_t>((ci * kh + i) * kw + j) * cols_n;
        for (int b = 0; b < n; ++b) {
          const T* src = xv + (static_cast<std::size_t>(b) * c + ci) * h * w;
          T* dst = row + static_cast<std::size_t>(b) * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * opt.stride + i - opt.pad;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * opt.stride + j - opt.pad;
              if (ix >= 0 && ix < w) dst[oy * wo + ox] = src[iy * w + ix];
            }
          }
        }
      }
    }
  }

  std::vector<T> flat(static_cast<std::size_t>(o) * cols_n, T(0));
  gemm_nn(o, static_cast<int>(cols_n), patch, g.value(weight).data(), cols->data(), flat.data());
  Tensor<T> out(Shape{n, o, ho, wo});
  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < o; ++oc) {
      const T bv = has_bias ? g.value(bias)[oc] : T(0);
      const T* src = flat.data() + static_cast<std::size_t>(oc) * cols_n +
                     static_cast<std::size_t>(b) * plane;
      T* dst = out.data() + (static_cast<std::size_t>(b) * o + oc) * plane;
      for (int p = 0; p < plane; ++p) dst[p] = src[p] + bv;
    }
  }

  return g.record(
      std::move(out), {x, weight, bias},
      [=](Graph<T>& g, const Tensor<T>& go) {
        std::vector<T> dflat(static_cast<std::size_t>(o) * cols_n);
        for (int b = 0; b < n; ++b) {
          for (int oc = 0; oc < o; ++oc) {
            const T* src = go.data() + (static_cast<std::size_t>(b) * o + oc) * plane;
            std::copy(src, src + plane,
                      dflat.data() + static_cast<std::size_t>(oc) * cols_n +
                          static_cast<std::size_t>(b) * plane);
          }
        }
        if (has_bias && g.needs_grad(bias)) {
          T* gb = g.accumulate(bias).data();
          for (int oc = 0; oc < o; ++oc) {
            const T* row = dflat.data() + static_cast<std::size_t>(oc) * cols_n;
            T s = T(0);
            for (std::size_t p = 0; p < cols_n; ++p) s += row[p];
            gb[oc] += s;
          }
        }
        if (g.needs_grad(weight)) {
          gemm_nt(o, patch, static_cast<int>(cols_n), dflat.data(), cols->data(),
                  g.accumulate(weight).data());
        }
        if (g.needs_grad(x)) {
          std::vector<T> dcols(static_cast<std::size_t>(patch) * cols_n, T(0));
          gemm_tn(patch, static_cast<int>(cols_n), o, g.value(weight).data(), dflat.data(),
                  dcols.data());
          T* gx = g.accumulate(x).data();
          for (int ci = 0; ci < c; ++ci) {
            for (int i = 0; i < kh; ++i) {
              for (int j = 0; j < kw; ++j) {
                const T* row =
                    dcols.data() + static_cast<std::size_t>((ci * kh + i) * kw + j) * cols_n;
                for (int b = 0; b < n; ++b) {
                  T* dst = gx + (static_cast<std::size_t>(b) * c + ci) * h * w;
                  const T* src = row + static_cast<std::size_t>(b) * plane;
                  for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * opt.stride + i - opt.pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                      const int ix = ox * opt.stride + j - opt.pad;
                      if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * wo + ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

template <class T>
Var batchnorm(Graph<T>& g, Var x, Var gamma, Var beta, BatchNormState<T>& state) {
  const auto& xs = g.shape(x);
  if (xs.size() != 2 && xs.size() != 4) {
    throw ShapeError("batchnorm: expected [B,C] or [B,C,H,W], got " + shape_str(xs));
  }
  const int batch = xs[0], channels = xs[1];
  const int inner = xs.size() == 4 ? xs[2] * xs[3] : 1;
  if (g.shape(gamma) != Shape{channels} || g.shape(beta) != Shape{channels} ||
      state.running_mean.shape() != Shape{channels}) {
    throw ShapeError("batchnorm: parameter shape " + shape_str(g.shape(gamma)) +
                     " does not match input " + shape_str(xs));
  }
  const bool train = g.training();
  if (train && batch < 2) {
    throw ShapeError("batchnorm: train mode needs batch size >= 2, got " + std::to_string(batch));
  }
  const std::size_t count = static_cast<std::size_t>(batch) * inner;
  const T* xv = g.value(x).data();
  const T* gv = g.value(gamma).data();
  const T* bv = g.value(beta).data();

  auto xhat = std::make_shared<Tensor<T>>(xs);
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  Tensor<T> out(xs);
  for (int ch = 0; ch < channels; ++ch) {
    T mu, var;
    if (train) {
      double s = 0.0;
      for (int b = 0; b < batch; ++b) {
        const T* p = xv + (static_cast<std::size_t>(b) * channels + ch) * inner;
        for (int k = 0; k < inner; ++k) s += p[k];
      }
      const double m = s / static_cast<double>(count);
      double sq = 0.0;
      for (int b = 0; b < batch; ++b) {
        const T* p = xv + (static_cast<std::size_t>(b) * channels + ch) * inner;
        for (int k = 0; k < inner; ++k) sq += (p[k] - m) * (p[k] - m);
      }
      mu = static_cast<T>(m);
      var = static_cast<T>(sq / static_cast<double>(count));
      const T unbiased = static_cast<T>(sq / static_cast<double>(count - 1));
      state.running_mean[ch] = state.momentum * state.running_mean[ch] + (T(1) - state.momentum) * mu;
      state.running_var[ch] =
          state.momentum * state.running_var[ch] + (T(1) - state.momentum) * unbiased;
    } else {
      mu = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const T is = T(1) / std::sqrt(var + state.eps);
    (*inv_std)[ch] = is;
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = (static_cast<std::size_t>(b) * channels + ch) * inner;
      for (int k = 0; k < inner; ++k) {
        const T xh = (xv[base + k] - mu) * is;
        (*xhat)[base + k] = xh;
        out[base + k] = gv[ch] * xh + bv[ch];
      }
    }
  }

  return g.record(std::move(out), {x, gamma, beta},
                  [=](Graph<T>& g, const Tensor<T>& go) {
                    const T* gv = g.value(gamma).data();
                    std::vector<T> sum_go(channels, T(0)), sum_go_xhat(channels, T(0));
                    for (int b = 0; b < batch; ++b) {
                      for (int ch = 0; ch < channels; ++ch) {
                        const std::size_t base = (static_cast<std::size_t>(b) * channels + ch) * inner;
                        for (int k = 0; k < inner; ++k) {
                          sum_go[ch] += go[base + k];
                          sum_go_xhat[ch] += go[base + k] * (*xhat)[base + k];
                        }
                      }
                    }
                    if (g.needs_grad(gamma)) {
                      T* gg = g.accumulate(gamma).data();
                      for (int ch = 0; ch < channels; ++ch) gg[ch] += sum_go_xhat[ch];
                    }
                    if (g.needs_grad(beta)) {
                      T* gb = g.accumulate(beta).data();
                      for (int ch = 0; ch < channels; ++ch) gb[ch] += sum_go[ch];
                    }
                    if (!g.needs_grad(x)) return;
                    T* gx = g.accumulate(x).data();
                    const T inv_count = T(1) / static_cast<T>(count);
                    for (int b = 0; b < batch; ++b) {
                      for (int ch = 0; ch < channels; ++ch) {
                        const std::size_t base = (static_cast<std::size_t>(b) * channels + ch) * inner;
                        const T k1 = gv[ch] * (*inv_std)[ch];
                        for (int k = 0; k < inner; ++k) {
                          if (train) {
                            gx[base + k] += k1 * (go[base + k] - inv_count * sum_go[ch] -
                                                  (*xhat)[base + k] * inv_count * sum_go_xhat[ch]);
                          } else {
                            gx[base + k] += k1 * go[base + k];
                          }
                        }
                      }
                    }
                  });
}

template <class T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.vec()) v = v > T(0) ? v : T(0);
  return g.record(std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>& go) {
    const auto& xv = g.value(x);
    auto& gx = g.accumulate(x);
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      if (xv[i] > T(0)) gx[i] += go[i];
    }
  });
}

template <class T>
Var tanh(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.vec()) v = std::tanh(v);
  auto saved = std::make_shared<Tensor<T>>(out);
  return g.record(std::move(out), {x}, [x, saved](Graph<T>& g, const Tensor<T>& go) {
    auto& gx = g.accumulate(x);
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      const T y = (*saved)[i];
      gx[i] += go[i] * (T(1) - y * y);
    }
  });
}

template <class T>
Var softmax(Graph<T>& g, Var x) {
  const auto& xs = g.shape(x);
  if (xs.empty()) throw ShapeError("softmax: scalar input");
  const int last = xs.back();
  const std::size_t rows = g.value(x).numel() / static_cast<std::size_t>(last);
  Tensor<T> out = g.value(x);
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * last;
    const T mx = *std::max_element(row, row + last);
    T total = T(0);
    for (int i = 0; i < last; ++i) {
      row[i] = std::exp(row[i] - mx);
      total += row[i];
    }
    for (int i = 0; i < last; ++i) row[i] /= total;
  }
  auto saved = std::make_shared<Tensor<T>>(out);
  return g.record(std::move(out), {x}, [x, saved, rows, last](Graph<T>& g, const Tensor<T>& go) {
    auto& gx = g.accumulate(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = saved->data() + r * last;
      const T* d = go.data() + r * last;
      T dot = T(0);
      for (int i = 0; i < last; ++i) dot += y[i] * d[i];
      T* dst = gx.data() + r * last;
      for (int i = 0; i < last; ++i) dst[i] += y[i] * (d[i] - dot);
    }
  });
}

template <class T>
Var global_max_pool(Graph<T>& g, Var x) {
  require_rank(g, x, 3, "global_max_pool");
  const int b = g.shape(x)[0], n = g.shape(x)[1], c = g.shape(x)[2];
  if (n < 1) throw ShapeError("global_max_pool: empty set");
  Tensor<T> out(Shape{b, c});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(b) * c, 0);
  const T* xv = g.value(x).data();
  for (int bi = 0; bi < b; ++bi) {
    const T* base = xv + static_cast<std::size_t>(bi) * n * c;
    for (int ch = 0; ch < c; ++ch) {
      int best = 0;
      T val = base[ch];
      for (int i = 1; i < n; ++i) {
        if (base[static_cast<std::size_t>(i) * c + ch] > val) {
          val = base[static_cast<std::size_t>(i) * c + ch];
          best = i;
        }
      }
      out[static_cast<std::size_t>(bi) * c + ch] = val;
      (*argmax)[static_cast<std::size_t>(bi) * c + ch] = best;
    }
  }
  return g.record(std::move(out), {x}, [x, argmax, b, n, c](Graph<T>& g, const Tensor<T>& go) {
    T* gx = g.accumulate(x).data();
    for (int bi = 0; bi < b; ++bi) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t o = static_cast<std::size_t>(bi) * c + ch;
        gx[(static_cast<std::size_t>(bi) * n + (*argmax)[o]) * c + ch] += go[o];
      }
    }
  });
}

template <class T>
Var global_avg_pool(Graph<T>& g, Var x) {
  require_rank(g, x, 4, "global_avg_pool");
  const auto& xs = g.shape(x);
  const int n = xs[0], c = xs[1], plane = xs[2] * xs[3];
  Tensor<T> out(Shape{n, c});
  const T* xv = g.value(x).data();
  for (int i = 0; i < n * c; ++i) {
    T s = T(0);
    for (int p = 0; p < plane; ++p) s += xv[static_cast<std::size_t>(i) * plane + p];
    out[i] = s / static_cast<T>(plane);
  }
  return g.record(std::move(out), {x}, [x, n, c, plane](Graph<T>& g, const Tensor<T>& go) {
    T* gx = g.accumulate(x).data();
    for (int i = 0; i < n * c; ++i) {
      const T v = go[i] / static_cast<T>(plane);
      for (int p = 0; p < plane; ++p) gx[static_cast<std::size_t>(i) * plane + p] += v;
    }
  });
}

template <class T>
Var max_pool2d(Graph<T>& g, Var x, int kernel, int stride) {
  require_rank(g, x, 4, "max_pool2d");
  const auto& xs = g.shape(x);
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  if (kernel < 1 || stride < 1 || kernel > h || kernel > w) {
    throw ShapeError("max_pool2d: kernel " + std::to_string(kernel) + " invalid for " + shape_str(xs));
  }
  const int ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  Tensor<T> out(Shape{n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const T* xv = g.value(x).data();
  std::size_t o = 0;
  for (int plane = 0; plane < n * c; ++plane) {
    const std::size_t base = static_cast<std::size_t>(plane) * h * w;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++o) {
        std::size_t best = base + static_cast<std::size_t>(oy * stride) * w + ox * stride;
        for (int i = 0; i < kernel; ++i) {
          for (int j = 0; j < kernel; ++j) {
            const std::size_t idx = base + static_cast<std::size_t>(oy * stride + i) * w + ox * stride + j;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        out[o] = xv[best];
        (*argmax)[o] = best;
      }
    }
  }
  return g.record(std::move(out), {x}, [x, argmax](Graph<T>& g, const Tensor<T>& go) {
    T* gx = g.accumulate(x).data();
    for (std::size_t i = 0; i < argmax->size(); ++i) gx[(*argmax)[i]] += go[i];
  });
}

template <class T>
Var concat(Graph<T>& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int rows = g.shape(parts[0]).at(0);
  std::vector<int> widths;
  int total = 0;
  for (Var p : parts) {
    require_rank(g, p, 2, "concat");
    if (g.shape(p)[0] != rows) {
      throw ShapeError("concat: row mismatch " + shape_str(g.shape(parts[0])) + " vs " +
                       shape_str(g.shape(p)));
    }
    widths.push_back(g.shape(p)[1]);
    total += widths.back();
  }
  Tensor<T> out(Shape{rows, total});
  int offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = g.value(parts[k]).data();
    for (int r = 0; r < rows; ++r) {
      std::copy(src + static_cast<std::size_t>(r) * widths[k],
                src + static_cast<std::size_t>(r + 1) * widths[k],
                out.data() + static_cast<std::size_t>(r) * total + offset);
    }
    offset += widths[k];
  }
  return g.record(std::move(out), parts,
                  [parts, widths, rows, total](Graph<T>& g, const Tensor<T>& go) {
                    int offset = 0;
                    for (std::size_t k = 0; k < parts.size(); ++k) {
                      if (g.needs_grad(parts[k])) {
                        T* dst = g.accumulate(parts[k]).data();
                        for (int r = 0; r < rows; ++r) {
                          const T* src = go.data() + static_cast<std::size_t>(r) * total + offset;
                          T* d = dst + static_cast<std::size_t>(r) * widths[k];
                          for (int i = 0; i < widths[k]; ++i) d[i] += src[i];
                        }
                      }
                      offset += widths[k];
                    }
                  });
}

template <class T>
Var slice_cols(Graph<T>& g, Var x, int start, int len) {
  require_rank(g, x, 2, "slice_cols");
  const int rows = g.shape(x)[0], cols = g.shape(x)[1];
  if (start < 0 || len < 1 || start + len > cols) {
    throw ShapeError("slice_cols: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") outside " + shape_str(g.shape(x)));
  }
  Tensor<T> out(Shape{rows, len});
  const T* xv = g.value(x).data();
  for (int r = 0; r < rows; ++r) {
    std::copy(xv + static_cast<std::size_t>(r) * cols + start,
              xv + static_cast<std::size_t>(r) * cols + start + len,
              out.data() + static_cast<std::size_t>(r) * len);
  }
  return g.record(std::move(out), {x}, [x, rows, cols, start, len](Graph<T>& g, const Tensor<T>& go) {
    T* gx = g.accumulate(x).data();
    for (int r = 0; r < rows; ++r) {
      for (int i = 0; i < len; ++i) {
        gx[static_cast<std::size_t>(r) * cols + start + i] += go[static_cast<std::size_t>(r) * len + i];
      }
    }
  });
}

template <class T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  Tensor<T> out = g.value(x).reshaped(std::move(shape));
  return g.record(std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>& go) {
    auto& gx = g.accumulate(x);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += go[i];
  });
}

template <class T>
Var sum(Graph<T>& g, Var x) {
  T s = T(0);
  for (T v : g.value(x).vec()) s += v;
  return g.record(Tensor<T>::scalar(s), {x}, [x](Graph<T>& g, const Tensor<T>& go) {
    auto& gx = g.accumulate(x);
    const T d = go[0];
    for (auto& v : gx.vec()) v += d;
  });
}

template <class T>
Var mean(Graph<T>& g, Var x) {
  const auto n = static_cast<T>(g.value(x).numel());
  if (g.value(x).numel() == 0) throw ShapeError("mean: empty tensor");
  T s = T(0);
  for (T v : g.value(x).vec()) s += v;
  return g.record(Tensor<T>::scalar(s / n), {x}, [x, n](Graph<T>& g, const Tensor<T>& go) {
    auto& gx = g.accumulate(x);
    const T d = go[0] / n;
    for (auto& v : gx.vec()) v += d;
  });
}

template <class T>
Var cross_entropy(Graph<T>& g, Var probs, const std::vector<int>& targets) {
  require_rank(g, probs, 2, "cross_entropy");
  const int rows = g.shape(probs)[0], classes = g.shape(probs)[1];
  if (static_cast<int>(targets.size()) != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_str(g.shape(probs)));
  }
  Tensor<T> out(Shape{rows});
  const T* pv = g.value(probs).data();
  const T floor = static_cast<T>(1e-12);
  for (int r = 0; r < rows; ++r) {
    if (targets[r] < 0 || targets[r] >= classes) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
    out[r] = -std::log(std::max(pv[static_cast<std::size_t>(r) * classes + targets[r]], floor));
  }
  return g.record(std::move(out), {probs},
                  [probs, targets, classes, floor](Graph<T>& g, const Tensor<T>& go) {
                    const T* pv = g.value(probs).data();
                    T* gp = g.accumulate(probs).data();
                    for (std::size_t r = 0; r < targets.size(); ++r) {
                      const std::size_t idx = r * classes + targets[r];
                      if (pv[idx] >= floor) gp[idx] -= go[r] / pv[idx];
                    }
                  });
}

template <class T>
Var gather_cols(Graph<T>& g, Var x, const std::vector<int>& index) {
  require_rank(g, x, 2, "gather_cols");
  const int rows = g.shape(x)[0], cols = g.shape(x)[1];
  if (static_cast<int>(index.size()) != rows) {
    throw ShapeError("gather_cols: " + std::to_string(index.size()) + " indices for " +
                     shape_str(g.shape(x)));
  }
  Tensor<T> out(Shape{rows});
  for (int r = 0; r < rows; ++r) {
    if (index[r] < 0 || index[r] >= cols) throw std::out_of_range("gather_cols: index out of range");
    out[r] = g.value(x)[static_cast<std::size_t>(r) * cols + index[r]];
  }
  return g.record(std::move(out), {x}, [x, index, cols](Graph<T>& g, const Tensor<T>& go) {
    T* gx = g.accumulate(x).data();
    for (std::size_t r = 0; r < index.size(); ++r) gx[r * cols + index[r]] += go[r];
  });
}

template <class T>
Var huber(Graph<T>& g, Var x, const std::vector<T>& target, T delta) {
  if (!(delta > T(0))) throw std::invalid_argument("huber: delta must be positive");
  if (target.size() != g.value(x).numel()) {
    throw ShapeError("huber: " + std::to_string(target.size()) + " targets for " +
                     shape_str(g.shape(x)));
  }
  Tensor<T> out = g.value(x);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T r = out[i] - target[i];
    out[i] = std::abs(r) <= delta ? T(0.5) * r * r : delta * (std::abs(r) - T(0.5) * delta);
  }
  return g.record(std::move(out), {x}, [x, target, delta](Graph<T>& g, const Tensor<T>& go) {
    const auto& xv = g.value(x);
    auto& gx = g.accumulate(x);
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      const T r = xv[i] - target[i];
      const T d = std::abs(r) <= delta ? r : (r > T(0) ? delta : -delta);
      gx[i] += go[i] * d;
    }
  });
}

double huber_value(double residual, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("huber: delta must be positive");
  const double a = std::abs(residual);
  return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

double cross_entropy_value(std::span<const double> probs, int target) {
  if (target < 0 || target >= static_cast<int>(probs.size())) {
    throw std::out_of_range("cross_entropy: target out of range");
  }
  return -std::log(std::max(probs[target], 1e-12));
}

#define POSEFORGE_INSTANTIATE_OPS(T)                                                     \
  template Var add<T>(Graph<T>&, Var, Var);                                              \
  template Var sub<T>(Graph<T>&, Var, Var);                                              \
  template Var mul<T>(Graph<T>&, Var, Var);                                              \
  template Var scale<T>(Graph<T>&, Var, T);                                              \
  template Var matmul<T>(Graph<T>&, Var, Var);                                           \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                                      \
  template Var conv2d<T>(Graph<T>&, Var, Var, Var, Conv2dOptions);                       \
  template Var batchnorm<T>(Graph<T>&, Var, Var, Var, BatchNormState<T>&);               \
  template Var relu<T>(Graph<T>&, Var);                                                  \
  template Var tanh<T>(Graph<T>&, Var);                                                  \
  template Var softmax<T>(Graph<T>&, Var);                                               \
  template Var global_max_pool<T>(Graph<T>&, Var);                                       \
  template Var global_avg_pool<T>(Graph<T>&, Var);                                       \
  template Var max_pool2d<T>(Graph<T>&, Var, int, int);                                  \
  template Var concat<T>(Graph<T>&, const std::vector<Var>&);                            \
  template Var slice_cols<T>(Graph<T>&, Var, int, int);                                  \
  template Var reshape<T>(Graph<T>&, Var, Shape);                                        \
  template Var sum<T>(Graph<T>&, Var);                                                   \
  template Var mean<T>(Graph<T>&, Var);                                                  \
  template Var cross_entropy<T>(Graph<T>&, Var, const std::vector<int>&);                \
  template Var gather_cols<T>(Graph<T>&, Var, const std::vector<int>&);                  \
  template Var huber<T>(Graph<T>&, Var, const std::vector<T>&, T);

POSEFORGE_INSTANTIATE_OPS(float)
POSEFORGE_INSTANTIATE_OPS(double)

}  // namespace poseforge::ad
