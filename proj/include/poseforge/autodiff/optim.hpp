#pragma once

#include "poseforge/autodiff/tensor.hpp"

#include <cmath>
#include <span>
#include <stdexcept>

namespace poseforge::ad {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update per parameter, then zeroes the gradients.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, const AdamOptions& opt) {
  if (!(opt.lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  for (Parameter<T>* p : params) {
    ++p->step;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(p->step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(p->step));
    T* value = p->value.data();
    T* grad = p->grad.data();
    T* m = p->m.data();
    T* v = p->v.data();
    const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
    const T step_size = static_cast<T>(opt.lr / c1);
    const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
    const T eps = static_cast<T>(opt.eps);
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
      v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
      value[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps);
      grad[i] = T(0);
    }
  }
}

}  // namespace poseforge::ad
