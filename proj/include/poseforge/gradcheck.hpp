#pragma once

#include "poseforge/autodiff/graph.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace poseforge {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double eps = 1e-6;
  double tolerance = 1e-4;
  /// Relative errors are |a - n| / max(|a|, |n|, floor), so entries that are
  /// zero up to rounding are compared absolutely.
  double floor = 1e-3;
};

using GraphFn = std::function<ad::Var(ad::Graph<double>&, const std::vector<ad::Var>&)>;

/// Central differences of the scalar produced by `fn` against backward(),
/// over every element of every input.
GradCheckResult check_gradients(const std::string& name, std::vector<ad::Tensor<double>> inputs,
                                const GraphFn& fn, const GradCheckOptions& opt = {}, bool training = true);

/// Every primitive plus the composed pose network in both shape modes.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& opt = {});

}  // namespace poseforge
