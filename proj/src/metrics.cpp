#include "poseforge/metrics.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace poseforge::metrics {

namespace {

void require_translations(const PosePair& pair) {
  if (pair.predicted.translation.has_value() != pair.truth.translation.has_value()) {
    throw std::invalid_argument("pose pair: translation present on one side only");
  }
  if (!pair.predicted.translation) {
    throw std::invalid_argument("ADD metrics need translations on both poses");
  }
}

}  // namespace

std::vector<double> rotation_errors(std::span<const PosePair> pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back(geodesic_distance(p.predicted.rotation, p.truth.rotation));
  }
  return out;
}

double acc_pi_6_from_errors(std::span<const double> errors_rad) {
  if (errors_rad.empty()) throw std::invalid_argument("acc_pi_6: empty input");
  const auto hits = std::count_if(errors_rad.begin(), errors_rad.end(),
                                  [](double e) { return e < kPi / 6.0; });
  return static_cast<double>(hits) / static_cast<double>(errors_rad.size());
}

double med_err_from_errors(std::span<const double> errors_rad) {
  if (errors_rad.empty()) throw std::invalid_argument("med_err: empty input");
  std::vector<double> sorted(errors_rad.begin(), errors_rad.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double mid = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return rad2deg(mid);
}

double acc_pi_6(std::span<const PosePair> pairs) {
  const auto errors = rotation_errors(pairs);
  return acc_pi_6_from_errors(errors);
}

double med_err(std::span<const PosePair> pairs) {
  const auto errors = rotation_errors(pairs);
  return med_err_from_errors(errors);
}

double add(const PosePair& pair, const PointCloud& points) {
  require_translations(pair);
  if (points.points.empty()) throw std::invalid_argument("ADD: empty point set");
  const Mat3& r = pair.truth.rotation;
  const Mat3& rh = pair.predicted.rotation;
  const Vec3& t = *pair.truth.translation;
  const Vec3& th = *pair.predicted.translation;
  const Vec3 dt = t - th;
  // Running mean: a constant per-point distance is returned bit-exactly.
  double mean = 0.0;
  std::size_t k = 0;
  for (const auto& x : points.points) {
    const double d = ((r * x - rh * x) + dt).norm();
    mean += (d - mean) / static_cast<double>(++k);
  }
  return mean;
}

double add_s(const PosePair& pair, const PointCloud& points) {
  require_translations(pair);
  if (points.points.empty()) throw std::invalid_argument("ADD-S: empty point set");
  const Vec3 dt = *pair.truth.translation - *pair.predicted.translation;
  std::vector<Vec3> truth, predicted;
  truth.reserve(points.points.size());
  predicted.reserve(points.points.size());
  for (const auto& x : points.points) {
    truth.push_back(pair.truth.rotation * x);
    predicted.push_back(pair.predicted.rotation * x);
  }
  // Same per-term arithmetic and aggregation as add(), so the x2 == x1
  // candidate reproduces add's term exactly and add_s <= add holds bitwise.
  double mean = 0.0;
  std::size_t k = 0;
  for (const auto& a : truth) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : predicted) best = std::min(best, ((a - b) + dt).norm());
    mean += (best - mean) / static_cast<double>(++k);
  }
  return mean;
}

double add_accuracy(std::span<const PosePair> pairs, std::span<const ShapeEntry> shapes) {
  if (pairs.empty()) throw std::invalid_argument("add_accuracy: empty input");
  if (pairs.size() != shapes.size()) {
    throw std::invalid_argument("add_accuracy: one shape entry per pair required");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& shape = shapes[i];
    if (!(shape.diameter > 0.0)) throw std::invalid_argument("add_accuracy: zero diameter");
    if (!shape.points) throw std::invalid_argument("add_accuracy: missing point set");
    const double dist =
        shape.symmetric ? add_s(pairs[i], *shape.points) : add(pairs[i], *shape.points);
    if (dist < 0.1 * shape.diameter) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace poseforge::metrics
