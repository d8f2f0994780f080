#pragma once

#include "poseforge/rotcore.hpp"
#include "poseforge/shapecore.hpp"

#include <optional>
#include <span>
#include <vector>

namespace poseforge::metrics {

struct RigidPose {
  Mat3 rotation = Mat3::Identity();
  std::optional<Vec3> translation;
};

struct PosePair {
  RigidPose predicted;
  RigidPose truth;
};

/// Geodesic rotation error of each pair, radians.
std::vector<double> rotation_errors(std::span<const PosePair> pairs);

/// Fraction of errors strictly below pi/6.
double acc_pi_6_from_errors(std::span<const double> errors_rad);
/// Median in degrees; even counts average the two central values.
double med_err_from_errors(std::span<const double> errors_rad);

double acc_pi_6(std::span<const PosePair> pairs);
double med_err(std::span<const PosePair> pairs);

/// Mean distance between corresponding model points under the two poses.
double add(const PosePair& pair, const PointCloud& points);
/// Mean closest-point distance: for each ground-truth point, the nearest
/// predicted point.
double add_s(const PosePair& pair, const PointCloud& points);

struct ShapeEntry {
  const PointCloud* points = nullptr;
  double diameter = 0.0;
  bool symmetric = false;
};

/// Fraction of pairs whose ADD (ADD-S for symmetric shapes) is strictly
/// below 0.1 * diameter.
double add_accuracy(std::span<const PosePair> pairs, std::span<const ShapeEntry> shapes);

}  // namespace poseforge::metrics
