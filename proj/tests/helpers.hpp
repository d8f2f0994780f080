#pragma once

#include "poseforge/random.hpp"
#include "poseforge/rotcore.hpp"

#include <cmath>
#include <filesystem>
#include <string>

namespace testing {

using poseforge::Mat3;
using poseforge::Rng;
using poseforge::Vec3;

inline Vec3 random_axis(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

// Rodrigues' formula, written out independently of the library.
inline Mat3 rodrigues(const Vec3& axis, double phi) {
  Mat3 k;
  k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  return Mat3::Identity() + std::sin(phi) * k + (1.0 - std::cos(phi)) * k * k;
}

inline Mat3 random_rotation(Rng& rng) {
  return rodrigues(random_axis(rng), poseforge::uniform(rng, 0.0, poseforge::kPi));
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("poseforge_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
