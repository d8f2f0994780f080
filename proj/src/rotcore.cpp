#include "poseforge/rotcore.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace poseforge {

double wrap_angle(double rad) {
  double w = std::fmod(rad + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  w -= kPi;
  // fmod can land exactly on the excluded endpoint after the shift.
  if (w >= kPi) w -= 2.0 * kPi;
  return w;
}

EulerPose EulerPose::make(double azi, double ele, double inp) {
  if (!std::isfinite(azi) || !std::isfinite(ele) || !std::isfinite(inp)) {
    throw std::invalid_argument("EulerPose: non-finite angle");
  }
  if (ele < -kPi / 2.0 || ele > kPi / 2.0) {
    throw std::invalid_argument("EulerPose: elevation " + std::to_string(ele) +
                                " outside [-pi/2, pi/2]");
  }
  return {wrap_angle(azi), ele, wrap_angle(inp)};
}

EulerPose EulerPose::from_degrees(double azi, double ele, double inp) {
  return make(deg2rad(azi), deg2rad(ele), deg2rad(inp));
}

bool EulerPose::valid() const {
  return std::isfinite(azi) && std::isfinite(ele) && std::isfinite(inp) &&
         azi >= -kPi && azi < kPi && inp >= -kPi && inp < kPi &&
         ele >= -kPi / 2.0 && ele <= kPi / 2.0;
}

Mat3 rot_x(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}

Mat3 rot_y(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}

Mat3 rot_z(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

Mat3 axis_angle(const Vec3& axis, double rad) {
  return Eigen::AngleAxisd(rad, axis.normalized()).toRotationMatrix();
}

Mat3 euler_to_matrix(const EulerPose& pose) {
  return rot_z(pose.inp) * rot_x(pose.ele) * rot_y(-pose.azi);
}

bool is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  const Mat3 gram = r.transpose() * r;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

EulerPose matrix_to_euler(const Mat3& r) {
  if (!is_rotation(r, 1e-6)) {
    throw std::invalid_argument("matrix_to_euler: not a rotation matrix");
  }
  // Third row is (cos ele sin azi, sin ele, cos ele cos azi).
  const double horiz = std::hypot(r(2, 0), r(2, 2));
  const double ele = std::atan2(r(2, 1), horiz);
  if (horiz < std::sin(1e-9)) {
    const double pole = ele > 0.0 ? kPi / 2.0 : -kPi / 2.0;
    // With inp = 0 the first row is (cos azi, 0, -sin azi).
    return {wrap_angle(std::atan2(-r(0, 2), r(0, 0))), pole, 0.0};
  }
  const double azi = std::atan2(r(2, 0), r(2, 2));
  const double inp = std::atan2(-r(0, 1), r(1, 1));
  return {wrap_angle(azi), ele, wrap_angle(inp)};
}

double geodesic_distance(const Mat3& r1, const Mat3& r2) {
  const Mat3 rel = r1.transpose() * r2;
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Vec3 v(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0),
               rel(1, 0) - rel(0, 1));
  const double s = std::min(v.norm() / 2.0, 1.0);
  // atan2 keeps full precision near 0 and pi where acos alone does not.
  return std::atan2(s, c);
}

EulerPose shift_azimuth(const EulerPose& pose, double alpha) {
  return {wrap_angle(pose.azi - alpha), pose.ele, pose.inp};
}

AngleBinning::AngleBinning(int bins_azi, int bins_ele, int bins_inp)
    : counts_{bins_azi, bins_ele, bins_inp} {
  for (int c : counts_) {
    if (c < 1) throw std::invalid_argument("AngleBinning: bin count must be >= 1");
  }
}

AngleRange AngleBinning::range(Angle a) const {
  if (a == Angle::ele) return {-kPi / 2.0, kPi / 2.0};
  return {-kPi, kPi};
}

double AngleBinning::bin_width(Angle a) const {
  return range(a).width() / bins(a);
}

double AngleBinning::bin_center(Angle a, int label) const {
  return range(a).lo + (label + 0.5) * range(a).width() / bins(a);
}

double encode_angle(double value, Angle a, const AngleBinning& binning,
                    int* label) {
  const AngleRange r = binning.range(a);
  const int n = binning.bins(a);
  double t = (value - r.lo) / r.width() * n;
  const double nearest = std::round(t);
  if (std::abs(t - nearest) < 1e-12) t = nearest;
  int k = static_cast<int>(std::floor(t));
  k = std::clamp(k, 0, n - 1);
  *label = k;
  return 2.0 * (t - k) - 1.0;
}

BinnedPose encode_bins(const EulerPose& pose, const AngleBinning& binning) {
  BinnedPose out;
  const auto values = pose.as_array();
  for (int i = 0; i < 3; ++i) {
    out.offset[i] =
        encode_angle(values[i], static_cast<Angle>(i), binning, &out.label[i]);
  }
  return out;
}

double decode_angle(int label, double offset, Angle a,
                    const AngleBinning& binning) {
  const AngleRange r = binning.range(a);
  const double t = label + 0.5 + offset / 2.0;
  const double value = r.lo + t * r.width() / binning.bins(a);
  if (a == Angle::ele) return std::clamp(value, r.lo, r.hi);
  return wrap_angle(value);
}

EulerPose decode_bins(const BinnedPose& binned, const AngleBinning& binning) {
  return {decode_angle(binned.label[0], binned.offset[0], Angle::azi, binning),
          decode_angle(binned.label[1], binned.offset[1], Angle::ele, binning),
          decode_angle(binned.label[2], binned.offset[2], Angle::inp, binning)};
}

}  // namespace poseforge
