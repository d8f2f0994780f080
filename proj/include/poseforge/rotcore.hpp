#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <numbers>

namespace poseforge {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

constexpr double kPi = std::numbers::pi;

inline constexpr double deg2rad(double deg) { return deg * (kPi / 180.0); }
inline constexpr double rad2deg(double rad) { return rad * (180.0 / kPi); }

/// Wraps an angle into [-pi, pi). wrap_angle(pi) == -pi.
double wrap_angle(double rad);

/// Camera orientation relative to the shape frame, in radians.
///
/// azi and inp live in [-pi, pi), ele in [-pi/2, pi/2]. The factory
/// `EulerPose::make` wraps azi/inp and rejects out-of-range elevations.
struct EulerPose {
  double azi = 0.0;
  double ele = 0.0;
  double inp = 0.0;

  static EulerPose make(double azi, double ele, double inp);
  static EulerPose from_degrees(double azi, double ele, double inp);

  bool valid() const;
  std::array<double, 3> as_array() const { return {azi, ele, inp}; }
};

// Elementary right-handed rotations.
Mat3 rot_x(double rad);
Mat3 rot_y(double rad);
Mat3 rot_z(double rad);

/// Rodrigues rotation about a (not necessarily unit) axis.
Mat3 axis_angle(const Vec3& axis, double rad);

/// World-to-camera rotation R = Rz(inp) * Rx(ele) * Ry(-azi).
///
/// World up is +Y. The camera looks along its own -Z toward the origin and
/// sits at R^T * (0, 0, distance), so positive elevation is above the
/// horizontal plane and azimuth increases from +Z toward +X.
Mat3 euler_to_matrix(const EulerPose& pose);

/// Inverse of euler_to_matrix. At gimbal lock (|ele| = pi/2 within 1e-9)
/// returns the representative with inp = 0. Throws std::invalid_argument
/// when r is not a rotation within 1e-6.
EulerPose matrix_to_euler(const Mat3& r);

bool is_rotation(const Mat3& r, double tol);

/// Angle of r1^T r2, in [0, pi].
double geodesic_distance(const Mat3& r1, const Mat3& r2);

/// Returns pose with azi replaced by wrap(azi - alpha).
EulerPose shift_azimuth(const EulerPose& pose, double alpha);

enum class Angle { azi = 0, ele = 1, inp = 2 };

struct AngleRange {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

/// Uniform per-angle bin layout.
class AngleBinning {
 public:
  AngleBinning() : AngleBinning(24, 12, 24) {}
  AngleBinning(int bins_azi, int bins_ele, int bins_inp);

  int bins(Angle a) const { return counts_[static_cast<int>(a)]; }
  int total_bins() const { return counts_[0] + counts_[1] + counts_[2]; }
  AngleRange range(Angle a) const;
  double bin_width(Angle a) const;
  double bin_center(Angle a, int label) const;

  bool operator==(const AngleBinning&) const = default;

 private:
  std::array<int, 3> counts_;
};

struct BinnedPose {
  std::array<int, 3> label{};
  std::array<double, 3> offset{};
};

/// Bin k covers [lo + k w, lo + (k+1) w); the offset is measured from the
/// bin centre in half-widths. Elevation +pi/2 folds into the last bin with
/// offset +1.
BinnedPose encode_bins(const EulerPose& pose, const AngleBinning& binning);
double encode_angle(double value, Angle a, const AngleBinning& binning,
                    int* label);

EulerPose decode_bins(const BinnedPose& binned, const AngleBinning& binning);
double decode_angle(int label, double offset, Angle a,
                    const AngleBinning& binning);

}  // namespace poseforge
