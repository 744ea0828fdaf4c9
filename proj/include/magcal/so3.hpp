#pragma once

// Orientation algebra on SO(3).
//
// Conventions used throughout magcal:
//  * Quaternions are Hamilton (w-first, right-handed, ij = k), stored as
//    Eigen::Quaternion<Scalar>.
//  * q^nb rotates body-frame vectors into the navigation frame:
//    v^n = R(q^nb) v^b, and R^bn = R(q^nb)^T.
//  * Euler angles are ZYX: R^nb = Rz(heading) * Ry(pitch) * Rx(roll).

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace magcal {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Quat = Eigen::Quaternion<Scalar>;

using Vector3 = Vec3<double>;
using Matrix3 = Mat3<double>;
using UnitQuaternion = Quat<double>;

template <typename Scalar>
struct EulerAngles {
  Scalar roll{0};
  Scalar pitch{0};
  Scalar heading{0};
  // |pitch| within 1e-6 of pi/2; roll was fixed to 0 and folded into heading.
  bool gimbal{false};
};

template <typename Scalar>
Quat<Scalar> normalized(const Quat<Scalar>& q) {
  return Quat<Scalar>(q.coeffs() / q.coeffs().norm());
}

/// Hamilton product a ⊙ b, renormalized.
template <typename Scalar>
Quat<Scalar> quat_multiply(const Quat<Scalar>& a, const Quat<Scalar>& b) {
  return normalized<Scalar>(a * b);
}

template <typename Scalar>
Quat<Scalar> quat_conjugate(const Quat<Scalar>& q) {
  return Quat<Scalar>(q.w(), -q.x(), -q.y(), -q.z());
}

/// Rotation vector to unit quaternion. Below 1e-8 rad a second-order series
/// replaces the sin(|eta|/2)/|eta| ratio.
template <typename Scalar>
Quat<Scalar> exp_map(const Vec3<Scalar>& eta) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const Scalar sq = eta.squaredNorm();
  const Scalar angle = sqrt(sq);
  Scalar w;
  Scalar k;
  if (angle < Scalar(1e-8)) {
    w = Scalar(1) - sq / Scalar(8);
    k = Scalar(0.5) - sq / Scalar(48);
  } else {
    w = cos(angle / Scalar(2));
    k = sin(angle / Scalar(2)) / angle;
  }
  return normalized<Scalar>(Quat<Scalar>(w, k * eta.x(), k * eta.y(), k * eta.z()));
}

/// Inverse of exp_map for the rotation the quaternion represents, |eta| <= pi.
template <typename Scalar>
Vec3<Scalar> log_map(const Quat<Scalar>& q_in) {
  using std::atan2;
  Quat<Scalar> q = q_in;
  if (q.w() < Scalar(0)) q.coeffs() = -q.coeffs();
  const Vec3<Scalar> v = q.vec();
  const Scalar s = v.norm();
  if (s < Scalar(1e-12)) return Scalar(2) * v;
  return (Scalar(2) * atan2(s, q.w()) / s) * v;
}

template <typename Scalar>
Mat3<Scalar> quat_to_rotmat(const Quat<Scalar>& q) {
  return q.toRotationMatrix();
}

template <typename Scalar>
Quat<Scalar> rotmat_to_quat(const Mat3<Scalar>& r) {
  return normalized<Scalar>(Quat<Scalar>(r));
}

template <typename Scalar>
Mat3<Scalar> skew(const Vec3<Scalar>& v) {
  Mat3<Scalar> s;
  s << Scalar(0), -v.z(), v.y(),
       v.z(), Scalar(0), -v.x(),
       -v.y(), v.x(), Scalar(0);
  return s;
}

template <typename Scalar>
Mat3<Scalar> rot_x(Scalar a) {
  return Eigen::AngleAxis<Scalar>(a, Vec3<Scalar>::UnitX()).toRotationMatrix();
}
template <typename Scalar>
Mat3<Scalar> rot_y(Scalar a) {
  return Eigen::AngleAxis<Scalar>(a, Vec3<Scalar>::UnitY()).toRotationMatrix();
}
template <typename Scalar>
Mat3<Scalar> rot_z(Scalar a) {
  return Eigen::AngleAxis<Scalar>(a, Vec3<Scalar>::UnitZ()).toRotationMatrix();
}

template <typename Scalar>
Mat3<Scalar> euler_to_rotmat(Scalar roll, Scalar pitch, Scalar heading) {
  return rot_z(heading) * rot_y(pitch) * rot_x(roll);
}

template <typename Scalar>
Quat<Scalar> euler_to_quat(Scalar roll, Scalar pitch, Scalar heading) {
  return rotmat_to_quat<Scalar>(euler_to_rotmat(roll, pitch, heading));
}

template <typename Scalar>
EulerAngles<Scalar> rotmat_to_euler(const Mat3<Scalar>& r) {
  using std::asin;
  using std::atan2;
  using std::abs;
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  EulerAngles<Scalar> e;
  const Scalar sp = std::clamp(-r(2, 0), Scalar(-1), Scalar(1));
  e.pitch = asin(sp);
  if (abs(abs(e.pitch) - pi / Scalar(2)) < Scalar(1e-6)) {
    e.gimbal = true;
    e.roll = Scalar(0);
    e.heading = atan2(-r(0, 1), r(1, 1));
  } else {
    e.roll = atan2(r(2, 1), r(2, 2));
    e.heading = atan2(r(1, 0), r(0, 0));
  }
  if (e.heading <= -pi) e.heading += Scalar(2) * pi;
  return e;
}

/// ZYX Euler angles of q; heading in (-pi, pi].
template <typename Scalar>
EulerAngles<Scalar> quat_to_euler(const Quat<Scalar>& q) {
  return rotmat_to_euler<Scalar>(quat_to_rotmat(q));
}

/// Rotation angle between two orientations, radians in [0, pi].
template <typename Scalar>
Scalar rotation_angle(const Mat3<Scalar>& a, const Mat3<Scalar>& b) {
  return log_map<Scalar>(rotmat_to_quat<Scalar>(a.transpose() * b)).norm();
}

/// Wraps an angle into (-pi, pi].
template <typename Scalar>
Scalar wrap_pi(Scalar a) {
  using std::remainder;
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  Scalar r = remainder(a, Scalar(2) * pi);
  if (r <= -pi) r += Scalar(2) * pi;
  return r;
}

template <typename Scalar>
constexpr Scalar deg2rad(Scalar d) { return d * std::numbers::pi_v<Scalar> / Scalar(180); }
template <typename Scalar>
constexpr Scalar rad2deg(Scalar r) { return r * Scalar(180) / std::numbers::pi_v<Scalar>; }

}  // namespace magcal
