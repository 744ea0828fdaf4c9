#pragma once

// Measurement models for gyroscope, accelerometer and magnetometer, the
// parameter containers they depend on, and the 34-element parameter codec.
//
// Navigation frame: x towards local magnetic north, z up. Gravity is
// g^n = (0, 0, -9.81) m/s^2, so a level sensor reads +9.81 on its z axis and
// a northern-hemisphere field has a negative vertical component.

#include "magcal/so3.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

namespace magcal {

inline constexpr double kGravity = 9.81;
inline constexpr int kParamCount = 34;

using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;
using ParamVector = Eigen::Matrix<double, kParamCount, 1>;

template <typename Scalar>
Vec3<Scalar> gravity_nav() {
  return Vec3<Scalar>(Scalar(0), Scalar(0), Scalar(-kGravity));
}

/// Magnetometer distortion: y_m = D R^bn m^n + o (+ noise). D maps the
/// unit-norm field into raw sensor units; o is in raw units.
struct MagCalibration {
  Matrix3 D = Matrix3::Identity();
  Vector3 o = Vector3::Zero();

  /// Throws DataError when |det D| < 1e-12 * |D|_F^3.
  void validate() const;
  bool invertible() const;
};

/// Local field parametrized by the dip angle: m^n = (cos d, 0, -sin d).
struct LocalField {
  double dip = 0.0;

  Vector3 vector() const;
  double vertical() const { return vector().z(); }
};

LocalField field_from_dip(double dip);

/// m^n = (sqrt(1 - mz^2), 0, mz) with |mz| clamped to 1 - 1e-9. `clamped`
/// receives whether the clamp fired.
LocalField field_from_vertical(double mz, bool* clamped = nullptr);

/// Gyroscope bias and the three noise covariances, each kept as a
/// lower-triangular Cholesky factor so Sigma = L L^T is always PSD.
struct NoiseModel {
  Vector3 gyro_bias = Vector3::Zero();
  Matrix3 gyro_chol = Matrix3::Zero();
  Matrix3 accel_chol = Matrix3::Zero();
  Matrix3 mag_chol = Matrix3::Zero();

  Matrix3 gyro_cov() const { return gyro_chol * gyro_chol.transpose(); }
  Matrix3 accel_cov() const { return accel_chol * accel_chol.transpose(); }
  Matrix3 mag_cov() const { return mag_chol * mag_chol.transpose(); }

  static NoiseModel from_covariances(const Vector3& bias, const Matrix3& gyro, const Matrix3& accel,
                                     const Matrix3& mag);
};

struct CalibrationParams {
  MagCalibration mag;
  LocalField field;
  NoiseModel noise;
};

struct ImuSample {
  double t = 0.0;
  Vector3 gyro = Vector3::Zero();   // rad/s
  Vector3 accel = Vector3::Zero();  // m/s^2
  Vector3 mag = Vector3::Zero();    // raw magnetometer units
};

struct ImuDataset {
  std::vector<ImuSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  const ImuSample& operator[](std::size_t i) const { return samples[i]; }

  /// Throws DataError on an empty set, non-finite values or timestamps that
  /// are not strictly increasing.
  void validate() const;
  /// Samples [begin, end).
  ImuDataset slice(std::size_t begin, std::size_t end) const;
  /// Every `factor`-th sample.
  ImuDataset decimate(std::size_t factor) const;
};

/// D R^bn m^n + o.
template <typename Scalar>
Vec3<Scalar> model_mag(const Mat3<Scalar>& R_bn, const Mat3<Scalar>& D, const Vec3<Scalar>& o,
                       const Vec3<Scalar>& m_n) {
  return D * (R_bn * m_n) + o;
}

inline Vector3 model_mag(const Matrix3& R_bn, const MagCalibration& cal, const LocalField& field) {
  return model_mag<double>(R_bn, cal.D, cal.o, field.vector());
}

/// Specific force of a non-accelerating sensor: -R^bn g^n.
template <typename Scalar>
Vec3<Scalar> model_accel(const Mat3<Scalar>& R_bn) {
  return -(R_bn * gravity_nav<Scalar>());
}

inline Vector3 correct_gyro(const Vector3& y_gyro, const NoiseModel& noise) {
  return y_gyro - noise.gyro_bias;
}

/// D^-1 (y_m - o). Throws DataError for a singular D.
Vector3 apply_calibration(const Vector3& y_mag, const MagCalibration& cal);

/// Cholesky factor of a symmetric PSD matrix. Pivots at or below zero give a
/// zero column instead of failing, so semidefinite input is accepted.
Matrix3 cholesky_psd(const Matrix3& sigma);

/// Layout: [vec(D) column-major 9 | o 3 | dip 1 | gyro bias 3 |
///          chol(Sigma_gyro) 6 | chol(Sigma_accel) 6 | chol(Sigma_mag) 6],
/// each Cholesky block stored row-wise as (L00, L10, L11, L20, L21, L22).
ParamVector pack_params(const CalibrationParams& params);
CalibrationParams unpack_params(const ParamVector& v);
/// Throws DataError when v.size() != 34.
CalibrationParams unpack_params(std::span<const double> v);

}  // namespace magcal
