#pragma once

// Initial estimate of the calibration parameters:
//   1. bias and noise covariances from a stationary segment,
//   2. a trace-normalized ellipsoid fit of the raw magnetometer samples,
//      mapped to a lower-triangular D~ and offset o,
//   3. the rotation R_D between magnetometer and inertial axes plus the
//      vertical field component, from the invariance of <m, v> under rotation.

#include "magcal/ekf.hpp"
#include "magcal/sensor_models.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace magcal {

struct NoiseEstimate {
  NoiseModel noise;
  std::size_t samples = 0;
  bool nonstationary = false;
};

/// Sample mean of the gyroscope and sample covariances of all three
/// channels. Needs at least 50 samples.
NoiseEstimate initial_noise_estimates(const ImuDataset& stationary);

/// Length of the leading stationary segment: samples stay while the gyro
/// reading is within max(threshold, 6 sigma) of the mean of the first ten.
std::size_t detect_stationary_prefix(const ImuDataset& data, double threshold = 0.02);

/// y^T A y + b^T y + c = 0, scaled so that trace(A) = 1.
struct EllipsoidQuadric {
  Matrix3 A = Matrix3::Identity() / 3.0;
  Vector3 b = Vector3::Zero();
  double c = -1.0 / 3.0;
  bool pd_projected = false;
  /// |M xi| / sqrt(N) at the returned coefficients.
  double residual_rms = 0.0;

  double evaluate(const Vector3& y) const { return y.dot(A * y) + b.dot(y) + c; }
};

/// Least-squares quadric fit subject to trace(A) = 1, with a projection onto
/// the positive-definite cone when the unconstrained minimizer is indefinite.
/// Throws DataError when the samples cannot determine an ellipsoid.
EllipsoidQuadric fit_ellipsoid(std::span<const Vector3> mags);

struct RecoveredCalibration {
  Matrix3 D_tilde = Matrix3::Identity();  // lower triangular
  Vector3 o = Vector3::Zero();
};

/// o = -A^-1 b / 2, D~ D~^T = gamma A^-1 with gamma = b^T A^-1 b / 4 - c.
RecoveredCalibration recover_cal(const EllipsoidQuadric& q);

struct MisalignmentEstimate {
  Matrix3 R_D = Matrix3::Identity();
  double mz = 0.0;
  int iterations = 0;
  bool converged = false;
  bool vertical_field = false;
  double initial_objective = 0.0;
  double final_objective = 0.0;
};

/// Gauss-Newton over (R_D, m_z) minimizing
///   1/2 sum_t (m_z - v^T R^nb_t R_D^T D~^-1 (y_m,t - o))^2.
/// `inclination` must hold the filtered orientations of a magnetometer-free run.
MisalignmentEstimate estimate_misalignment(const ImuDataset& data, const EkfRun& inclination,
                                           const Matrix3& D_tilde, const Vector3& o);

struct InitialEstimate {
  CalibrationParams params;
  Matrix3 D_tilde = Matrix3::Identity();
  Matrix3 R_D = Matrix3::Identity();
  EllipsoidQuadric quadric;
  MisalignmentEstimate misalignment;
  std::size_t stationary_samples = 0;
  bool nonstationary = false;
  bool field_clamped = false;
};

/// D = D~ R_D, o, m^n from m_z and the noise estimates.
InitialEstimate build_initial(const NoiseModel& noise, const RecoveredCalibration& recovered,
                              const MisalignmentEstimate& misalignment);

}  // namespace magcal
