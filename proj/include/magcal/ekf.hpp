#pragma once

// Multiplicative EKF over a 3-dim orientation deviation.
//
// The filter keeps a reference quaternion q^nb and a deviation eta with
// q_true = q ⊙ exp_map(eta) (deviation expressed in the body frame). After
// each measurement update eta is folded into q and reset to zero. The gyro
// sample at index t is the body rate over (t-1, t]. The
// one-step-ahead predictions and innovation covariances it produces define
// the negative log-likelihood
//
//   V(theta) = 1/2 sum_t ( |y_t - yhat_t|^2_{S_t^-1} + log det S_t ).

#include "magcal/sensor_models.hpp"

#include <cstddef>
#include <vector>

namespace magcal {

struct EkfConfig {
  bool use_magnetometer = true;
  /// Prior on (roll, pitch, heading) deviation, rad^2.
  Matrix3 initial_orientation_cov = default_initial_cov();
  double regularization_floor = 1e-12;
  /// Keep per-step predictions, covariances and orientations.
  bool store_history = true;

  static Matrix3 default_initial_cov();
};

struct EkfRun {
  /// 6 when the magnetometer is used, 3 otherwise; unused rows/cols are zero.
  int measurement_dim = 6;
  std::vector<Vector6> predicted;       // yhat_{t|t-1}
  std::vector<Matrix6> innovation_cov;  // S_t
  std::vector<UnitQuaternion> orientations;  // filtered q^nb_t
  double neg_log_lik = 0.0;
  std::size_t regularized_steps = 0;
};

/// Runs the filter over the whole dataset. Throws DataError for invalid data
/// and NumericalError (carrying the step index) when the cost goes
/// non-finite.
EkfRun ekf_run(const ImuDataset& data, const CalibrationParams& params, const EkfConfig& cfg = {});

/// Negative log-likelihood only. Returns +inf instead of throwing on
/// numerical failure so line searches can reject the point.
double nll_cost(const ImuDataset& data, const CalibrationParams& params, const EkfConfig& cfg = {});

/// Measurement stacked the way the filter sees it: (y_a; y_m) or y_a alone.
Vector6 stacked_measurement(const ImuSample& s, int measurement_dim);

/// Roll and pitch from a specific-force sample, heading zero.
UnitQuaternion orientation_from_accel(const Vector3& accel);

}  // namespace magcal
