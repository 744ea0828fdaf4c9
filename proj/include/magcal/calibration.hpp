#pragma once

// End-to-end magnetometer calibration: initial estimate followed by
// maximum-likelihood refinement of all 34 parameters through the EKF
// one-step-ahead predictor.

#include "magcal/ekf.hpp"
#include "magcal/evaluation.hpp"
#include "magcal/init_estimation.hpp"
#include "magcal/optimizer.hpp"
#include "magcal/sensor_models.hpp"

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

namespace magcal {

struct SampleRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

struct CalibrationConfig {
  /// Stationary samples used for the noise/bias initialization; auto-detected
  /// when unset.
  std::optional<SampleRange> stationary;
  /// Keep every n-th sample for the ellipsoid fit and the likelihood.
  std::size_t decimation = 1;
  OptimizerConfig optimizer;
  EkfConfig ekf;
};

struct CalibrationDiagnostics {
  std::size_t stationary_samples = 0;
  bool nonstationary_warning = false;
  bool pd_projected = false;
  bool misalignment_converged = false;
  double misalignment_residual = 0.0;
  bool vertical_field_warning = false;
  bool field_clamped = false;
  /// m^n_x <= 0 after refinement: likely a failed calibration.
  bool field_sign_warning = false;
  std::size_t regularized_steps = 0;
};

struct CalibrationResult {
  CalibrationParams initial;
  CalibrationParams ml;
  InitialEstimate init_details;
  OptTrace trace;
  ResidualStats residuals;
  double cost_initial = 0.0;
  double cost_ml = 0.0;
  CalibrationDiagnostics diagnostics;
};

/// Initialization only (noise, ellipsoid, misalignment).
InitialEstimate initialize(const ImuDataset& data, const CalibrationConfig& config = {});

/// Initialization followed by likelihood maximization. Stage failures are
/// rethrown with the stage named in the message.
CalibrationResult calibrate(const ImuDataset& data, const CalibrationConfig& config = {});

/// Flips Cholesky columns so every diagonal entry is nonnegative; the
/// covariances are unchanged.
NoiseModel canonicalize(const NoiseModel& noise);

struct ValidationReport {
  ResidualStats residuals;
  std::vector<double> norms;
  double cost = 0.0;
};

/// Full-filter run at fixed parameters on (typically held-out) data.
ValidationReport validate_on(const ImuDataset& data, const CalibrationParams& params, const EkfConfig& cfg = {});

}  // namespace magcal
