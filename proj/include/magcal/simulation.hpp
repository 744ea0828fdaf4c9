#pragma once

// Monte Carlo study: random sensor/disturbance parameters, a stationary
// segment followed by full revolutions about each body axis, noisy
// measurements, and heading RMSE of the filter run with the initial and the
// maximum-likelihood estimates.

#include "magcal/calibration.hpp"
#include "magcal/sensor_models.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace magcal {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x);
/// Per-trial seed: splitmix64(master XOR index).
std::uint64_t trial_seed(std::uint64_t master, std::uint64_t index);

/// Uniform sampling ranges for the true parameters. Angles in degrees,
/// covariance entries are per-axis variances of diagonal matrices.
struct ParamRanges {
  double scale_lo = 0.5, scale_hi = 1.5;     // D_diag
  double skew_deg = 30.0;                    // zeta, eta, rho ~ U(-a, a)
  double rot_deg = 10.0;                     // psi, theta, phi ~ U(-a, a)
  double offset = 1.0;                       // o ~ U(-a, a)
  double gyro_bias = 1.0;                    // rad/s
  double gyro_var_lo = 1e-3, gyro_var_hi = 1e-2;
  double accel_var_lo = 1e-3, accel_var_hi = 1e-1;
  double mag_var_lo = 1e-3, mag_var_hi = 1e-1;

  static ParamRanges noise_free();
  /// All variances pinned at the lower end of the default ranges.
  static ParamRanges minimum_noise();
};

/// D_skew rows [1 0 0; sin z, cos z, 0; -sin e, cos e sin r, cos e cos r].
Matrix3 skew_matrix(double zeta, double eta, double rho);

CalibrationParams sample_true_params(Rng& rng, const ParamRanges& ranges = {}, double dip_deg = 71.2);

struct TrajectoryConfig {
  std::size_t stationary_samples = 100;
  std::size_t samples_per_axis = 100;  // one full revolution per axis
  std::size_t cycles = 1;              // x, y, z sweeps repeated
  double dt = 0.01;
  UnitQuaternion initial = UnitQuaternion::Identity();
};

struct Trajectory {
  std::vector<double> t;
  std::vector<UnitQuaternion> q_nb;
  std::vector<Vector3> omega;  // body rate over (t-1, t]

  std::size_t size() const { return t.size(); }
};

Trajectory generate_trajectory(const TrajectoryConfig& cfg = {});

struct SimScenario {
  CalibrationParams truth;
  Trajectory trajectory;
  std::uint64_t seed = 0;
};

/// Noise is drawn through the Cholesky factors of the scenario covariances.
ImuDataset generate_measurements(const SimScenario& scn, Rng& rng);

/// RMS of the heading component of q_est ⊙ q_ref^c, degrees, over samples
/// [skip, n).
double heading_rmse(std::span<const UnitQuaternion> q_est, std::span<const UnitQuaternion> q_ref,
                    std::size_t skip = 0);

struct SimulationConfig {
  ParamRanges ranges;
  double dip_deg = 71.2;
  TrajectoryConfig trajectory;
  std::size_t transient_samples = 50;
  CalibrationConfig calibration;
  /// Trials evaluated concurrently; 0 = all cores.
  unsigned threads = 1;
};

enum class TrialStatus { Success, Failed };

struct McRecord {
  std::uint64_t seed = 0;
  TrialStatus status = TrialStatus::Failed;
  std::string message;
  CalibrationParams truth;
  CalibrationParams initial;
  CalibrationParams ml;
  double rmse_init_deg = 0.0;
  double rmse_ml_deg = 0.0;
  double cost_init = 0.0;
  double cost_ml = 0.0;
  int iterations = 0;
  bool monotone = true;
};

SimScenario make_scenario(std::uint64_t seed, const SimulationConfig& cfg, Rng& rng);

McRecord run_trial(std::uint64_t seed, const SimulationConfig& cfg);

/// Trial i uses trial_seed(seed, i). Results are in trial order regardless of
/// thread count.
std::vector<McRecord> run_monte_carlo(std::size_t n, std::uint64_t seed, const SimulationConfig& cfg = {});

struct Quantiles {
  double p10 = 0.0, p25 = 0.0, median = 0.0, p75 = 0.0, p90 = 0.0;
};

/// Linear interpolation between order statistics. Throws DataError when empty.
double quantile(std::vector<double> values, double p);
Quantiles quantiles(const std::vector<double>& values);

struct McSummary {
  std::size_t trials = 0;
  std::size_t successes = 0;
  Quantiles rmse_init_deg;
  Quantiles rmse_ml_deg;
  /// Fraction of successful trials with rmse_ml <= rmse_init.
  double ml_not_worse_fraction = 0.0;
  bool all_monotone = true;
};

McSummary summarize_monte_carlo(std::span<const McRecord> records);

/// Stationary positions for the 90-degree heading protocol: for each of the
/// six faces (z up, z down, x up, x down, y up, y down) the sensor sits at
/// headings 0, 90, 180, 270, 0 deg, each for `samples_per_position` samples.
/// Each face carries a small random tilt below `max_tilt_deg`.
struct RotationProtocol {
  std::vector<std::string> labels;
  std::vector<std::vector<Matrix3>> orientations;  // R^nb per position
};

RotationProtocol ninety_degree_protocol(Rng& rng, double max_tilt_deg = 2.0);

/// Simulates each position and returns per-position means of accelerometer
/// and magnetometer samples.
std::vector<SegmentSequence> simulate_protocol(const RotationProtocol& protocol, const CalibrationParams& truth,
                                               std::size_t samples_per_position, Rng& rng);

}  // namespace magcal
