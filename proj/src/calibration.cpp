#include "magcal/calibration.hpp"

#include "magcal/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <string>

namespace magcal {

namespace {

// Whitened scatter variance a direction must reach. Pure noise gives 1; the
// simulated noise ranges reach down to about 1.2 for full rotation coverage.
constexpr double kMinCoverageRatio = 1.15;

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const DataError& e) {
    throw DataError(std::string(name) + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(name) + ": " + e.what());
  }
}

Matrix3 flip_columns(const Matrix3& L) {
  Matrix3 out = L;
  for (int j = 0; j < 3; ++j)
    if (out(j, j) < 0.0) out.col(j) = -out.col(j);
  return out;
}

// Rejects data whose magnetometer scatter, whitened by the stationary noise
// covariance, is noise-sized in some direction (e.g. a stationary-only log).
void require_coverage(const std::vector<Vector3>& mags, const Matrix3& noise_cov) {
  if (mags.size() < 2) return;
  Vector3 mean = Vector3::Zero();
  for (const auto& y : mags) mean += y;
  mean /= static_cast<double>(mags.size());
  Matrix3 scatter = Matrix3::Zero();
  for (const auto& y : mags) scatter += (y - mean) * (y - mean).transpose();
  scatter /= static_cast<double>(mags.size() - 1);
  const Matrix3 reg = noise_cov + 1e-12 * Matrix3::Identity();
  const Eigen::LLT<Matrix3> llt(reg);
  if (llt.info() != Eigen::Success) return;
  const Matrix3 Linv = llt.matrixL().solve(Matrix3::Identity());
  const Matrix3 whitened = Linv * scatter * Linv.transpose();
  const double weakest = Eigen::SelfAdjointEigenSolver<Matrix3>(whitened).eigenvalues().minCoeff();
  if (weakest < kMinCoverageRatio)
    throw DataError("calibration impossible: magnetometer samples barely exceed the sensor noise in some direction; "
                    "rotate the sensor in all possible orientations");
}

}  // namespace

NoiseModel canonicalize(const NoiseModel& noise) {
  NoiseModel out = noise;
  out.gyro_chol = flip_columns(noise.gyro_chol);
  out.accel_chol = flip_columns(noise.accel_chol);
  out.mag_chol = flip_columns(noise.mag_chol);
  return out;
}

InitialEstimate initialize(const ImuDataset& data, const CalibrationConfig& config) {
  stage("input", [&] { data.validate(); });

  const NoiseEstimate noise = stage("noise initialization", [&] {
    SampleRange range;
    if (config.stationary) {
      range = *config.stationary;
      if (range.end > data.size() || range.begin >= range.end)
        throw DataError("stationary range " + std::to_string(range.begin) + ":" + std::to_string(range.end) +
                        " is outside the dataset of " + std::to_string(data.size()) + " samples");
    } else {
      range = {0, detect_stationary_prefix(data)};
    }
    return initial_noise_estimates(data.slice(range.begin, range.end));
  });

  const ImuDataset work = data.decimate(config.decimation);

  EllipsoidQuadric quadric;
  const RecoveredCalibration recovered = stage("ellipsoid fit", [&] {
    std::vector<Vector3> mags;
    mags.reserve(work.size());
    for (const auto& s : work.samples) mags.push_back(s.mag);
    require_coverage(mags, noise.noise.mag_cov());
    quadric = fit_ellipsoid(mags);
    return recover_cal(quadric);
  });

  const MisalignmentEstimate misalignment = stage("misalignment", [&] {
    CalibrationParams incl;
    incl.noise = noise.noise;
    EkfConfig cfg = config.ekf;
    cfg.use_magnetometer = false;
    cfg.store_history = true;
    const EkfRun run = ekf_run(work, incl, cfg);
    return estimate_misalignment(work, run, recovered.D_tilde, recovered.o);
  });

  InitialEstimate init = build_initial(noise.noise, recovered, misalignment);
  init.quadric = quadric;
  init.nonstationary = noise.nonstationary;
  init.stationary_samples = noise.samples;
  return init;
}

CalibrationResult calibrate(const ImuDataset& data, const CalibrationConfig& config) {
  CalibrationResult result;
  result.init_details = initialize(data, config);
  result.initial = result.init_details.params;

  const ImuDataset work = data.decimate(config.decimation);
  EkfConfig cost_cfg = config.ekf;
  cost_cfg.use_magnetometer = true;

  const CostFunction cost = [&](const Eigen::VectorXd& v) {
    return nll_cost(work, unpack_params(ParamVector(v)), cost_cfg);
  };

  const MinimizeResult opt = stage("maximum likelihood", [&] {
    return minimize(cost, pack_params(result.initial), config.optimizer);
  });

  CalibrationParams ml = unpack_params(ParamVector(opt.x));
  ml.noise = canonicalize(ml.noise);
  result.ml = ml;
  result.trace = opt.trace;
  result.cost_initial = opt.trace.initial_cost;
  result.cost_ml = opt.trace.final_cost;

  const EkfRun final_run = stage("final filter run", [&] { return ekf_run(work, ml, cost_cfg); });
  result.residuals = residual_stats(final_run, work);

  auto& d = result.diagnostics;
  const auto& init = result.init_details;
  d.stationary_samples = init.stationary_samples;
  d.nonstationary_warning = init.nonstationary;
  d.pd_projected = init.quadric.pd_projected;
  d.misalignment_converged = init.misalignment.converged;
  d.misalignment_residual = init.misalignment.final_objective;
  d.vertical_field_warning = init.misalignment.vertical_field;
  d.field_clamped = init.field_clamped;
  d.field_sign_warning = !(ml.field.vector().x() > 0.0);
  d.regularized_steps = final_run.regularized_steps;
  return result;
}

ValidationReport validate_on(const ImuDataset& data, const CalibrationParams& params, const EkfConfig& cfg) {
  data.validate();
  params.mag.validate();
  const bool has_mag = std::any_of(data.samples.begin(), data.samples.end(),
                                   [](const ImuSample& s) { return s.mag.squaredNorm() > 0.0; });
  if (!has_mag) throw DataError("dataset has no magnetometer measurements");
  EkfConfig full = cfg;
  full.use_magnetometer = true;
  full.store_history = true;
  const EkfRun run = ekf_run(data, params, full);
  ValidationReport report;
  report.residuals = residual_stats(run, data);
  report.norms = norm_profile(data, params.mag);
  report.cost = run.neg_log_lik;
  return report;
}

}  // namespace magcal
