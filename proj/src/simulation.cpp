#include "magcal/simulation.hpp"

#include "magcal/errors.hpp"
#include "magcal/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace magcal {

namespace {

double uniform(Rng& rng, double lo, double hi) {
  if (!(hi > lo)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vector3 gaussian3(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double a = n(rng);
  const double b = n(rng);
  const double c = n(rng);
  return {a, b, c};
}

Matrix3 diag_sqrt(Rng& rng, double lo, double hi) {
  const double a = uniform(rng, lo, hi);
  const double b = uniform(rng, lo, hi);
  const double c = uniform(rng, lo, hi);
  return Vector3(std::sqrt(a), std::sqrt(b), std::sqrt(c)).asDiagonal();
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t trial_seed(std::uint64_t master, std::uint64_t index) { return splitmix64(master ^ index); }

ParamRanges ParamRanges::noise_free() {
  ParamRanges r;
  r.gyro_var_lo = r.gyro_var_hi = 0.0;
  r.accel_var_lo = r.accel_var_hi = 0.0;
  r.mag_var_lo = r.mag_var_hi = 0.0;
  return r;
}

ParamRanges ParamRanges::minimum_noise() {
  ParamRanges r;
  r.gyro_var_hi = r.gyro_var_lo;
  r.accel_var_hi = r.accel_var_lo;
  r.mag_var_hi = r.mag_var_lo;
  return r;
}

Matrix3 skew_matrix(double zeta, double eta, double rho) {
  Matrix3 s;
  s << 1.0, 0.0, 0.0,
       std::sin(zeta), std::cos(zeta), 0.0,
       -std::sin(eta), std::cos(eta) * std::sin(rho), std::cos(eta) * std::cos(rho);
  return s;
}

CalibrationParams sample_true_params(Rng& rng, const ParamRanges& r, double dip_deg) {
  CalibrationParams p;
  const double d1 = uniform(rng, r.scale_lo, r.scale_hi);
  const double d2 = uniform(rng, r.scale_lo, r.scale_hi);
  const double d3 = uniform(rng, r.scale_lo, r.scale_hi);
  const double skew_lim = deg2rad(r.skew_deg);
  const double zeta = uniform(rng, -skew_lim, skew_lim);
  const double eta = uniform(rng, -skew_lim, skew_lim);
  const double rho = uniform(rng, -skew_lim, skew_lim);
  const double rot_lim = deg2rad(r.rot_deg);
  const double psi = uniform(rng, -rot_lim, rot_lim);
  const double theta = uniform(rng, -rot_lim, rot_lim);
  const double phi = uniform(rng, -rot_lim, rot_lim);
  // D_rot = Rz(psi) Ry(theta) Rx(phi).
  const Matrix3 D_rot = euler_to_rotmat(phi, theta, psi);
  p.mag.D = Vector3(d1, d2, d3).asDiagonal() * skew_matrix(zeta, eta, rho) * D_rot;
  for (int i = 0; i < 3; ++i) p.mag.o(i) = uniform(rng, -r.offset, r.offset);
  for (int i = 0; i < 3; ++i) p.noise.gyro_bias(i) = uniform(rng, -r.gyro_bias, r.gyro_bias);
  p.noise.gyro_chol = diag_sqrt(rng, r.gyro_var_lo, r.gyro_var_hi);
  p.noise.accel_chol = diag_sqrt(rng, r.accel_var_lo, r.accel_var_hi);
  p.noise.mag_chol = diag_sqrt(rng, r.mag_var_lo, r.mag_var_hi);
  p.field = field_from_dip(deg2rad(dip_deg));
  return p;
}

Trajectory generate_trajectory(const TrajectoryConfig& cfg) {
  Trajectory tr;
  const std::size_t n = cfg.stationary_samples + 3 * cfg.samples_per_axis * cfg.cycles;
  tr.t.reserve(n);
  tr.q_nb.reserve(n);
  tr.omega.reserve(n);
  const double rate = cfg.samples_per_axis > 0
                          ? 2.0 * std::numbers::pi / (static_cast<double>(cfg.samples_per_axis) * cfg.dt)
                          : 0.0;

  UnitQuaternion q = cfg.initial.normalized();
  const auto push = [&](const Vector3& w) {
    if (!tr.t.empty()) q = quat_multiply(q, exp_map<double>(cfg.dt * w));
    tr.t.push_back(static_cast<double>(tr.t.size()) * cfg.dt);
    tr.q_nb.push_back(q);
    tr.omega.push_back(tr.t.size() == 1 ? Vector3::Zero() : w);
  };
  for (std::size_t k = 0; k < cfg.stationary_samples; ++k) push(Vector3::Zero());
  for (std::size_t c = 0; c < cfg.cycles; ++c)
    for (int axis = 0; axis < 3; ++axis)
      for (std::size_t k = 0; k < cfg.samples_per_axis; ++k) push(rate * Vector3::Unit(axis));
  return tr;
}

ImuDataset generate_measurements(const SimScenario& scn, Rng& rng) {
  const auto& tr = scn.trajectory;
  const auto& p = scn.truth;
  const Vector3 m_n = p.field.vector();
  ImuDataset data;
  data.samples.resize(tr.size());
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const Matrix3 R_bn = quat_to_rotmat(tr.q_nb[k]).transpose();
    ImuSample& s = data.samples[k];
    s.t = tr.t[k];
    s.gyro = tr.omega[k] + p.noise.gyro_bias + p.noise.gyro_chol * gaussian3(rng);
    s.accel = model_accel<double>(R_bn) + p.noise.accel_chol * gaussian3(rng);
    s.mag = model_mag<double>(R_bn, p.mag.D, p.mag.o, m_n) + p.noise.mag_chol * gaussian3(rng);
  }
  return data;
}

double heading_rmse(std::span<const UnitQuaternion> q_est, std::span<const UnitQuaternion> q_ref, std::size_t skip) {
  if (q_est.size() != q_ref.size()) throw DataError("heading_rmse: sequences differ in length");
  if (skip >= q_est.size()) return 0.0;
  double sum = 0.0;
  for (std::size_t t = skip; t < q_est.size(); ++t) {
    const UnitQuaternion dq = quat_multiply(q_est[t], quat_conjugate(q_ref[t]));
    const double h = rad2deg(quat_to_euler(dq).heading);
    sum += h * h;
  }
  return std::sqrt(sum / static_cast<double>(q_est.size() - skip));
}

SimScenario make_scenario(std::uint64_t seed, const SimulationConfig& cfg, Rng& rng) {
  SimScenario scn;
  scn.seed = seed;
  scn.truth = sample_true_params(rng, cfg.ranges, cfg.dip_deg);
  scn.trajectory = generate_trajectory(cfg.trajectory);
  return scn;
}

McRecord run_trial(std::uint64_t seed, const SimulationConfig& cfg) {
  McRecord rec;
  rec.seed = seed;
  Rng rng(seed);
  const SimScenario scn = make_scenario(seed, cfg, rng);
  rec.truth = scn.truth;
  try {
    const ImuDataset data = generate_measurements(scn, rng);
    CalibrationConfig ccfg = cfg.calibration;
    ccfg.stationary = SampleRange{0, cfg.trajectory.stationary_samples};
    const CalibrationResult res = calibrate(data, ccfg);
    rec.initial = res.initial;
    rec.ml = res.ml;
    rec.cost_init = res.cost_initial;
    rec.cost_ml = res.cost_ml;
    rec.iterations = static_cast<int>(res.trace.iterations.size());
    rec.monotone = res.trace.monotone();

    EkfConfig ecfg = ccfg.ekf;
    ecfg.use_magnetometer = true;
    ecfg.store_history = true;
    const EkfRun run_init = ekf_run(data, res.initial, ecfg);
    const EkfRun run_ml = ekf_run(data, res.ml, ecfg);
    rec.rmse_init_deg = heading_rmse(run_init.orientations, scn.trajectory.q_nb, cfg.transient_samples);
    rec.rmse_ml_deg = heading_rmse(run_ml.orientations, scn.trajectory.q_nb, cfg.transient_samples);
    rec.status = std::isfinite(rec.rmse_init_deg) && std::isfinite(rec.rmse_ml_deg) ? TrialStatus::Success
                                                                                    : TrialStatus::Failed;
    if (rec.status == TrialStatus::Failed) rec.message = "non-finite heading RMSE";
  } catch (const Error& e) {
    rec.status = TrialStatus::Failed;
    rec.message = e.what();
  }
  return rec;
}

std::vector<McRecord> run_monte_carlo(std::size_t n, std::uint64_t seed, const SimulationConfig& cfg) {
  std::vector<McRecord> records(n);
  SimulationConfig trial_cfg = cfg;
  const unsigned workers = resolve_threads(cfg.threads);
  // Parallelize across trials when there are enough; otherwise inside the gradient.
  const bool across_trials = workers > 1 && n > 1;
  trial_cfg.calibration.optimizer.threads = across_trials ? 1 : workers;
  parallel_for(n, across_trials ? workers : 1,
               [&](std::size_t i) { records[i] = run_trial(trial_seed(seed, i), trial_cfg); });
  return records;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DataError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Quantiles quantiles(const std::vector<double>& values) {
  return {quantile(values, 0.10), quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75),
          quantile(values, 0.90)};
}

McSummary summarize_monte_carlo(std::span<const McRecord> records) {
  McSummary s;
  s.trials = records.size();
  std::vector<double> init, ml;
  std::size_t not_worse = 0;
  for (const McRecord& r : records) {
    s.all_monotone = s.all_monotone && r.monotone;
    if (r.status != TrialStatus::Success) continue;
    init.push_back(r.rmse_init_deg);
    ml.push_back(r.rmse_ml_deg);
    if (r.rmse_ml_deg <= r.rmse_init_deg) ++not_worse;
  }
  s.successes = init.size();
  if (s.successes == 0) return s;
  s.rmse_init_deg = quantiles(init);
  s.rmse_ml_deg = quantiles(ml);
  s.ml_not_worse_fraction = static_cast<double>(not_worse) / static_cast<double>(s.successes);
  return s;
}

RotationProtocol ninety_degree_protocol(Rng& rng, double max_tilt_deg) {
  const double half_pi = std::numbers::pi / 2.0;
  const std::array<std::pair<const char*, Matrix3>, 6> faces{{
      {"z up", Matrix3::Identity()},
      {"z down", rot_x(std::numbers::pi)},
      {"x up", rot_y(-half_pi)},
      {"x down", rot_y(half_pi)},
      {"y up", rot_x(half_pi)},
      {"y down", rot_x(-half_pi)},
  }};
  RotationProtocol protocol;
  for (const auto& [label, face] : faces) {
    const double az = uniform(rng, -std::numbers::pi, std::numbers::pi);
    const double tilt = deg2rad(uniform(rng, 0.0, max_tilt_deg));
    const Matrix3 tilt_rot = quat_to_rotmat(exp_map<double>(tilt * Vector3(std::cos(az), std::sin(az), 0.0)));
    std::vector<Matrix3> positions;
    for (int k = 0; k <= 4; ++k) positions.push_back(rot_z(half_pi * (k % 4)) * tilt_rot * face);
    protocol.labels.emplace_back(label);
    protocol.orientations.push_back(std::move(positions));
  }
  return protocol;
}

std::vector<SegmentSequence> simulate_protocol(const RotationProtocol& protocol, const CalibrationParams& truth,
                                               std::size_t samples_per_position, Rng& rng) {
  const Vector3 m_n = truth.field.vector();
  std::vector<SegmentSequence> out;
  for (std::size_t f = 0; f < protocol.orientations.size(); ++f) {
    SegmentSequence seq{protocol.labels[f], {}};
    for (const Matrix3& R_nb : protocol.orientations[f]) {
      const Matrix3 R_bn = R_nb.transpose();
      SegmentMean mean;
      for (std::size_t k = 0; k < samples_per_position; ++k) {
        mean.acc += model_accel<double>(R_bn) + truth.noise.accel_chol * gaussian3(rng);
        mean.mag += model_mag<double>(R_bn, truth.mag.D, truth.mag.o, m_n) + truth.noise.mag_chol * gaussian3(rng);
      }
      mean.acc /= static_cast<double>(samples_per_position);
      mean.mag /= static_cast<double>(samples_per_position);
      seq.segments.push_back(mean);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace magcal
