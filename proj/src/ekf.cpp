#include "magcal/ekf.hpp"

#include "magcal/errors.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>

namespace magcal {

namespace {

struct Outcome {
  bool ok = true;
  std::size_t failed_step = 0;
};

template <int M>
Outcome run_filter(const ImuDataset& data, const CalibrationParams& params, const EkfConfig& cfg,
                   EkfRun& out) {
  using VecM = Eigen::Matrix<double, M, 1>;
  using MatM = Eigen::Matrix<double, M, M>;
  using MatM3 = Eigen::Matrix<double, M, 3>;
  using Mat3M = Eigen::Matrix<double, 3, M>;

  const double reg = cfg.regularization_floor;
  const Matrix3 gyro_cov = params.noise.gyro_cov() + reg * Matrix3::Identity();
  MatM meas_cov = MatM::Zero();
  meas_cov.template topLeftCorner<3, 3>() = params.noise.accel_cov() + reg * Matrix3::Identity();
  if constexpr (M == 6)
    meas_cov.template bottomRightCorner<3, 3>() = params.noise.mag_cov() + reg * Matrix3::Identity();

  const Vector3 g_n = gravity_nav<double>();
  const Vector3 m_n = params.field.vector();
  const Matrix3& D = params.mag.D;
  const Vector3& o = params.mag.o;

  UnitQuaternion q = orientation_from_accel(data[0].accel);
  Matrix3 P = cfg.initial_orientation_cov;

  out.measurement_dim = M;
  out.neg_log_lik = 0.0;
  out.regularized_steps = 0;
  if (cfg.store_history) {
    out.predicted.assign(data.size(), Vector6::Zero());
    out.innovation_cov.assign(data.size(), Matrix6::Zero());
    out.orientations.assign(data.size(), UnitQuaternion::Identity());
  }

  double cost = 0.0;
  for (std::size_t t = 0; t < data.size(); ++t) {
    if (t > 0) {
      const double dt = data[t].t - data[t - 1].t;
      const Vector3 rate = correct_gyro(data[t].gyro, params.noise);
      const UnitQuaternion dq = exp_map<double>(dt * rate);
      q = quat_multiply(q, dq);
      const Matrix3 F = quat_to_rotmat(dq).transpose();
      P = F * P * F.transpose() + (dt * dt) * gyro_cov;
    }

    const Matrix3 R_bn = quat_to_rotmat(q).transpose();
    const Vector3 g_b = R_bn * g_n;
    VecM y_hat;
    MatM3 H;
    VecM y;
    y_hat.template head<3>() = -g_b;
    H.template topRows<3>() = -skew<double>(g_b);
    y.template head<3>() = data[t].accel;
    if constexpr (M == 6) {
      const Vector3 m_b = R_bn * m_n;
      y_hat.template tail<3>() = D * m_b + o;
      H.template bottomRows<3>() = D * skew<double>(m_b);
      y.template tail<3>() = data[t].mag;
    }

    const Mat3M PHt = P * H.transpose();
    MatM S = H * PHt + meas_cov;
    S = 0.5 * (S + S.transpose());

    Eigen::LLT<MatM> llt(S);
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
      S.diagonal().array() += cfg.regularization_floor * S.trace() / M;
      llt.compute(S);
      ++out.regularized_steps;
      if (llt.info() != Eigen::Success) return {false, t};
    }

    const VecM innovation = y - y_hat;
    const VecM white = llt.matrixL().solve(innovation);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    cost += 0.5 * (white.squaredNorm() + log_det);
    if (!std::isfinite(cost)) return {false, t};

    if (cfg.store_history) {
      out.predicted[t].template head<M>() = y_hat;
      out.innovation_cov[t].template topLeftCorner<M, M>() = S;
    }

    const Mat3M K = llt.solve(PHt.transpose()).transpose();
    const Vector3 eta = K * innovation;
    const Matrix3 IKH = Matrix3::Identity() - K * H;
    P = IKH * P * IKH.transpose() + K * meas_cov * K.transpose();
    P = 0.5 * (P + P.transpose());
    q = quat_multiply(q, exp_map<double>(eta));

    if (cfg.store_history) out.orientations[t] = q;
  }
  out.neg_log_lik = cost;
  return {};
}

Outcome dispatch(const ImuDataset& data, const CalibrationParams& params, const EkfConfig& cfg,
                 EkfRun& out) {
  return cfg.use_magnetometer ? run_filter<6>(data, params, cfg, out) : run_filter<3>(data, params, cfg, out);
}

}  // namespace

Matrix3 EkfConfig::default_initial_cov() {
  const double tilt = deg2rad(5.0);
  const double heading = deg2rad(60.0);
  return Vector3(tilt * tilt, tilt * tilt, heading * heading).asDiagonal();
}

UnitQuaternion orientation_from_accel(const Vector3& accel) {
  if (!(accel.norm() > 0.0)) throw DataError("zero accelerometer sample; cannot initialize inclination");
  const double roll = std::atan2(accel.y(), accel.z());
  const double pitch = std::atan2(-accel.x(), std::hypot(accel.y(), accel.z()));
  return euler_to_quat(roll, pitch, 0.0);
}

Vector6 stacked_measurement(const ImuSample& s, int measurement_dim) {
  Vector6 y = Vector6::Zero();
  y.head<3>() = s.accel;
  if (measurement_dim == 6) y.tail<3>() = s.mag;
  return y;
}

EkfRun ekf_run(const ImuDataset& data, const CalibrationParams& params, const EkfConfig& cfg) {
  data.validate();
  EkfRun run;
  const Outcome outcome = dispatch(data, params, cfg, run);
  if (!outcome.ok) throw NumericalError("EKF cost became non-finite", outcome.failed_step);
  return run;
}

double nll_cost(const ImuDataset& data, const CalibrationParams& params, const EkfConfig& cfg) {
  if (data.empty()) throw DataError("dataset is empty");
  if (!pack_params(params).allFinite()) return std::numeric_limits<double>::infinity();
  EkfConfig lean = cfg;
  lean.store_history = false;
  EkfRun run;
  const Outcome outcome = dispatch(data, params, lean, run);
  if (!outcome.ok || !std::isfinite(run.neg_log_lik)) return std::numeric_limits<double>::infinity();
  return run.neg_log_lik;
}

}  // namespace magcal
