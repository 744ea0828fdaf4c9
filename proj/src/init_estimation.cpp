#include "magcal/init_estimation.hpp"

#include "magcal/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace magcal {

namespace {

constexpr std::size_t kMinStationarySamples = 50;
constexpr std::size_t kMinEllipsoidSamples = 13;

const char* kRotateHint = "rotate the sensor in all possible orientations";

Matrix3 sample_covariance(const std::vector<Vector3>& xs, const Vector3& mean) {
  Matrix3 cov = Matrix3::Zero();
  for (const auto& x : xs) cov += (x - mean) * (x - mean).transpose();
  return cov / static_cast<double>(xs.size() - 1);
}

Vector3 sample_mean(const std::vector<Vector3>& xs) {
  Vector3 m = Vector3::Zero();
  for (const auto& x : xs) m += x;
  return m / static_cast<double>(xs.size());
}

// Largest angle between any sample and the mean direction, radians.
double max_direction_spread(const std::vector<Vector3>& xs, const Vector3& mean) {
  double worst = 0.0;
  const Vector3 u = mean.normalized();
  for (const auto& x : xs) worst = std::max(worst, std::atan2(x.cross(u).norm(), x.dot(u)));
  return worst;
}

// Noise scale from the median successive difference; motion at a steady rate
// barely moves it, unlike the sample covariance.
double robust_scale(const std::vector<Vector3>& xs) {
  std::vector<double> d;
  d.reserve(xs.size());
  for (std::size_t k = 1; k < xs.size(); ++k) d.push_back((xs[k] - xs[k - 1]).norm());
  if (d.empty()) return 0.0;
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return d[d.size() / 2] / std::sqrt(2.0);
}

Vector3 componentwise_median(const std::vector<Vector3>& xs) {
  Vector3 m;
  std::vector<double> c(xs.size());
  for (int i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < xs.size(); ++k) c[k] = xs[k](i);
    std::nth_element(c.begin(), c.begin() + c.size() / 2, c.end());
    m(i) = c[c.size() / 2];
  }
  return m;
}

bool rate_changed(const std::vector<Vector3>& gyro) {
  const Vector3 ref = componentwise_median(gyro);
  double worst = 0.0;
  for (const auto& w : gyro) worst = std::max(worst, (w - ref).norm());
  return worst > 4.0 * robust_scale(gyro) + 1e-12;
}

bool direction_changed(const std::vector<Vector3>& xs, const Vector3& mean) {
  const double scale = mean.norm();
  if (!(scale > 0.0)) return false;
  return max_direction_spread(xs, mean) > std::max(deg2rad(2.0), 6.0 * robust_scale(xs) / scale);
}

using Regressor = Eigen::Matrix<double, Eigen::Dynamic, 9>;

// Unknowns (a11, a22, a12, a13, a23, b1, b2, b3, c) with a33 = 1 - a11 - a22;
// the right-hand side is -y3^2.
void assemble(std::span<const Vector3> ys, Regressor& M, Eigen::VectorXd& rhs) {
  const auto n = static_cast<Eigen::Index>(ys.size());
  M.resize(n, 9);
  rhs.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector3& y = ys[static_cast<std::size_t>(i)];
    const double z2 = y.z() * y.z();
    M.row(i) << y.x() * y.x() - z2, y.y() * y.y() - z2, 2.0 * y.x() * y.y(), 2.0 * y.x() * y.z(),
        2.0 * y.y() * y.z(), y.x(), y.y(), y.z(), 1.0;
    rhs(i) = -z2;
  }
}

double quadric_residual_rms(std::span<const Vector3> ys, const EllipsoidQuadric& q) {
  double sum = 0.0;
  for (const auto& y : ys) {
    const double r = q.evaluate(y);
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(ys.size()));
}

}  // namespace

NoiseEstimate initial_noise_estimates(const ImuDataset& stationary) {
  if (stationary.size() < kMinStationarySamples)
    throw DataError("need at least " + std::to_string(kMinStationarySamples) + " stationary samples, got " +
                    std::to_string(stationary.size()));
  std::vector<Vector3> gyro, accel, mag;
  gyro.reserve(stationary.size());
  accel.reserve(stationary.size());
  mag.reserve(stationary.size());
  for (const auto& s : stationary.samples) {
    gyro.push_back(s.gyro);
    accel.push_back(s.accel);
    mag.push_back(s.mag);
  }
  const Vector3 gyro_mean = sample_mean(gyro);
  const Vector3 accel_mean = sample_mean(accel);
  const Vector3 mag_mean = sample_mean(mag);
  const Matrix3 gyro_cov = sample_covariance(gyro, gyro_mean);
  const Matrix3 accel_cov = sample_covariance(accel, accel_mean);
  const Matrix3 mag_cov = sample_covariance(mag, mag_mean);

  NoiseEstimate est;
  est.samples = stationary.size();
  est.noise = NoiseModel::from_covariances(gyro_mean, gyro_cov, accel_cov, mag_cov);
  est.nonstationary =
      rate_changed(gyro) || direction_changed(accel, accel_mean) || direction_changed(mag, mag_mean);
  return est;
}

std::size_t detect_stationary_prefix(const ImuDataset& data, double threshold) {
  const std::size_t head = std::min<std::size_t>(10, data.size());
  if (head < 2) return data.size();
  std::vector<Vector3> first;
  for (std::size_t i = 0; i < head; ++i) first.push_back(data[i].gyro);
  const Vector3 ref = sample_mean(first);
  const double sigma = std::sqrt(std::max(sample_covariance(first, ref).trace(), 0.0));
  const double limit = std::max(threshold, 6.0 * sigma);
  std::size_t n = 0;
  while (n < data.size() && (data[n].gyro - ref).norm() < limit) ++n;
  return n;
}

EllipsoidQuadric fit_ellipsoid(std::span<const Vector3> mags) {
  if (mags.size() < kMinEllipsoidSamples)
    throw DataError("calibration impossible: ellipsoid fit needs at least 13 magnetometer samples, got " +
                    std::to_string(mags.size()) + "; " + kRotateHint);

  Vector3 mean = Vector3::Zero();
  for (const auto& y : mags) mean += y;
  mean /= static_cast<double>(mags.size());
  Eigen::MatrixX3d centered(static_cast<Eigen::Index>(mags.size()), 3);
  for (std::size_t i = 0; i < mags.size(); ++i) centered.row(static_cast<Eigen::Index>(i)) = (mags[i] - mean).transpose();
  const Vector3 sv = Eigen::JacobiSVD<Eigen::MatrixX3d>(centered).singularValues();
  if (!(sv(2) > 1e-9 * std::max(sv(0), 1e-300)))
    throw DataError(std::string("calibration impossible: magnetometer samples do not span 3D; ") + kRotateHint);

  Regressor M;
  Eigen::VectorXd rhs;
  assemble(mags, M, rhs);

  // Column equilibration leaves the least-squares minimizer unchanged.
  Eigen::Matrix<double, 9, 1> scale = M.colwise().norm().transpose();
  for (int j = 0; j < 9; ++j)
    if (!(scale(j) > 0.0)) scale(j) = 1.0;
  const Regressor Ms = M * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Regressor> qr(Ms);
  qr.setThreshold(1e-10);
  if (qr.rank() < 9)
    throw DataError(std::string("calibration impossible: rank-deficient ellipsoid regressor; ") + kRotateHint);
  const Eigen::Matrix<double, 9, 1> x = qr.solve(rhs).cwiseQuotient(scale);

  EllipsoidQuadric q;
  q.A << x(0), x(2), x(3),
         x(2), x(1), x(4),
         x(3), x(4), 1.0 - x(0) - x(1);
  q.b = x.segment<3>(5);
  q.c = x(8);

  Eigen::SelfAdjointEigenSolver<Matrix3> eig(q.A);
  if (eig.eigenvalues().minCoeff() <= 0.0) {
    const double floor = 1e-6 * q.A.trace();
    Vector3 lambda = eig.eigenvalues().cwiseMax(floor);
    Matrix3 A = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
    A = 0.5 * (A + A.transpose());
    A /= A.trace();
    // Re-solve b and c with A held fixed.
    Eigen::Matrix<double, Eigen::Dynamic, 4> Mb(static_cast<Eigen::Index>(mags.size()), 4);
    Eigen::VectorXd r(static_cast<Eigen::Index>(mags.size()));
    for (std::size_t i = 0; i < mags.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      Mb.row(row) << mags[i].transpose(), 1.0;
      r(row) = -mags[i].dot(A * mags[i]);
    }
    const Eigen::Vector4d bc = Mb.colPivHouseholderQr().solve(r);
    q.A = A;
    q.b = bc.head<3>();
    q.c = bc(3);
    q.pd_projected = true;
  }
  q.residual_rms = quadric_residual_rms(mags, q);
  return q;
}

RecoveredCalibration recover_cal(const EllipsoidQuadric& q) {
  Eigen::LLT<Matrix3> llt_a(q.A);
  if (llt_a.info() != Eigen::Success) throw DataError("invalid quadric: A is not positive definite");
  const Vector3 a_inv_b = llt_a.solve(q.b);
  const double gamma = 0.25 * q.b.dot(a_inv_b) - q.c;
  if (!(gamma > 0.0)) throw DataError("invalid quadric: not an ellipsoid enclosing the data (gamma <= 0)");
  Matrix3 DDt = gamma * llt_a.solve(Matrix3::Identity());
  DDt = 0.5 * (DDt + DDt.transpose());
  Eigen::LLT<Matrix3> llt_d(DDt);
  if (llt_d.info() != Eigen::Success) throw DataError("invalid quadric: gamma A^-1 is not positive definite");
  RecoveredCalibration out;
  out.o = -0.5 * a_inv_b;
  out.D_tilde = llt_d.matrixL();
  return out;
}

MisalignmentEstimate estimate_misalignment(const ImuDataset& data, const EkfRun& inclination,
                                           const Matrix3& D_tilde, const Vector3& o) {
  if (inclination.orientations.size() != data.size())
    throw DataError("inclination run does not match the dataset (missing orientation history)");
  if (data.empty()) throw DataError("dataset is empty");

  const auto lu = D_tilde.partialPivLu();
  const std::size_t n = data.size();
  std::vector<Vector3> m_tilde(n), v_b(n);
  for (std::size_t t = 0; t < n; ++t) {
    m_tilde[t] = lu.solve(data[t].mag - o);
    v_b[t] = quat_to_rotmat(inclination.orientations[t]).transpose() * Vector3::UnitZ();
  }

  const auto objective = [&](const Matrix3& R, double mz) {
    double sum = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double r = mz - v_b[t].dot(R.transpose() * m_tilde[t]);
      sum += r * r;
    }
    return 0.5 * sum;
  };

  MisalignmentEstimate est;
  double mz = 0.0;
  for (std::size_t t = 0; t < n; ++t) mz += v_b[t].dot(m_tilde[t]);
  mz /= static_cast<double>(n);
  Matrix3 R = Matrix3::Identity();
  double f = objective(R, mz);
  est.initial_objective = f;

  constexpr int kMaxIterations = 50;
  for (int it = 0; it < kMaxIterations; ++it) {
    Eigen::Matrix4d JtJ = Eigen::Matrix4d::Zero();
    Eigen::Vector4d Jtr = Eigen::Vector4d::Zero();
    for (std::size_t t = 0; t < n; ++t) {
      const Vector3 w = R.transpose() * m_tilde[t];
      const double r = mz - v_b[t].dot(w);
      Eigen::Vector4d J;
      J << w.cross(v_b[t]), 1.0;
      JtJ += J * J.transpose();
      Jtr += J * r;
    }
    const Eigen::Vector4d step = -JtJ.completeOrthogonalDecomposition().solve(Jtr);
    est.iterations = it + 1;
    if (!step.allFinite()) break;

    double alpha = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 30; ++halving, alpha *= 0.5) {
      const Matrix3 R_try = R * quat_to_rotmat(exp_map<double>(alpha * step.head<3>()));
      const double mz_try = mz + alpha * step(3);
      const double f_try = objective(R_try, mz_try);
      if (f_try <= f) {
        R = rotmat_to_quat<double>(R_try).toRotationMatrix();
        mz = mz_try;
        f = f_try;
        accepted = true;
        break;
      }
    }
    if (!accepted || alpha * step.norm() < 1e-10) {
      est.converged = true;
      break;
    }
  }

  constexpr double limit = 1.0 - 1e-9;
  est.vertical_field = std::abs(mz) >= limit;
  est.mz = std::clamp(mz, -limit, limit);
  est.R_D = R;
  est.final_objective = f;
  return est;
}

InitialEstimate build_initial(const NoiseModel& noise, const RecoveredCalibration& recovered,
                              const MisalignmentEstimate& misalignment) {
  InitialEstimate init;
  init.D_tilde = recovered.D_tilde;
  init.R_D = misalignment.R_D;
  init.misalignment = misalignment;
  init.params.mag.D = recovered.D_tilde * misalignment.R_D;
  init.params.mag.o = recovered.o;
  init.params.field = field_from_vertical(misalignment.mz, &init.field_clamped);
  init.params.noise = noise;
  return init;
}

}  // namespace magcal
