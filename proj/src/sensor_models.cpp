#include "magcal/sensor_models.hpp"

#include "magcal/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace magcal {

namespace {

void pack_chol(const Matrix3& L, double* out) {
  out[0] = L(0, 0);
  out[1] = L(1, 0);
  out[2] = L(1, 1);
  out[3] = L(2, 0);
  out[4] = L(2, 1);
  out[5] = L(2, 2);
}

Matrix3 unpack_chol(const double* in) {
  Matrix3 L = Matrix3::Zero();
  L(0, 0) = in[0];
  L(1, 0) = in[1];
  L(1, 1) = in[2];
  L(2, 0) = in[3];
  L(2, 1) = in[4];
  L(2, 2) = in[5];
  return L;
}

bool finite(const Vector3& v) { return v.allFinite(); }

}  // namespace

bool MagCalibration::invertible() const {
  const double scale = D.norm();
  return D.allFinite() && o.allFinite() && std::abs(D.determinant()) >= 1e-12 * scale * scale * scale &&
         scale > 0.0;
}

void MagCalibration::validate() const {
  if (!invertible()) throw DataError("invalid calibration: distortion matrix D is singular");
}

Vector3 LocalField::vector() const { return Vector3(std::cos(dip), 0.0, -std::sin(dip)); }

LocalField field_from_dip(double dip) { return LocalField{dip}; }

LocalField field_from_vertical(double mz, bool* clamped) {
  constexpr double limit = 1.0 - 1e-9;
  const bool clamp = !(std::abs(mz) <= limit);
  if (clamped) *clamped = clamp;
  if (clamp) mz = std::isnan(mz) ? 0.0 : std::clamp(mz, -limit, limit);
  const double mx = std::sqrt(1.0 - mz * mz);
  return LocalField{std::atan2(-mz, mx)};
}

NoiseModel NoiseModel::from_covariances(const Vector3& bias, const Matrix3& gyro, const Matrix3& accel,
                                        const Matrix3& mag) {
  NoiseModel n;
  n.gyro_bias = bias;
  n.gyro_chol = cholesky_psd(gyro);
  n.accel_chol = cholesky_psd(accel);
  n.mag_chol = cholesky_psd(mag);
  return n;
}

void ImuDataset::validate() const {
  if (samples.empty()) throw DataError("dataset is empty");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!std::isfinite(s.t) || !finite(s.gyro) || !finite(s.accel) || !finite(s.mag))
      throw DataError("non-finite value in sample " + std::to_string(i));
    if (i > 0 && !(s.t > samples[i - 1].t))
      throw DataError("timestamps not strictly increasing at sample " + std::to_string(i));
  }
}

ImuDataset ImuDataset::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, samples.size());
  begin = std::min(begin, end);
  return ImuDataset{{samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     samples.begin() + static_cast<std::ptrdiff_t>(end)}};
}

ImuDataset ImuDataset::decimate(std::size_t factor) const {
  if (factor <= 1) return *this;
  ImuDataset out;
  for (std::size_t i = 0; i < samples.size(); i += factor) out.samples.push_back(samples[i]);
  return out;
}

Vector3 apply_calibration(const Vector3& y_mag, const MagCalibration& cal) {
  cal.validate();
  return cal.D.partialPivLu().solve(y_mag - cal.o);
}

Matrix3 cholesky_psd(const Matrix3& sigma) {
  const Matrix3 s = 0.5 * (sigma + sigma.transpose());
  const double tol = 1e-300;
  Matrix3 L = Matrix3::Zero();
  for (int j = 0; j < 3; ++j) {
    double d = s(j, j);
    for (int k = 0; k < j; ++k) d -= L(j, k) * L(j, k);
    if (d <= tol) continue;
    L(j, j) = std::sqrt(d);
    for (int i = j + 1; i < 3; ++i) {
      double v = s(i, j);
      for (int k = 0; k < j; ++k) v -= L(i, k) * L(j, k);
      L(i, j) = v / L(j, j);
    }
  }
  return L;
}

ParamVector pack_params(const CalibrationParams& p) {
  ParamVector v;
  Eigen::Map<Matrix3>(v.data()) = p.mag.D;
  v.segment<3>(9) = p.mag.o;
  v(12) = p.field.dip;
  v.segment<3>(13) = p.noise.gyro_bias;
  pack_chol(p.noise.gyro_chol, v.data() + 16);
  pack_chol(p.noise.accel_chol, v.data() + 22);
  pack_chol(p.noise.mag_chol, v.data() + 28);
  return v;
}

CalibrationParams unpack_params(const ParamVector& v) {
  CalibrationParams p;
  p.mag.D = Eigen::Map<const Matrix3>(v.data());
  p.mag.o = v.segment<3>(9);
  p.field.dip = v(12);
  p.noise.gyro_bias = v.segment<3>(13);
  p.noise.gyro_chol = unpack_chol(v.data() + 16);
  p.noise.accel_chol = unpack_chol(v.data() + 22);
  p.noise.mag_chol = unpack_chol(v.data() + 28);
  return p;
}

CalibrationParams unpack_params(std::span<const double> v) {
  if (v.size() != static_cast<std::size_t>(kParamCount))
    throw DataError("parameter vector has length " + std::to_string(v.size()) + ", expected 34");
  return unpack_params(ParamVector(Eigen::Map<const ParamVector>(v.data())));
}

}  // namespace magcal
