#include "magcal/errors.hpp"
#include "magcal/simulation.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <numbers>

using namespace magcal;
using magcal::fixtures::max_abs;

TEST(SimParams, DegenerateRangesGiveIdentity) {
  ParamRanges r;
  r.scale_lo = r.scale_hi = 1.0;
  r.skew_deg = r.rot_deg = 0.0;
  Rng rng(1);
  EXPECT_LT(max_abs(sample_true_params(rng, r).mag.D - Matrix3::Identity()), 1e-15);
}

TEST(SimParams, SkewMatrix) {
  const Matrix3 s = skew_matrix(deg2rad(30.0), 0.0, 0.0);
  EXPECT_NEAR(s(1, 0), 0.5, 1e-15);
  EXPECT_NEAR(s(1, 1), std::sqrt(3.0) / 2.0, 1e-15);
  EXPECT_EQ(s(1, 2), 0.0);
  EXPECT_EQ(s.row(0), Eigen::RowVector3d(1, 0, 0));
}

TEST(SimParams, DrawsStayInRange) {
  Rng rng(2);
  const ParamRanges r;
  for (int i = 0; i < 1000; ++i) {
    const CalibrationParams p = sample_true_params(rng, r);
    EXPECT_GT(p.mag.D.determinant(), 0.0);
    EXPECT_LE(p.mag.o.lpNorm<Eigen::Infinity>(), 1.0);
    EXPECT_LE(p.noise.gyro_bias.lpNorm<Eigen::Infinity>(), 1.0);
    const Vector3 mv = p.noise.mag_cov().diagonal();
    EXPECT_GE(mv.minCoeff(), 1e-3 - 1e-15);
    EXPECT_LE(mv.maxCoeff(), 1e-1 + 1e-15);
    EXPECT_EQ(p.noise.mag_cov()(0, 1), 0.0);
  }
}

TEST(Trajectory, Protocol) {
  const Trajectory tr = generate_trajectory();
  ASSERT_EQ(tr.size(), 400u);
  EXPECT_NEAR(tr.t.back() - tr.t.front() + 0.01, 4.0, 1e-12);
  for (std::size_t k = 0; k < 100; ++k) EXPECT_EQ(tr.q_nb[k].coeffs(), tr.q_nb[0].coeffs());
  // Sample 199 closes the revolution about x.
  EXPECT_LT(rotation_angle<double>(quat_to_rotmat(tr.q_nb[199]), quat_to_rotmat(tr.q_nb[99])), 1e-10);
  EXPECT_GT(rotation_angle<double>(quat_to_rotmat(tr.q_nb[150]), quat_to_rotmat(tr.q_nb[99])), 3.0);
  EXPECT_LT(rotation_angle<double>(quat_to_rotmat(tr.q_nb[299]), quat_to_rotmat(tr.q_nb[99])), 1e-10);
  EXPECT_LT(rotation_angle<double>(quat_to_rotmat(tr.q_nb[399]), quat_to_rotmat(tr.q_nb[99])), 1e-10);
  // Orientations integrate the stored rates.
  for (std::size_t k = 1; k < tr.size(); ++k) {
    const UnitQuaternion q = quat_multiply(tr.q_nb[k - 1], exp_map<double>(0.01 * tr.omega[k]));
    EXPECT_LT((q.coeffs() - tr.q_nb[k].coeffs()).norm(), 1e-15);
  }
}

TEST(Measurements, NoiseFreeMatchesModel) {
  SimulationConfig cfg;
  cfg.ranges = ParamRanges::noise_free();
  const auto [scn, data] = fixtures::simulate(3, cfg);
  for (const auto& s : data.samples) EXPECT_NEAR(apply_calibration(s.mag, scn.truth.mag).norm(), 1.0, 1e-12);
}

TEST(Measurements, StationaryGyroMeanNearBias) {
  for (std::uint64_t seed : {4u, 5u, 6u}) {
    const auto [scn, data] = fixtures::simulate(seed);
    Vector3 mean = Vector3::Zero();
    for (std::size_t k = 0; k < 100; ++k) mean += data[k].gyro;
    mean /= 100.0;
    const Vector3 sigma = scn.truth.noise.gyro_cov().diagonal().cwiseSqrt();
    for (int i = 0; i < 3; ++i) EXPECT_LT(std::abs(mean(i) - scn.truth.noise.gyro_bias(i)), 3.0 * sigma(i) / 10.0);
  }
}

TEST(Measurements, SameSeedSameData) {
  const auto a = fixtures::simulate(7).second;
  const auto b = fixtures::simulate(7).second;
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(std::memcmp(a[k].mag.data(), b[k].mag.data(), sizeof(double) * 3), 0);
    EXPECT_EQ(std::memcmp(a[k].gyro.data(), b[k].gyro.data(), sizeof(double) * 3), 0);
  }
}

TEST(HeadingRmse, Cases) {
  const Trajectory tr = generate_trajectory();
  EXPECT_EQ(heading_rmse(tr.q_nb, tr.q_nb), 0.0);
  std::vector<UnitQuaternion> offset, flipped;
  const UnitQuaternion rz = exp_map<double>(Vector3(0, 0, deg2rad(2.0)));
  for (const auto& q : tr.q_nb) {
    offset.push_back(quat_multiply(rz, q));
    flipped.push_back(UnitQuaternion(-q.w(), -q.x(), -q.y(), -q.z()));
  }
  EXPECT_NEAR(heading_rmse(offset, tr.q_nb), 2.0, 1e-9);
  EXPECT_NEAR(heading_rmse(flipped, tr.q_nb), 0.0, 1e-9);
  EXPECT_THROW(heading_rmse(std::span(offset).first(3), tr.q_nb), DataError);
}

TEST(MonteCarlo, SeedsAndQuantiles) {
  EXPECT_EQ(trial_seed(42, 0), splitmix64(42));
  EXPECT_NE(trial_seed(42, 0), trial_seed(42, 1));
  // Reference splitmix64 output for state 0 after one increment.
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
  EXPECT_DOUBLE_EQ(quantile({3.0, 1.0, 2.0, 4.0}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({3.0, 1.0, 2.0, 4.0}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile({3.0, 1.0, 2.0, 4.0}, 1.0), 4.0);
  EXPECT_THROW(quantile({}, 0.5), DataError);
}

TEST(MonteCarlo, SingleTrialIsReproducible) {
  const auto a = run_monte_carlo(1, 7);
  const auto b = run_monte_carlo(1, 7);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].seed, b[0].seed);
  EXPECT_EQ(std::memcmp(&a[0].rmse_ml_deg, &b[0].rmse_ml_deg, sizeof(double)), 0);
  EXPECT_EQ(pack_params(a[0].ml), pack_params(b[0].ml));
  EXPECT_EQ(a[0].iterations, b[0].iterations);
}

TEST(MonteCarlo, MinimumNoiseBothEstimatesAccurate) {
  SimulationConfig cfg;
  cfg.ranges = ParamRanges::minimum_noise();
  const auto records = run_monte_carlo(3, 11, cfg);
  for (const auto& r : records) {
    ASSERT_EQ(r.status, TrialStatus::Success) << r.message;
    EXPECT_LT(r.rmse_init_deg, 5.0);
    EXPECT_LT(r.rmse_ml_deg, 5.0);
    EXPECT_TRUE(r.monotone);
  }
}

TEST(Protocol, Layout) {
  Rng rng(12);
  const RotationProtocol p = ninety_degree_protocol(rng, 2.0);
  ASSERT_EQ(p.orientations.size(), 6u);
  for (const auto& face : p.orientations) {
    ASSERT_EQ(face.size(), 5u);
    EXPECT_LT(rotation_angle<double>(face.front(), face.back()), 1e-12);
    for (const Matrix3& R : face) EXPECT_LT(max_abs(R * R.transpose() - Matrix3::Identity()), 1e-12);
  }
  // Face labels describe which body axis points up (within the tilt).
  const Vector3 x_up = p.orientations[2][0] * Vector3::UnitX();
  EXPECT_GT(x_up.z(), std::cos(deg2rad(2.0)) - 1e-12);
}
