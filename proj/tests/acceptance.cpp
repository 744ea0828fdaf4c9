// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of criteria whose verdict differs from the expectation (PASS unless
// listed with --expect-fail).
//
//   magcal_acceptance [--cli path/to/magcal] [--threads n] [--expect-fail k ...]

#include "magcal/calibration.hpp"
#include "magcal/errors.hpp"
#include "magcal/io.hpp"
#include "magcal/optimizer.hpp"
#include "magcal/simulation.hpp"

#include <CLI11.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

using namespace magcal;
using Eigen::VectorXd;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::pair<SimScenario, ImuDataset> simulate(std::uint64_t seed, const SimulationConfig& cfg) {
  Rng rng(seed);
  SimScenario scn = make_scenario(seed, cfg, rng);
  ImuDataset data = generate_measurements(scn, rng);
  return {std::move(scn), std::move(data)};
}

CalibrationConfig stationary_prefix(const SimulationConfig& cfg) {
  CalibrationConfig c = cfg.calibration;
  c.stationary = SampleRange{0, cfg.trajectory.stationary_samples};
  return c;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

// Rotation outputs collected across criteria for the orthonormality check.
struct RotationAudit {
  double worst = 0.0;
  std::size_t count = 0;
  void add(const Matrix3& r) {
    worst = std::max(worst, max_abs(r * r.transpose() - Matrix3::Identity()));
    worst = std::max(worst, std::abs(r.determinant() - 1.0));
    ++count;
  }
  void add(const UnitQuaternion& q) { add(quat_to_rotmat(q)); }
};

// Covariance reconstructions collected across criteria for the PSD check;
// `worst` is the smallest eigenvalue relative to the largest.
struct PsdAudit {
  double worst = 0.0;
  std::size_t count = 0;
  void add(const NoiseModel& n) {
    for (const Matrix3& S : {n.gyro_cov(), n.accel_cov(), n.mag_cov()}) {
      const Vector3 ev = Eigen::SelfAdjointEigenSolver<Matrix3>(S).eigenvalues();
      if (ev(2) > 0.0) worst = std::min(worst, ev(0) / ev(2));
      if (ev(2) < 0.0) worst = std::min(worst, -1.0);
      ++count;
    }
  }
  void add(const CalibrationParams& p) { add(p.noise); }
};

RotationAudit rotations;
PsdAudit covariances;

Outcome noise_free_identifiability() {
  const auto t0 = std::chrono::steady_clock::now();
  SimulationConfig cfg;
  cfg.ranges = ParamRanges::noise_free();
  double d_err = 0, o_err = 0, mz_err = 0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto [scn, data] = simulate(trial_seed(1, i), cfg);
    const CalibrationResult r = calibrate(data, stationary_prefix(cfg));
    d_err = std::max(d_err, max_abs(r.ml.mag.D - scn.truth.mag.D));
    o_err = std::max(o_err, (r.ml.mag.o - scn.truth.mag.o).lpNorm<Eigen::Infinity>());
    mz_err = std::max(mz_err, std::abs(r.ml.field.vertical() - scn.truth.field.vertical()));
    covariances.add(r.initial);
    covariances.add(r.ml);
  }
  const double secs = seconds_since(t0);
  return {d_err < 1e-4 && o_err < 1e-4 && mz_err < 1e-5 && secs < 300.0,
          fmt("20 scenarios: max |D err| %.2e, max |o err| %.2e, max |m_z err| %.2e, %.1f s", d_err, o_err, mz_err,
              secs)};
}

Outcome initialization_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2);
  std::normal_distribution<double> n;
  double ddt_err = 0, o_err = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const CalibrationParams truth = sample_true_params(rng, ParamRanges::noise_free());
    std::vector<Vector3> ys;
    for (int k = 0; k < 500; ++k) {
      const Vector3 m = Vector3(n(rng), n(rng), n(rng)).normalized();
      ys.push_back(truth.mag.D * m + truth.mag.o);
    }
    const RecoveredCalibration rec = recover_cal(fit_ellipsoid(ys));
    const Matrix3 DDt = truth.mag.D * truth.mag.D.transpose();
    ddt_err = std::max(ddt_err, max_abs(rec.D_tilde * rec.D_tilde.transpose() - DDt));
    o_err = std::max(o_err, (rec.o - truth.mag.o).lpNorm<Eigen::Infinity>());
  }

  // Misalignment step on noise-free trajectory data.
  SimulationConfig cfg;
  cfg.ranges = ParamRanges::noise_free();
  double d_err = 0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto [scn, data] = simulate(trial_seed(2, i), cfg);
    const InitialEstimate init = initialize(data, stationary_prefix(cfg));
    d_err = std::max(d_err, max_abs(init.params.mag.D - scn.truth.mag.D));
    rotations.add(init.R_D);
  }
  return {ddt_err < 1e-6 && o_err < 1e-6 && d_err < 1e-5,
          fmt("10 x 500 points: max |DD^T err| %.2e, max |o err| %.2e; with misalignment (10 scenarios) max |D err| "
              "%.2e; %.1f s",
              ddt_err, o_err, d_err, seconds_since(t0))};
}

std::vector<McRecord> mc_records;

Outcome monte_carlo_heading(unsigned threads) {
  const auto t0 = std::chrono::steady_clock::now();
  SimulationConfig cfg;
  cfg.threads = threads;
  mc_records = run_monte_carlo(25, 42, cfg);
  const McSummary s = summarize_monte_carlo(mc_records);
  for (const auto& r : mc_records) {
    if (r.status != TrialStatus::Success) continue;
    covariances.add(r.truth);
    covariances.add(r.initial);
    covariances.add(r.ml);
  }
  const bool ok = s.successes > 0 && s.ml_not_worse_fraction >= 0.8 && s.rmse_ml_deg.median < s.rmse_init_deg.median;
  return {ok, fmt("25 trials seed 42: %zu successful, ML <= init in %.0f%%, median RMSE init %.3f deg vs ML %.3f "
                  "deg; %.1f s",
                  s.successes, 100.0 * s.ml_not_worse_fraction, s.rmse_init_deg.median, s.rmse_ml_deg.median,
                  seconds_since(t0))};
}

Outcome residual_normality() {
  SimulationConfig cfg;
  const auto [scn, data] = simulate(trial_seed(4, 0), cfg);
  const CalibrationResult cal = calibrate(data, stationary_prefix(cfg));

  TrajectoryConfig traj;
  traj.cycles = 10;
  SimScenario replay;
  replay.truth = cal.ml;
  replay.trajectory = generate_trajectory(traj);
  Rng rng(trial_seed(4, 1));
  const ImuDataset fresh = generate_measurements(replay, rng);
  EkfConfig ekf;
  ekf.store_history = true;
  const EkfRun run = ekf_run(fresh, cal.ml, ekf);
  for (const auto& q : run.orientations) rotations.add(q);
  const ResidualStats st = residual_stats(run, fresh);
  const bool ok = fresh.size() >= 3000 && std::abs(st.mean) <= 0.05 && st.stddev >= 0.9 && st.stddev <= 1.1;
  return {ok, fmt("N = %zu samples (%zu residuals) at the calibrated parameters: mean %.4f, std %.4f", fresh.size(),
                  st.count, st.mean, st.stddev)};
}

Outcome norm_restoration() {
  SimulationConfig low;
  low.ranges = ParamRanges::minimum_noise();
  std::string detail;
  bool ok = true;
  for (std::uint64_t i = 0; i < 3; ++i) {
    const auto [scn, data] = simulate(trial_seed(5, i), low);
    const CalibrationResult cal = calibrate(data, stationary_prefix(low));
    Rng rng(trial_seed(5, 100 + i));
    const ImuDataset held_out = generate_measurements(scn, rng);
    const std::vector<double> norms = norm_profile(held_out, cal.ml.mag);
    double mean = 0;
    for (double v : norms) mean += v;
    mean /= static_cast<double>(norms.size());
    ok = ok && mean >= 0.99 && mean <= 1.01;
    detail += fmt("%s%.4f", i ? ", " : "calibrated mean norm ", mean);
  }
  double min_spread = 1e300;
  for (std::uint64_t i = 0; i < 3; ++i) {
    const auto [scn, data] = simulate(trial_seed(5, 200 + i), SimulationConfig{});
    double lo = 1e300, hi = 0;
    for (const auto& s : data.samples) {
      lo = std::min(lo, s.mag.norm());
      hi = std::max(hi, s.mag.norm());
    }
    min_spread = std::min(min_spread, hi - lo);
  }
  ok = ok && min_spread > 0.5;
  return {ok, detail + fmt("; raw norm spread under default distortions >= %.3f", min_spread)};
}

struct TableMeans {
  double init = 0.0;
  double ml = 0.0;
  std::size_t deviations = 0;
  std::string per_scenario;
};

// Calibrate on a rotation log of `cycles` sweeps, then run the 24-deviation
// protocol with `samples_per_position` averaged samples per stationary period.
TableMeans protocol_tables(std::size_t cycles, std::size_t samples_per_position) {
  SimulationConfig low;
  low.ranges = ParamRanges::minimum_noise();
  low.trajectory.cycles = cycles;
  TableMeans out;
  double sum_init = 0, sum_ml = 0;
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto [scn, data] = simulate(trial_seed(6, i), low);
    const CalibrationResult cal = calibrate(data, stationary_prefix(low));
    Rng rng(trial_seed(6, 100 + i));
    const RotationProtocol protocol = ninety_degree_protocol(rng, 2.0);
    for (const auto& face : protocol.orientations)
      for (const Matrix3& r : face) rotations.add(r);
    const auto seqs = simulate_protocol(protocol, scn.truth, samples_per_position, rng);
    const HeadingTable t_init = ninety_degree_table(seqs, cal.initial.mag, cal.initial.field);
    const HeadingTable t_ml = ninety_degree_table(seqs, cal.ml.mag, cal.ml.field);
    std::size_t n = 0;
    for (const auto& row : t_ml.rows) n += row.deviations_deg.size();
    out.deviations += n;
    sum_init += t_init.mean_abs_deg * static_cast<double>(n);
    sum_ml += t_ml.mean_abs_deg * static_cast<double>(n);
    out.per_scenario += fmt("%s%.2f/%.2f", i ? ", " : "", t_init.mean_abs_deg, t_ml.mean_abs_deg);
  }
  out.init = sum_init / static_cast<double>(out.deviations);
  out.ml = sum_ml / static_cast<double>(out.deviations);
  return out;
}

// Verdict on a slow 10 s calibration log and 500-sample stationary periods,
// the shape of a bench experiment; the 4 s Monte Carlo log is reported too.
Outcome ninety_degree_analog() {
  const TableMeans bench = protocol_tables(3, 500);
  const TableMeans short_log = protocol_tables(1, 100);
  return {bench.ml <= bench.init && bench.ml < 1.3,
          fmt("5 scenarios x %zu deviations, 10 s log: mean |dev| init %.3f deg, ML %.3f deg (per scenario %s); "
              "4 s log, 100-sample periods: init %.3f deg, ML %.3f deg (per scenario %s)",
              bench.deviations / 5, bench.init, bench.ml, bench.per_scenario.c_str(), short_log.init, short_log.ml,
              short_log.per_scenario.c_str())};
}

Outcome optimizer_contracts() {
  std::size_t monotone = 0, successes = 0;
  for (const auto& r : mc_records) {
    if (r.status != TrialStatus::Success) continue;
    ++successes;
    if (r.monotone) ++monotone;
  }
  SimulationConfig cfg;
  double worst = 0;
  std::size_t checked = 0;
  std::string per;
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto [scn, data] = simulate(trial_seed(7, i), cfg);
    const InitialEstimate init = initialize(data, stationary_prefix(cfg));
    const CostFunction f = [&](const VectorXd& v) { return nll_cost(data, unpack_params(ParamVector(v))); };
    const VectorXd x = pack_params(init.params);
    const VectorXd g1 = numerical_gradient(f, x, 1e-6, 0);
    const VectorXd g2 = numerical_gradient(f, x, 0.5e-6, 0);
    double gap = 0;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      if (std::abs(g1(j)) <= 1e-6) continue;
      gap = std::max(gap, std::abs(g1(j) - g2(j)) / std::abs(g1(j)));
      ++checked;
    }
    worst = std::max(worst, gap);
    per += fmt("%s%.1e (cost %.4g%s)", i ? ", " : "", gap, f(x), init.quadric.pd_projected ? ", PD-projected fit" : "");
  }
  const bool ok = successes > 0 && monotone == successes && worst <= 0.01;
  return {ok, fmt("monotone cost on %zu/%zu MC trials; gradient h vs h/2 at initial estimate over %zu components, "
                  "worst relative gap per scenario: %s",
                  monotone, successes, checked, per.c_str())};
}

Outcome codec_and_structure() {
  Rng rng(8);
  std::normal_distribution<double> n;
  std::size_t round_trips = 0;
  bool bit_exact = true;
  const auto check = [&](const ParamVector& v) {
    const ParamVector back = pack_params(unpack_params(v));
    bit_exact = bit_exact && std::memcmp(back.data(), v.data(), sizeof(double) * 34) == 0;
    covariances.add(unpack_params(v));
    ++round_trips;
  };
  for (int k = 0; k < 1000; ++k) {
    ParamVector v;
    for (int i = 0; i < 34; ++i) v(i) = n(rng);
    check(v);
  }
  for (const auto& r : mc_records)
    for (const auto* p : {&r.truth, &r.initial, &r.ml}) check(pack_params(*p));

  for (int k = 0; k < 1000; ++k) {
    const Vector3 eta(3 * n(rng), 3 * n(rng), 3 * n(rng));
    rotations.add(exp_map(eta));
    rotations.add(euler_to_rotmat(n(rng), n(rng), n(rng)));
    rotations.add(rotmat_to_quat<double>(quat_to_rotmat(exp_map(eta))));
  }
  const bool ok = bit_exact && covariances.worst >= -1e-12 && rotations.worst < 1e-10;
  return {ok, fmt("%zu bit-exact 34-element round trips: %s; %zu covariances, min relative eigenvalue %.3e; %zu rotations, "
                  "max orthonormality error %.2e",
                  round_trips, bit_exact ? "yes" : "no", covariances.count, covariances.worst, rotations.count,
                  rotations.worst)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const std::string& cli) {
  std::string detail;
  bool ok = true;

  // Library: per-trial tables for two thread counts.
  const auto table = [](unsigned threads) {
    SimulationConfig cfg;
    cfg.threads = threads;
    std::ostringstream out;
    write_mc_table(run_monte_carlo(5, 42, cfg), out);
    return out.str();
  };
  const std::string lib1 = table(1);
  ok = ok && lib1 == table(4);
  detail = std::string("library threads 1 vs 4: ") + (ok ? "identical" : "DIFFER");

  if (!cli.empty()) {
    const auto dir = std::filesystem::temp_directory_path() / fmt("magcal_acceptance_%d", static_cast<int>(getpid()));
    std::filesystem::create_directories(dir);
    std::vector<std::string> outputs;
    bool ran = true;
    for (const char* threads : {"1", "1", "4"}) {
      const auto path = dir / fmt("run%zu.txt", outputs.size());
      const std::string cmd = "\"" + cli + "\" simulate --trials 5 --seed 42 --threads " + threads + " > \"" +
                              path.string() + "\"";
      ran = ran && std::system(cmd.c_str()) == 0;
      outputs.push_back(slurp(path));
    }
    std::filesystem::remove_all(dir);
    const bool same = ran && !outputs[0].empty() && outputs[0] == outputs[1] && outputs[0] == outputs[2];
    ok = ok && same;
    detail += std::string("; CLI stdout two runs + threads 4: ") + (same ? "byte-identical" : "DIFFER") +
              fmt(" (%zu bytes)", outputs[0].size());
    ok = ok && outputs[0].rfind(lib1, 0) == 0;
    detail += outputs[0].rfind(lib1, 0) == 0 ? ", table matches library" : ", table differs from library";
  } else {
    detail += "; CLI not given";
    ok = false;
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"magcal acceptance suite"};
  std::string cli;
  unsigned threads = 0;
  app.add_option("--cli", cli, "Path to the magcal executable");
  app.add_option("--threads", threads, "Workers for the Monte Carlo study (0 = all cores)");
  std::vector<std::size_t> expect_fail;
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail; still printed as FAIL");
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"noise-free identifiability", noise_free_identifiability},
      {"initialization round trip", initialization_round_trip},
      {"Monte Carlo heading comparison", [&] { return monte_carlo_heading(threads); }},
      {"residual normality", residual_normality},
      {"norm restoration", norm_restoration},
      {"90-degree table analog", ninety_degree_analog},
      {"optimizer contracts", optimizer_contracts},
      {"codec and structure", codec_and_structure},
      {"determinism", [&] { return determinism(cli); }},
  };

  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool known = std::find(expect_fail.begin(), expect_fail.end(), i + 1) != expect_fail.end();
    if (o.pass == known) ++unexpected;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].name
              << "): " << o.detail << (known ? " [expected to fail]" : "") << std::endl;
  }
  return unexpected;
}
