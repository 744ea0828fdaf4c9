// magcal command-line driver.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure. Errors
// are reported as a single stderr line "magcal:<kind>-error: <message>".

#include "magcal/calibration.hpp"
#include "magcal/errors.hpp"
#include "magcal/io.hpp"
#include "magcal/simulation.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

using namespace magcal;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

int report_error(const char* kind, std::string message, int code) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  std::cerr << "magcal:" << kind << "-error: " << message << '\n';
  return code;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void print_params(std::ostream& out, const char* name, const CalibrationParams& p) {
  out << name << ":\n";
  for (int i = 0; i < 3; ++i)
    out << "  D[" << i << "] = " << fixed(p.mag.D(i, 0)) << ' ' << fixed(p.mag.D(i, 1)) << ' '
        << fixed(p.mag.D(i, 2)) << '\n';
  out << "  o    = " << fixed(p.mag.o(0)) << ' ' << fixed(p.mag.o(1)) << ' ' << fixed(p.mag.o(2)) << '\n';
  const Vector3 m = p.field.vector();
  out << "  m^n  = " << fixed(m(0)) << ' ' << fixed(m(1)) << ' ' << fixed(m(2)) << "  (dip "
      << fixed(rad2deg(p.field.dip), 3) << " deg)\n";
}

void print_residuals(std::ostream& out, const ResidualStats& r) {
  out << "residuals: n=" << r.count << " mean=" << fixed(r.mean, 4) << " std=" << fixed(r.stddev, 4)
      << " excess_kurtosis=" << fixed(r.excess_kurtosis, 3) << " outliers=" << r.outliers << '\n';
}

void print_quantiles(std::ostream& out, const char* name, const Quantiles& q) {
  out << name << ": p10=" << fixed(q.p10, 4) << " p25=" << fixed(q.p25, 4) << " median=" << fixed(q.median, 4)
      << " p75=" << fixed(q.p75, 4) << " p90=" << fixed(q.p90, 4) << '\n';
}

struct Options {
  RunConfig run;
  std::string stationary;
  std::string report;
  std::string segments;
  std::string noise = "default";
  bool use_initial = false;
};

void add_optimizer_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--max-iterations", o.run.optimizer.max_iterations, "Optimizer iteration limit")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--threads", o.run.threads, "Worker threads (0 = all cores)");
}

int cmd_calibrate(Options& o) {
  if (!o.stationary.empty()) o.run.stationary = parse_range(o.stationary);
  o.run.validate();
  const ImuDataset data = load_imu_csv(o.run.input);
  CalibrationConfig cfg;
  cfg.stationary = o.run.stationary;
  cfg.decimation = o.run.decimation;
  cfg.optimizer = o.run.optimizer;
  cfg.optimizer.threads = o.run.threads;
  const CalibrationResult result = calibrate(data, cfg);
  if (!o.run.output.empty()) write_report(result, o.run, o.run.output);

  std::cout << "cost: initial=" << fixed(result.cost_initial, 4) << " ml=" << fixed(result.cost_ml, 4)
            << " iterations=" << result.trace.iterations.size() << " status=" << to_string(result.trace.status)
            << '\n';
  print_residuals(std::cout, result.residuals);
  print_params(std::cout, "initial", result.initial);
  print_params(std::cout, "ml", result.ml);
  const auto& d = result.diagnostics;
  if (d.nonstationary_warning) std::cout << "warning: stationary segment shows motion\n";
  if (d.pd_projected) std::cout << "warning: ellipsoid fit needed positive-definite projection\n";
  if (!d.misalignment_converged) std::cout << "warning: misalignment estimate did not converge\n";
  if (d.vertical_field_warning) std::cout << "warning: estimated field is nearly vertical\n";
  if (d.field_sign_warning) std::cout << "warning: estimated field has a non-positive north component\n";
  if (d.regularized_steps > 0) std::cout << "warning: " << d.regularized_steps << " regularized filter steps\n";
  return kOk;
}

int cmd_apply(Options& o) {
  const ImuDataset data = load_imu_csv(o.run.input);
  const LoadedReport report = load_report(o.report);
  const CalibrationParams& p = o.use_initial ? report.initial : report.ml;
  std::ostringstream out;
  write_calibrated_csv(data, p.mag, out);
  write_text_file(o.run.output, out.str());
  return kOk;
}

int cmd_validate(Options& o) {
  const ImuDataset data = load_imu_csv(o.run.input);
  const LoadedReport report = load_report(o.report);
  const ValidationReport v = validate_on(data, o.use_initial ? report.initial : report.ml);
  std::cout << "cost: " << fixed(v.cost, 4) << '\n';
  print_residuals(std::cout, v.residuals);
  if (!v.norms.empty()) {
    const auto [lo, hi] = std::minmax_element(v.norms.begin(), v.norms.end());
    double sum = 0.0;
    for (double n : v.norms) sum += n;
    std::cout << "norm: mean=" << fixed(sum / static_cast<double>(v.norms.size())) << " min=" << fixed(*lo)
              << " max=" << fixed(*hi) << '\n';
  }
  if (!o.run.output.empty()) write_text_file(o.run.output, validation_text(v));
  return kOk;
}

int cmd_simulate(Options& o) {
  o.run.validate();
  SimulationConfig cfg;
  if (o.noise == "default")
    cfg.ranges = ParamRanges{};
  else if (o.noise == "minimum")
    cfg.ranges = ParamRanges::minimum_noise();
  else if (o.noise == "none")
    cfg.ranges = ParamRanges::noise_free();
  cfg.dip_deg = o.run.dip_deg;
  cfg.trajectory.stationary_samples = o.run.stationary_samples;
  cfg.trajectory.samples_per_axis = o.run.samples_per_axis;
  cfg.trajectory.cycles = o.run.cycles;
  cfg.calibration.optimizer = o.run.optimizer;
  cfg.threads = o.run.threads;
  const auto records = run_monte_carlo(o.run.trials, o.run.seed, cfg);

  std::ostringstream table;
  write_mc_table(records, table);
  if (o.run.output.empty())
    std::cout << table.str();
  else
    write_text_file(o.run.output, table.str());

  const McSummary s = summarize_monte_carlo(records);
  std::cout << "trials: " << s.trials << " successful: " << s.successes << '\n';
  if (s.successes > 0) {
    print_quantiles(std::cout, "rmse_init_deg", s.rmse_init_deg);
    print_quantiles(std::cout, "rmse_ml_deg", s.rmse_ml_deg);
    std::cout << "ml_not_worse_fraction: " << fixed(s.ml_not_worse_fraction, 4) << '\n';
  }
  for (const auto& r : records)
    if (r.status != TrialStatus::Success) std::cout << "failed seed " << r.seed << ": " << r.message << '\n';
  return kOk;
}

int cmd_heading_table(Options& o) {
  const ImuDataset data = load_imu_csv(o.run.input);
  const LoadedReport report = load_report(o.report);
  const CalibrationParams& p = o.use_initial ? report.initial : report.ml;
  const auto sequences = parse_segments(o.segments, data);
  const HeadingTable table = ninety_degree_table(sequences, p.mag, p.field);
  const std::string text = heading_table_text(table);
  std::cout << text;
  if (!o.run.output.empty()) write_text_file(o.run.output, text);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Magnetometer calibration with inertial sensors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  Options o;

  auto* cal = app.add_subcommand("calibrate", "Estimate calibration parameters from an IMU log");
  cal->add_option("--input", o.run.input, "IMU CSV")->required();
  cal->add_option("--stationary", o.stationary, "Stationary sample range a:b (half-open)");
  cal->add_option("--out", o.run.output, "Report path");
  cal->add_option("--decimation", o.run.decimation, "Keep every n-th sample");
  cal->add_option("--seed", o.run.seed, "Recorded in the report");
  add_optimizer_flags(cal, o);

  auto* apply = app.add_subcommand("apply", "Write calibrated magnetometer columns");
  apply->add_option("--input", o.run.input, "IMU CSV")->required();
  apply->add_option("--report", o.report, "Calibration report")->required();
  apply->add_option("--out", o.run.output, "Output CSV")->required();
  apply->add_flag("--initial", o.use_initial, "Use the initial instead of the ML estimate");

  auto* val = app.add_subcommand("validate", "Residual statistics and norm profile on held-out data");
  val->add_option("--input", o.run.input, "IMU CSV")->required();
  val->add_option("--report", o.report, "Calibration report")->required();
  val->add_option("--out", o.run.output, "Optional JSON output");
  val->add_flag("--initial", o.use_initial, "Use the initial instead of the ML estimate");

  auto* sim = app.add_subcommand("simulate", "Monte Carlo heading study");
  sim->add_option("--trials", o.run.trials, "Number of trials")->required()->check(CLI::PositiveNumber);
  sim->add_option("--seed", o.run.seed, "Master seed")->required();
  sim->add_option("--out", o.run.output, "Per-trial table path (stdout when omitted)");
  sim->add_option("--dip", o.run.dip_deg, "Dip angle, degrees");
  sim->add_option("--cycles", o.run.cycles, "Repetitions of the three-axis sweep")->check(CLI::PositiveNumber);
  sim->add_option("--noise", o.noise, "Noise ranges")->check(CLI::IsMember({"default", "minimum", "none"}));
  add_optimizer_flags(sim, o);

  auto* head = app.add_subcommand("heading-table", "90-degree heading deviation table");
  head->add_option("--input", o.run.input, "IMU CSV")->required();
  head->add_option("--report", o.report, "Calibration report")->required();
  head->add_option("--segments", o.segments, "label=a:b,c:d;label2=...")->required();
  head->add_option("--out", o.run.output, "Optional table path");
  head->add_flag("--initial", o.use_initial, "Use the initial instead of the ML estimate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kUsage);
  }

  try {
    if (cal->parsed()) return cmd_calibrate(o);
    if (apply->parsed()) return cmd_apply(o);
    if (val->parsed()) return cmd_validate(o);
    if (sim->parsed()) return cmd_simulate(o);
    if (head->parsed()) return cmd_heading_table(o);
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::Usage: return report_error("usage", e.what(), kUsage);
      case ErrorKind::Data: return report_error("data", e.what(), kData);
      case ErrorKind::Numerical: return report_error("numerical", e.what(), kNumerical);
    }
  } catch (const std::exception& e) {
    return report_error("numerical", e.what(), kNumerical);
  }
  return kUsage;
}
