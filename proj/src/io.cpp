#include "magcal/io.hpp"

#include "magcal/errors.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace magcal {

using json = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 10> kColumns = {"t", "gx", "gy", "gz", "ax", "ay", "az", "mx", "my", "mz"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::size_t> parse_index(std::string_view s) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

Error usage(const std::string& what) { return Error(ErrorKind::Usage, what); }

json vec_json(const Vector3& v) { return json::array({v(0), v(1), v(2)}); }

json mat_json(const Matrix3& m) {
  json rows = json::array();
  for (int i = 0; i < 3; ++i) rows.push_back(json::array({m(i, 0), m(i, 1), m(i, 2)}));
  return rows;
}

json params_json(const CalibrationParams& p) {
  const ParamVector packed = pack_params(p);
  json j;
  j["D"] = mat_json(p.mag.D);
  j["o"] = vec_json(p.mag.o);
  j["m_n"] = vec_json(p.field.vector());
  j["dip_deg"] = rad2deg(p.field.dip);
  j["gyro_bias"] = vec_json(p.noise.gyro_bias);
  j["gyro_cov"] = mat_json(p.noise.gyro_cov());
  j["accel_cov"] = mat_json(p.noise.accel_cov());
  j["mag_cov"] = mat_json(p.noise.mag_cov());
  j["packed"] = std::vector<double>(packed.data(), packed.data() + packed.size());
  return j;
}

CalibrationParams params_from_json(const json& j, const std::string& source, const char* key) {
  if (!j.contains(key) || !j[key].contains("packed"))
    throw DataError(source + ": report has no '" + std::string(key) + ".packed' entry");
  std::vector<double> packed;
  try {
    packed = j[key]["packed"].get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw DataError(source + ": " + key + ".packed: " + e.what());
  }
  if (packed.size() != static_cast<std::size_t>(kParamCount))
    throw DataError(source + ": " + key + ".packed has " + std::to_string(packed.size()) + " entries, expected " +
                    std::to_string(kParamCount));
  return unpack_params(std::span<const double>(packed));
}

json histogram_json(const Histogram& h) {
  json j;
  j["edges"] = h.edges;
  j["counts"] = h.counts;
  return j;
}

json residuals_json(const ResidualStats& r) {
  json j;
  j["count"] = r.count;
  j["mean"] = r.mean;
  j["stddev"] = r.stddev;
  j["excess_kurtosis"] = r.excess_kurtosis;
  j["outliers_abs_gt_5"] = r.outliers;
  j["histogram"] = histogram_json(r.histogram);
  return j;
}

json config_json(const RunConfig& c) {
  json j;
  j["input"] = c.input;
  if (c.stationary)
    j["stationary"] = std::to_string(c.stationary->begin) + ":" + std::to_string(c.stationary->end);
  else
    j["stationary"] = "auto";
  j["decimation"] = c.decimation;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  json opt;
  opt["max_iterations"] = c.optimizer.max_iterations;
  opt["grad_step_relative"] = c.optimizer.grad_step_relative;
  opt["armijo_c1"] = c.optimizer.armijo_c1;
  opt["backtrack_factor"] = c.optimizer.backtrack_factor;
  opt["max_backtracks"] = c.optimizer.max_backtracks;
  opt["relative_cost_tolerance"] = c.optimizer.relative_cost_tolerance;
  opt["gradient_tolerance"] = c.optimizer.gradient_tolerance;
  j["optimizer"] = opt;
  return j;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void RunConfig::validate() const {
  if (trials == 0) throw usage("trial count must be at least 1");
  if (decimation == 0) throw usage("decimation factor must be at least 1");
  if (stationary && stationary->begin >= stationary->end) throw usage("stationary range must be non-empty");
  optimizer.validate();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

SampleRange parse_range(std::string_view text) {
  const auto parts = split(text, ':');
  if (parts.size() != 2) throw usage("range '" + std::string(text) + "' is not of the form a:b");
  const auto a = parse_index(parts[0]);
  const auto b = parse_index(parts[1]);
  if (!a || !b) throw usage("range '" + std::string(text) + "' has non-integer bounds");
  if (*a >= *b) throw usage("range '" + std::string(text) + "' is empty");
  return {*a, *b};
}

ImuDataset parse_imu_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::array<std::size_t, kColumns.size()> index{};
  std::size_t header_fields = 0;
  bool have_header = false;
  ImuDataset data;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (!have_header) {
      for (std::size_t c = 0; c < kColumns.size(); ++c) {
        std::size_t k = 0;
        while (k < fields.size() && fields[k] != kColumns[c]) ++k;
        if (k == fields.size()) throw DataError(where + "missing column '" + std::string(kColumns[c]) + "'");
        index[c] = k;
      }
      header_fields = fields.size();
      have_header = true;
      continue;
    }
    if (fields.size() != header_fields)
      throw DataError(where + "expected " + std::to_string(header_fields) + " fields, found " +
                      std::to_string(fields.size()));
    std::array<double, kColumns.size()> v{};
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
      const auto parsed = parse_double(fields[index[c]]);
      if (!parsed) throw DataError(where + "column '" + std::string(kColumns[c]) + "' is not a number");
      if (!std::isfinite(*parsed)) throw DataError(where + "column '" + std::string(kColumns[c]) + "' is not finite");
      v[c] = *parsed;
    }
    if (!data.empty() && !(v[0] > data.samples.back().t))
      throw DataError(where + "timestamp " + format_double(v[0]) + " does not increase");
    data.samples.push_back({v[0], {v[1], v[2], v[3]}, {v[4], v[5], v[6]}, {v[7], v[8], v[9]}});
  }
  if (!have_header) throw DataError(source + ": empty file");
  if (data.empty()) throw DataError(source + ": no data rows");
  return data;
}

ImuDataset load_imu_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open for reading");
  return parse_imu_csv(in, path);
}

void write_imu_csv(const ImuDataset& data, std::ostream& out) {
  out << "t,gx,gy,gz,ax,ay,az,mx,my,mz\n";
  for (const auto& s : data.samples) {
    out << format_double(s.t);
    for (const Vector3* v : {&s.gyro, &s.accel, &s.mag})
      for (int i = 0; i < 3; ++i) out << ',' << format_double((*v)(i));
    out << '\n';
  }
}

void write_imu_csv(const ImuDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot open for writing");
  write_imu_csv(data, out);
  if (!out) throw DataError(path + ": write failed");
}

void write_calibrated_csv(const ImuDataset& data, const MagCalibration& cal, std::ostream& out) {
  cal.validate();
  const auto lu = cal.D.partialPivLu();
  out << "t,gx,gy,gz,ax,ay,az,mx,my,mz,cmx,cmy,cmz\n";
  for (const auto& s : data.samples) {
    const Vector3 c = lu.solve(s.mag - cal.o);
    out << format_double(s.t);
    for (const Vector3* v : {&s.gyro, &s.accel, &s.mag, &c})
      for (int i = 0; i < 3; ++i) out << ',' << format_double((*v)(i));
    out << '\n';
  }
}

std::string report_text(const CalibrationResult& result, const RunConfig& config) {
  json j;
  j["format_version"] = kReportFormatVersion;
  j["tool_version"] = std::string(kToolVersion);
  j["config"] = config_json(config);
  j["initial"] = params_json(result.initial);
  j["ml"] = params_json(result.ml);

  const auto& init = result.init_details;
  json details;
  details["D_tilde"] = mat_json(init.D_tilde);
  details["R_D"] = mat_json(init.R_D);
  details["ellipsoid_A"] = mat_json(init.quadric.A);
  details["ellipsoid_b"] = vec_json(init.quadric.b);
  details["ellipsoid_c"] = init.quadric.c;
  details["ellipsoid_residual_rms"] = init.quadric.residual_rms;
  details["misalignment_iterations"] = init.misalignment.iterations;
  j["initialization"] = details;

  json trace;
  trace["status"] = std::string(to_string(result.trace.status));
  trace["initial_cost"] = result.trace.initial_cost;
  trace["final_cost"] = result.trace.final_cost;
  trace["iterations"] = result.trace.iterations.size();
  trace["cost_evaluations"] = result.trace.cost_evaluations;
  trace["monotone"] = result.trace.monotone();
  json costs = json::array();
  for (const auto& it : result.trace.iterations) costs.push_back(it.cost);
  trace["cost_history"] = costs;
  j["optimizer_trace"] = trace;

  j["residuals"] = residuals_json(result.residuals);

  const auto& d = result.diagnostics;
  json diag;
  diag["stationary_samples"] = d.stationary_samples;
  diag["nonstationary_warning"] = d.nonstationary_warning;
  diag["pd_projected"] = d.pd_projected;
  diag["misalignment_converged"] = d.misalignment_converged;
  diag["misalignment_residual"] = d.misalignment_residual;
  diag["vertical_field_warning"] = d.vertical_field_warning;
  diag["field_clamped"] = d.field_clamped;
  diag["field_sign_warning"] = d.field_sign_warning;
  diag["regularized_steps"] = d.regularized_steps;
  j["diagnostics"] = diag;
  return j.dump(2) + "\n";
}

void write_report(const CalibrationResult& result, const RunConfig& config, const std::string& path) {
  write_text_file(path, report_text(result, config));
}

LoadedReport parse_report(std::string_view text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(source + ": malformed report: " + e.what());
  }
  LoadedReport r;
  if (!j.contains("format_version") || !j["format_version"].is_number_integer())
    throw DataError(source + ": report has no format_version");
  r.format_version = j["format_version"].get<int>();
  if (r.format_version != kReportFormatVersion)
    throw DataError(source + ": unsupported report format_version " + std::to_string(r.format_version));
  if (j.contains("tool_version") && j["tool_version"].is_string()) r.tool_version = j["tool_version"].get<std::string>();
  r.initial = params_from_json(j, source, "initial");
  r.ml = params_from_json(j, source, "ml");
  if (j.contains("config") && j["config"].contains("seed") && j["config"]["seed"].is_number_unsigned())
    r.seed = j["config"]["seed"].get<std::uint64_t>();
  return r;
}

LoadedReport load_report(const std::string& path) { return parse_report(read_file(path), path); }

std::string validation_text(const ValidationReport& report) {
  json j;
  j["format_version"] = kReportFormatVersion;
  j["tool_version"] = std::string(kToolVersion);
  j["cost"] = report.cost;
  j["residuals"] = residuals_json(report.residuals);
  j["norm_profile"] = report.norms;
  return j.dump(2) + "\n";
}

std::string heading_table_text(const HeadingTable& table) {
  std::ostringstream out;
  out << "label,deviations_deg\n";
  for (const auto& row : table.rows) {
    out << row.label;
    for (double d : row.deviations_deg) out << ',' << format_double(d);
    out << '\n';
  }
  out << "mean_abs_deg," << format_double(table.mean_abs_deg) << '\n';
  out << "max_abs_deg," << format_double(table.max_abs_deg) << '\n';
  return out.str();
}

void write_mc_table(std::span<const McRecord> records, std::ostream& out) {
  out << "seed,status,rmse_init_deg,rmse_ml_deg,cost_init,cost_ml,iterations\n";
  for (const auto& r : records) {
    out << r.seed << ',' << (r.status == TrialStatus::Success ? "success" : "failed") << ','
        << format_double(r.rmse_init_deg) << ',' << format_double(r.rmse_ml_deg) << ','
        << format_double(r.cost_init) << ',' << format_double(r.cost_ml) << ',' << r.iterations << '\n';
  }
}

std::vector<SegmentSequence> parse_segments(std::string_view spec, const ImuDataset& data) {
  std::vector<SegmentSequence> out;
  for (const std::string_view group : split(spec, ';')) {
    if (group.empty()) continue;
    const std::size_t eq = group.find('=');
    if (eq == std::string_view::npos) throw usage("segment group '" + std::string(group) + "' has no label=");
    SegmentSequence seq{std::string(trim(group.substr(0, eq))), {}};
    for (const std::string_view r : split(group.substr(eq + 1), ',')) {
      const SampleRange range = parse_range(r);
      if (range.end > data.size())
        throw DataError("segment " + std::string(r) + " of '" + seq.label + "' exceeds the " +
                        std::to_string(data.size()) + " samples");
      SegmentMean mean;
      for (std::size_t k = range.begin; k < range.end; ++k) {
        mean.acc += data[k].accel;
        mean.mag += data[k].mag;
      }
      const auto n = static_cast<double>(range.end - range.begin);
      mean.acc /= n;
      mean.mag /= n;
      seq.segments.push_back(mean);
    }
    out.push_back(std::move(seq));
  }
  if (out.empty()) throw usage("segment spec is empty");
  return out;
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << text;
  if (!out) throw DataError(path + ": write failed");
}

}  // namespace magcal
