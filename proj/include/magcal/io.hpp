#pragma once

// Plain-text data and report formats.
//
// IMU data: CSV with header t,gx,gy,gz,ax,ay,az,mx,my,mz (s, rad/s, m/s^2,
// raw magnetometer units). Reports: JSON documents with a format_version
// field; doubles are written with round-trip precision so parameters reload
// bit-exactly.

#include "magcal/calibration.hpp"
#include "magcal/evaluation.hpp"
#include "magcal/simulation.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace magcal {

inline constexpr int kReportFormatVersion = 1;
inline constexpr std::string_view kToolVersion = "magcal 1.0.0";

/// Everything a run needs besides the data itself; echoed into reports.
struct RunConfig {
  std::string input;
  std::string output;
  std::optional<SampleRange> stationary;
  std::size_t decimation = 1;
  OptimizerConfig optimizer;
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  double dip_deg = 71.2;
  std::size_t stationary_samples = 100;
  std::size_t samples_per_axis = 100;
  std::size_t cycles = 1;
  unsigned threads = 1;

  /// Throws Error(Usage) for a zero trial count or decimation factor.
  void validate() const;
};

/// %.17g formatting.
std::string format_double(double v);

/// Parses "a:b" (half-open sample indices). Throws Error(Usage).
SampleRange parse_range(std::string_view text);

/// Throws DataError naming the path and line for unreadable files, missing
/// columns, non-numeric or non-finite fields and non-increasing timestamps.
ImuDataset load_imu_csv(const std::string& path);
ImuDataset parse_imu_csv(std::istream& in, const std::string& source = "<stream>");
void write_imu_csv(const ImuDataset& data, const std::string& path);
void write_imu_csv(const ImuDataset& data, std::ostream& out);

/// Input columns followed by cmx,cmy,cmz = D^-1 (y_m - o).
void write_calibrated_csv(const ImuDataset& data, const MagCalibration& cal, std::ostream& out);

std::string report_text(const CalibrationResult& result, const RunConfig& config);
void write_report(const CalibrationResult& result, const RunConfig& config, const std::string& path);

struct LoadedReport {
  int format_version = 0;
  std::string tool_version;
  CalibrationParams initial;
  CalibrationParams ml;
  std::optional<std::uint64_t> seed;
};

LoadedReport parse_report(std::string_view text, const std::string& source = "<report>");
LoadedReport load_report(const std::string& path);

std::string validation_text(const ValidationReport& report);
std::string heading_table_text(const HeadingTable& table);

/// One row per record: seed,status,rmse_init_deg,rmse_ml_deg,cost_init,cost_ml,iterations.
void write_mc_table(std::span<const McRecord> records, std::ostream& out);

/// "label=a:b,c:d;label2=..." -> per-segment means of accelerometer and raw
/// magnetometer samples. Throws Error(Usage) for malformed specs and
/// DataError for ranges outside the dataset.
std::vector<SegmentSequence> parse_segments(std::string_view spec, const ImuDataset& data);

void write_text_file(const std::string& path, std::string_view text);

}  // namespace magcal
