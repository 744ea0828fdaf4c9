#pragma once

// Validation metrics: TRIAD attitude, normalized-residual statistics,
// calibrated field-norm profiles and the 90-degree heading table.

#include "magcal/ekf.hpp"
#include "magcal/sensor_models.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace magcal {

struct Histogram {
  std::vector<double> edges;        // bins + 1 ascending edges
  std::vector<std::size_t> counts;  // out-of-range values land in the end bins
};

struct ResidualStats {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double excess_kurtosis = 0.0;
  std::size_t outliers = 0;  // |r| > 5
  Histogram histogram;
};

struct HistogramSpec {
  double lo = -6.0;
  double hi = 6.0;
  int bins = 61;
};

ResidualStats summarize_residuals(std::span<const double> residuals, const HistogramSpec& spec = {});

/// Pooled components of L_t^-1 (y_t - yhat_t) with S_t = L_t L_t^T.
std::vector<double> normalized_residuals(const EkfRun& run, const ImuDataset& data);

ResidualStats residual_stats(const EkfRun& run, const ImuDataset& data, const HistogramSpec& spec = {});

/// |D^-1 (y_m - o)| for every sample.
std::vector<double> norm_profile(const ImuDataset& data, const MagCalibration& cal);

/// R^nb from the mean specific force (primary, gives inclination) and the
/// calibrated mean field (secondary, gives heading). g_n is gravity in the
/// navigation frame, m_n the unit field. Throws DataError for zero or
/// near-parallel (< 1 deg) vectors.
Matrix3 triad(const Vector3& acc_mean, const Vector3& mag_mean, const Vector3& g_n, const Vector3& m_n);

struct SegmentMean {
  Vector3 acc = Vector3::Zero();
  Vector3 mag = Vector3::Zero();  // raw, uncalibrated
};

/// Consecutive stationary positions that differ by +90 deg in heading.
struct SegmentSequence {
  std::string label;
  std::vector<SegmentMean> segments;
};

struct HeadingTable {
  struct Row {
    std::string label;
    std::vector<double> deviations_deg;  // (heading difference) - 90, folded into (-180, 180]
  };
  std::vector<Row> rows;
  double mean_abs_deg = 0.0;
  double max_abs_deg = 0.0;
};

HeadingTable ninety_degree_table(std::span<const SegmentSequence> sequences, const MagCalibration& cal,
                                 const LocalField& field);

}  // namespace magcal
