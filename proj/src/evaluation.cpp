#include "magcal/evaluation.hpp"

#include "magcal/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

namespace magcal {

ResidualStats summarize_residuals(std::span<const double> residuals, const HistogramSpec& spec) {
  ResidualStats st;
  st.count = residuals.size();
  st.histogram.edges.resize(static_cast<std::size_t>(spec.bins) + 1);
  for (int i = 0; i <= spec.bins; ++i)
    st.histogram.edges[static_cast<std::size_t>(i)] = spec.lo + (spec.hi - spec.lo) * i / spec.bins;
  st.histogram.counts.assign(static_cast<std::size_t>(spec.bins), 0);
  if (residuals.empty()) return st;

  double sum = 0.0;
  for (double r : residuals) sum += r;
  st.mean = sum / static_cast<double>(st.count);
  double m2 = 0.0;
  double m4 = 0.0;
  for (double r : residuals) {
    const double d = r - st.mean;
    m2 += d * d;
    m4 += d * d * d * d;
    if (std::abs(r) > 5.0) ++st.outliers;
    const double pos = (r - spec.lo) / (spec.hi - spec.lo) * spec.bins;
    const auto bin = static_cast<long>(std::floor(std::clamp(pos, 0.0, static_cast<double>(spec.bins) - 0.5)));
    ++st.histogram.counts[static_cast<std::size_t>(bin)];
  }
  m2 /= static_cast<double>(st.count);
  m4 /= static_cast<double>(st.count);
  st.stddev = st.count > 1 ? std::sqrt(m2 * st.count / (st.count - 1.0)) : 0.0;
  st.excess_kurtosis = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;
  return st;
}

std::vector<double> normalized_residuals(const EkfRun& run, const ImuDataset& data) {
  if (run.predicted.size() != data.size() || run.innovation_cov.size() != data.size())
    throw DataError("EKF run has no history for this dataset");
  const int m = run.measurement_dim;
  std::vector<double> out;
  out.reserve(data.size() * static_cast<std::size_t>(m));
  for (std::size_t t = 0; t < data.size(); ++t) {
    const Eigen::VectorXd r = (stacked_measurement(data[t], m) - run.predicted[t]).head(m);
    const Eigen::MatrixXd S = run.innovation_cov[t].topLeftCorner(m, m);
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    const Eigen::VectorXd w = llt.matrixL().solve(r);
    for (int i = 0; i < m; ++i) out.push_back(w(i));
  }
  return out;
}

ResidualStats residual_stats(const EkfRun& run, const ImuDataset& data, const HistogramSpec& spec) {
  const std::vector<double> r = normalized_residuals(run, data);
  return summarize_residuals(r, spec);
}

std::vector<double> norm_profile(const ImuDataset& data, const MagCalibration& cal) {
  cal.validate();
  const auto lu = cal.D.partialPivLu();
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& s : data.samples) out.push_back(lu.solve(s.mag - cal.o).norm());
  return out;
}

Matrix3 triad(const Vector3& acc_mean, const Vector3& mag_mean, const Vector3& g_n, const Vector3& m_n) {
  if (!(acc_mean.norm() > 0.0) || !(mag_mean.norm() > 0.0) || !(g_n.norm() > 0.0) || !(m_n.norm() > 0.0))
    throw DataError("TRIAD needs nonzero vectors");
  const auto frame = [](const Vector3& primary, const Vector3& secondary) {
    const Vector3 t1 = primary.normalized();
    const Vector3 c = t1.cross(secondary.normalized());
    if (c.norm() < std::sin(deg2rad(1.0))) throw DataError("TRIAD degenerate: vectors are (nearly) parallel");
    const Vector3 t2 = c.normalized();
    Matrix3 f;
    f << t1, t2, t1.cross(t2);
    return f;
  };
  const Matrix3 body = frame(acc_mean, mag_mean);
  const Matrix3 nav = frame(-g_n, m_n);
  return nav * body.transpose();
}

HeadingTable ninety_degree_table(std::span<const SegmentSequence> sequences, const MagCalibration& cal,
                                 const LocalField& field) {
  HeadingTable table;
  const Vector3 g_n = gravity_nav<double>();
  const Vector3 m_n = field.vector();
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& seq : sequences) {
    if (seq.segments.size() < 2) throw DataError("sequence '" + seq.label + "' needs at least two segments");
    HeadingTable::Row row{seq.label, {}};
    Matrix3 prev = Matrix3::Identity();
    for (std::size_t k = 0; k < seq.segments.size(); ++k) {
      const Vector3 m_b = apply_calibration(seq.segments[k].mag, cal);
      const Matrix3 R_nb = triad(seq.segments[k].acc, m_b, g_n, m_n);
      if (k > 0) {
        // Heading of the nav-frame relative rotation; unlike differencing
        // Euler headings this stays defined when a body axis points up.
        const Matrix3 delta = R_nb * prev.transpose();
        const double dev = rad2deg(wrap_pi(std::atan2(delta(1, 0), delta(0, 0)))) - 90.0;
        row.deviations_deg.push_back(dev);
        sum += std::abs(dev);
        table.max_abs_deg = std::max(table.max_abs_deg, std::abs(dev));
        ++n;
      }
      prev = R_nb;
    }
    table.rows.push_back(std::move(row));
  }
  table.mean_abs_deg = n > 0 ? sum / static_cast<double>(n) : 0.0;
  return table;
}

}  // namespace magcal
