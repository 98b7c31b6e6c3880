#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmpop/dataset.hpp"
#include "mmpop/ensemble.hpp"

namespace mmpop {

/// Mean squared difference with double accumulation. Throws UsageError on
/// length mismatch or empty input.
double mse(std::span<const double> preds, std::span<const double> targets);

/// Pearson correlation. nullopt when either side has zero variance.
/// Throws UsageError on length mismatch or fewer than 2 values.
std::optional<double> plcc(std::span<const double> preds, std::span<const double> targets);

enum class ReportVariant { R, C, E };
inline constexpr std::array<ReportVariant, 3> kReportVariants = {ReportVariant::R, ReportVariant::C,
                                                                 ReportVariant::E};
std::string_view report_variant_name(ReportVariant v);

struct MetricCell {
  std::size_t n = 0;
  std::optional<double> mse;
  /// nullopt = undefined (zero variance or too few samples); printed "n/a".
  std::optional<double> plcc;

  friend bool operator==(const MetricCell&, const MetricCell&) = default;
};

using VariantRow = std::array<MetricCell, kMetricCount>;

struct MetricsTable {
  /// Metrics present in the table, in column order.
  std::vector<Metric> metrics = {kMetrics.begin(), kMetrics.end()};
  /// Pooled over all records; indexed by ReportVariant.
  std::array<VariantRow, 3> overall;
  /// author -> per-variant cells.
  std::map<std::string, std::array<VariantRow, 3>> per_author;

  const MetricCell& cell(ReportVariant v, Metric m) const {
    return overall[static_cast<std::size_t>(v)][static_cast<std::size_t>(m)];
  }

  friend bool operator==(const MetricsTable&, const MetricsTable&) = default;
};

/// Cells for one variant from raw-count predictions and truths; entries
/// with nullopt predictions are skipped (R where no author model exists).
VariantRow score_rows(const std::vector<std::array<std::optional<double>, kMetricCount>>& preds,
                      const std::vector<PopularityTargets>& truth);

/// Predictions of the C, R (where available) and E routings, scored in
/// raw-count space, pooled and per author. Throws UsageError when a record
/// is unlabeled.
MetricsTable evaluate(const ensemble::TrainedEnsemble& ensemble,
                      const std::vector<VideoRecord>& records);

enum class ReportFormat { text, structured };

/// Text: R/C/E rows, HEART/SHARE/COMMENT/PLAY x (MSE, PLCC) columns plus a
/// per-author section. Structured: JSON with the same values.
std::string emit_report(const MetricsTable& table, ReportFormat format);

/// Reads a structured report back. Throws DataError on malformed input.
MetricsTable parse_report(const std::string& json);

/// "HEART", "SHARE", "COMMENT", "PLAY".
std::string_view metric_column(Metric m);

}  // namespace mmpop
