#include "mmpop/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "mmpop/errors.hpp"

namespace mmpop {

using nlohmann::ordered_json;

double mse(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw UsageError("mse: length mismatch");
  if (preds.empty()) throw UsageError("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - targets[i];
    acc += d * d;
  }
  return acc / static_cast<double>(preds.size());
}

std::optional<double> plcc(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw UsageError("plcc: length mismatch");
  if (preds.size() < 2) throw UsageError("plcc needs at least 2 values");
  const double n = static_cast<double>(preds.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    mx += preds[i];
    my += targets[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double dx = preds[i] - mx, dy = targets[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::string_view report_variant_name(ReportVariant v) {
  switch (v) {
    case ReportVariant::R: return "R";
    case ReportVariant::C: return "C";
    case ReportVariant::E: return "E";
  }
  return "?";
}

std::string_view metric_column(Metric m) {
  switch (m) {
    case Metric::hearts: return "HEART";
    case Metric::shares: return "SHARE";
    case Metric::comments: return "COMMENT";
    case Metric::plays: return "PLAY";
  }
  return "?";
}

VariantRow score_rows(const std::vector<std::array<std::optional<double>, kMetricCount>>& preds,
                      const std::vector<PopularityTargets>& truth) {
  if (preds.size() != truth.size()) throw UsageError("score_rows: length mismatch");
  VariantRow row;
  for (Metric m : kMetrics) {
    const auto mi = static_cast<std::size_t>(m);
    std::vector<double> p, y;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (!preds[i][mi]) continue;
      p.push_back(*preds[i][mi]);
      y.push_back(static_cast<double>(truth[i].get(m)));
    }
    auto& cell = row[mi];
    cell.n = p.size();
    if (!p.empty()) cell.mse = mse(p, y);
    if (p.size() >= 2) cell.plcc = plcc(p, y);
  }
  return row;
}

MetricsTable evaluate(const ensemble::TrainedEnsemble& ens, const std::vector<VideoRecord>& records) {
  std::vector<PopularityTargets> truth;
  truth.reserve(records.size());
  for (const auto& r : records) {
    if (!r.labeled()) throw UsageError("cannot evaluate unlabeled record " + r.video_id);
    truth.push_back(*r.targets);
  }
  const auto t = ens.transform();
  auto to_counts = [&](ensemble::Routing routing) {
    auto z = ensemble::predict_transformed(records, ens, routing);
    std::vector<std::array<std::optional<double>, kMetricCount>> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      for (std::size_t m = 0; m < kMetricCount; ++m) {
        if (z[i][m]) out[i][m] = static_cast<double>(t.inverse(*z[i][m]));
      }
    }
    return out;
  };
  std::array<std::vector<std::array<std::optional<double>, kMetricCount>>, 3> preds = {
      to_counts(ensemble::Routing::author_only), to_counts(ensemble::Routing::global_only),
      to_counts(ensemble::Routing::selected)};

  MetricsTable table;
  for (std::size_t v = 0; v < 3; ++v) table.overall[v] = score_rows(preds[v], truth);

  std::map<std::string, std::vector<std::size_t>> by_author;
  for (std::size_t i = 0; i < records.size(); ++i) by_author[records[i].author_id].push_back(i);
  for (const auto& [author, idx] : by_author) {
    std::vector<PopularityTargets> sub_truth;
    for (std::size_t i : idx) sub_truth.push_back(truth[i]);
    auto& rows = table.per_author[author];
    for (std::size_t v = 0; v < 3; ++v) {
      std::vector<std::array<std::optional<double>, kMetricCount>> sub;
      for (std::size_t i : idx) sub.push_back(preds[v][i]);
      rows[v] = score_rows(sub, sub_truth);
    }
  }
  return table;
}

namespace {

std::string fmt_mse(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4e", *v);
  return buf;
}

std::string fmt_plcc(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

void grid(std::ostringstream& os, const std::vector<Metric>& metrics,
          const std::array<VariantRow, 3>& rows) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-8s", "");
  os << buf;
  for (Metric m : metrics) {
    std::snprintf(buf, sizeof buf, " %12s %8s", (std::string(metric_column(m)) + " MSE").c_str(),
                  "PLCC");
    os << buf;
  }
  os << '\n';
  for (ReportVariant v : kReportVariants) {
    std::snprintf(buf, sizeof buf, "%-8s", std::string(report_variant_name(v)).c_str());
    os << buf;
    for (Metric m : metrics) {
      const auto& cell = rows[static_cast<std::size_t>(v)][static_cast<std::size_t>(m)];
      std::snprintf(buf, sizeof buf, " %12s %8s", fmt_mse(cell.mse).c_str(),
                    fmt_plcc(cell.plcc).c_str());
      os << buf;
    }
    os << '\n';
  }
}

ordered_json opt_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json rows_json(const std::vector<Metric>& metrics, const std::array<VariantRow, 3>& rows) {
  ordered_json out = ordered_json::object();
  for (ReportVariant v : kReportVariants) {
    ordered_json vj = ordered_json::object();
    for (Metric m : metrics) {
      const auto& c = rows[static_cast<std::size_t>(v)][static_cast<std::size_t>(m)];
      vj[std::string(metric_column(m))] = {{"n", c.n}, {"mse", opt_json(c.mse)},
                                           {"plcc", opt_json(c.plcc)}};
    }
    out[std::string(report_variant_name(v))] = std::move(vj);
  }
  return out;
}

std::optional<double> opt_from(const ordered_json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::array<VariantRow, 3> rows_from(const std::vector<Metric>& metrics, const ordered_json& j) {
  std::array<VariantRow, 3> rows{};
  for (ReportVariant v : kReportVariants) {
    const auto& vj = j.at(std::string(report_variant_name(v)));
    for (Metric m : metrics) {
      const auto& cj = vj.at(std::string(metric_column(m)));
      auto& c = rows[static_cast<std::size_t>(v)][static_cast<std::size_t>(m)];
      c.n = cj.at("n").get<std::size_t>();
      c.mse = opt_from(cj.at("mse"));
      c.plcc = opt_from(cj.at("plcc"));
    }
  }
  return rows;
}

}  // namespace

std::string emit_report(const MetricsTable& table, ReportFormat format) {
  if (format == ReportFormat::structured) {
    ordered_json j = ordered_json::object();
    ordered_json cols = ordered_json::array();
    for (Metric m : table.metrics) cols.push_back(std::string(metric_column(m)));
    j["metrics"] = std::move(cols);
    j["overall"] = rows_json(table.metrics, table.overall);
    ordered_json pa = ordered_json::object();
    for (const auto& [author, rows] : table.per_author) pa[author] = rows_json(table.metrics, rows);
    j["per_author"] = std::move(pa);
    return j.dump(2) + "\n";
  }
  std::ostringstream os;
  std::size_t n = 0;
  if (!table.metrics.empty()) {
    n = table.cell(ReportVariant::C, table.metrics.front()).n;
  }
  os << "validation metrics (raw counts, n=" << n << ")\n";
  grid(os, table.metrics, table.overall);
  for (const auto& [author, rows] : table.per_author) {
    os << "\nauthor " << author << '\n';
    grid(os, table.metrics, rows);
  }
  return os.str();
}

MetricsTable parse_report(const std::string& text) {
  MetricsTable table;
  try {
    const auto j = ordered_json::parse(text);
    table.metrics.clear();
    for (const auto& c : j.at("metrics")) {
      const auto name = c.get<std::string>();
      bool found = false;
      for (Metric m : kMetrics) {
        if (metric_column(m) == name) {
          table.metrics.push_back(m);
          found = true;
        }
      }
      if (!found) throw DataError("report: unknown metric column " + name);
    }
    table.overall = rows_from(table.metrics, j.at("overall"));
    for (const auto& [author, rows] : j.at("per_author").items()) {
      table.per_author[author] = rows_from(table.metrics, rows);
    }
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return table;
}

}  // namespace mmpop
