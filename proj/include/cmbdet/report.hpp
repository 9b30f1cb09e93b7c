#ifndef CMBDET_REPORT_HPP_
#define CMBDET_REPORT_HPP_

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cmbdet/anatomical.hpp"
#include "cmbdet/evaluation.hpp"

namespace cmb {

nlohmann::json candidates_to_json(const std::vector<DetectionCandidate>& cands);
std::vector<DetectionCandidate> candidates_from_json(const nlohmann::json& j);
void write_candidates(const std::string& path,
                      const std::vector<DetectionCandidate>& cands);
std::vector<DetectionCandidate> read_candidates(const std::string& path);

// {"kept":[...], "eliminated": k, "regions": {"lobar": n, ...}}
nlohmann::json filter_report_to_json(const FilterResult& r);
void write_filter_report(const std::string& path, const FilterResult& r);

nlohmann::json metrics_report_to_json(const MetricsReport& r);
void write_metrics_report(const std::string& path, const MetricsReport& r);

// curve CSV: threshold,precision,recall,fp_avg
void write_pr_curve_csv(const std::string& path, const PrCurve& curve);

// Minimal SVG line plot for the curve outputs.
void write_curve_svg(const std::string& path, const std::string& x_label,
                     const std::string& y_label,
                     const std::vector<std::pair<double, double>>& points);

}  // namespace cmb

#endif  // CMBDET_REPORT_HPP_
