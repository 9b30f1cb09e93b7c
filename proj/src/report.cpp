#include "cmbdet/report.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace cmb {

using nlohmann::json;

namespace {

void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
}

}  // namespace

json candidates_to_json(const std::vector<DetectionCandidate>& cands) {
  json out = json::array();
  for (const auto& c : cands) {
    json jc = {{"x", c.x}, {"y", c.y}, {"z", c.z}, {"size_mm", c.size_mm},
               {"score", c.score}};
    if (c.region) jc["region"] = to_string(*c.region);
    out.push_back(jc);
  }
  return out;
}

std::vector<DetectionCandidate> candidates_from_json(const json& j) {
  std::vector<DetectionCandidate> out;
  for (const auto& jc : j) {
    DetectionCandidate c;
    c.x = jc.at("x").get<double>();
    c.y = jc.at("y").get<double>();
    c.z = jc.at("z").get<double>();
    c.size_mm = jc.at("size_mm").get<double>();
    c.score = jc.at("score").get<double>();
    if (jc.contains("region"))
      c.region = bombs_region_from_string(jc.at("region").get<std::string>());
    out.push_back(c);
  }
  return out;
}

void write_candidates(const std::string& path,
                      const std::vector<DetectionCandidate>& cands) {
  write_json_file(path, candidates_to_json(cands));
}

std::vector<DetectionCandidate> read_candidates(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  json j;
  f >> j;
  return candidates_from_json(j);
}

json filter_report_to_json(const FilterResult& r) {
  int n_lobar = 0, n_deep = 0, n_infra = 0;
  for (const auto& c : r.kept) {
    if (c.region == BombsRegion::Lobar) ++n_lobar;
    else if (c.region == BombsRegion::Deep) ++n_deep;
    else if (c.region == BombsRegion::Infratentorial) ++n_infra;
  }
  return json{{"kept", candidates_to_json(r.kept)},
              {"eliminated", r.eliminated_count},
              {"regions",
               {{"lobar", n_lobar}, {"deep", n_deep}, {"infratentorial", n_infra}}}};
}

void write_filter_report(const std::string& path, const FilterResult& r) {
  write_json_file(path, filter_report_to_json(r));
}

json metrics_report_to_json(const MetricsReport& r) {
  json j;
  j["n_subjects"] = r.n_subjects;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  j["sensitivity"] = r.sensitivity ? json(*r.sensitivity) : json(nullptr);
  j["precision"] = r.precision ? json(*r.precision) : json(nullptr);
  j["fp_avg"] = r.fp_avg;
  if (r.auc_pr) j["auc_pr"] = *r.auc_pr;
  if (r.efp_avg) j["efp_avg"] = *r.efp_avg;
  if (r.dice) {
    j["dice"] = {{"lobar", r.dice->per_class[0]},
                 {"deep", r.dice->per_class[1]},
                 {"infratentorial", r.dice->per_class[2]},
                 {"total_class_mean", r.dice->mean_class},
                 {"total_voxel_pooled", r.dice->pooled},
                 {"absent_class_convention",
                  {r.dice->absent_convention[0], r.dice->absent_convention[1],
                   r.dice->absent_convention[2]}}};
  }
  if (r.la) {
    const auto opt = [](const std::optional<double>& v) {
      return v ? json(*v) : json(nullptr);
    };
    j["localization_accuracy"] = {{"lobar", opt(r.la->lobar)},
                                  {"deep", opt(r.la->deep)},
                                  {"infratentorial", opt(r.la->infra)},
                                  {"total", r.la->total}};
  }
  return j;
}

void write_metrics_report(const std::string& path, const MetricsReport& r) {
  write_json_file(path, metrics_report_to_json(r));
}

void write_pr_curve_csv(const std::string& path, const PrCurve& curve) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "threshold,precision,recall,fp_avg\n";
  char buf[160];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g\n", p.threshold,
                  p.precision, p.recall, p.fp_avg);
    f << buf;
  }
}

void write_curve_svg(const std::string& path, const std::string& x_label,
                     const std::string& y_label,
                     const std::vector<std::pair<double, double>>& points) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  const int w = 640, h = 480, m = 60;
  double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  for (const auto& [x, y] : points) {
    x_hi = std::max(x_hi, x);
    y_hi = std::max(y_hi, y);
  }
  const auto px = [&](double x) { return m + (x - x_lo) / (x_hi - x_lo) * (w - 2 * m); };
  const auto py = [&](double y) { return h - m - (y - y_lo) / (y_hi - y_lo) * (h - 2 * m); };

  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
    << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  f << "<line x1='" << m << "' y1='" << h - m << "' x2='" << w - m << "' y2='"
    << h - m << "' stroke='black'/>\n";
  f << "<line x1='" << m << "' y1='" << m << "' x2='" << m << "' y2='" << h - m
    << "' stroke='black'/>\n";
  f << "<text x='" << w / 2 << "' y='" << h - 15 << "' text-anchor='middle'>"
    << x_label << "</text>\n";
  f << "<text x='15' y='" << h / 2 << "' text-anchor='middle' transform='rotate(-90 15 "
    << h / 2 << ")'>" << y_label << "</text>\n";
  if (!points.empty()) {
    f << "<polyline fill='none' stroke='steelblue' stroke-width='2' points='";
    for (const auto& [x, y] : points) f << px(x) << "," << py(y) << " ";
    f << "'/>\n";
  }
  f << "</svg>\n";
}

}  // namespace cmb
