#include "cmbdet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace cmb {

namespace {

double dist_mm(const DetectionCandidate& c, const CMBAnnotation& a, Spacing sp) {
  const double dx = (c.x - a.x) * sp.sx;
  const double dy = (c.y - a.y) * sp.sy;
  const double dz = (c.z - a.z) * sp.sz;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

bool score_order(const DetectionCandidate& a, const DetectionCandidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  return a.z < b.z;
}

}  // namespace

MatchResult match_detections(const std::vector<DetectionCandidate>& cands,
                             const std::vector<CMBAnnotation>& annotations,
                             double radius_mm, Spacing spacing) {
  if (radius_mm <= 0) throw std::invalid_argument("match_detections: radius must be > 0");
  MatchResult r;
  r.match_radius_mm = radius_mm;

  std::vector<int> order(cands.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return score_order(cands[a], cands[b]); });

  std::vector<bool> taken(annotations.size(), false);
  for (int ci : order) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t ai = 0; ai < annotations.size(); ++ai) {
      if (taken[ai]) continue;
      const double d = dist_mm(cands[ci], annotations[ai], spacing);
      if (d <= radius_mm && d < best_d) {
        best_d = d;
        best = static_cast<int>(ai);
      }
    }
    if (best >= 0) {
      taken[best] = true;
      r.pairs.emplace_back(ci, best);
    }
  }
  r.tp = static_cast<int>(r.pairs.size());
  r.fp = static_cast<int>(cands.size()) - r.tp;
  r.fn = static_cast<int>(annotations.size()) - r.tp;
  return r;
}

DetectionMetrics detection_metrics(const std::vector<MatchResult>& per_subject) {
  if (per_subject.empty())
    throw std::invalid_argument("detection_metrics: need at least one subject");
  long tp = 0, fp = 0, fn = 0;
  for (const auto& m : per_subject) {
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
  }
  DetectionMetrics out;
  if (tp + fn > 0) out.sensitivity = static_cast<double>(tp) / (tp + fn);
  if (tp + fp > 0) out.precision = static_cast<double>(tp) / (tp + fp);
  out.fp_avg = static_cast<double>(fp) / static_cast<double>(per_subject.size());
  return out;
}

PrCurve pr_curve(const std::vector<SubjectDetections>& subjects, double radius_mm) {
  std::set<double, std::greater<double>> thresholds;
  long n_annotations = 0;
  for (const auto& s : subjects) {
    for (const auto& c : s.cands) thresholds.insert(c.score);
    n_annotations += static_cast<long>(s.annotations.size());
  }

  PrCurve curve;
  double prev_recall = 0.0;
  for (double th : thresholds) {
    long tp = 0, fp = 0;
    for (const auto& s : subjects) {
      std::vector<DetectionCandidate> keep;
      for (const auto& c : s.cands)
        if (c.score >= th) keep.push_back(c);
      const MatchResult m = match_detections(keep, s.annotations, radius_mm, s.spacing);
      tp += m.tp;
      fp += m.fp;
    }
    PrPoint p;
    p.threshold = th;
    p.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 1.0;
    p.recall = n_annotations > 0 ? static_cast<double>(tp) / n_annotations : 0.0;
    p.fp_avg = subjects.empty() ? 0.0 : static_cast<double>(fp) / subjects.size();
    curve.points.push_back(p);
    curve.auc_pr += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return curve;
}

DiceReport dice_score(const RegionLabelMap& pred, const RegionLabelMap& truth) {
  if (!(pred.labels.size() == truth.labels.size()))
    throw std::invalid_argument("dice_score: shape mismatch");
  DiceReport r;
  const auto& p = pred.labels.data();
  const auto& t = truth.labels.data();
  long pooled_inter = 0, pooled_total = 0;
  for (int k = 1; k <= 3; ++k) {
    long np = 0, nt = 0, inter = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool in_p = static_cast<int>(p[i]) == k;
      const bool in_t = static_cast<int>(t[i]) == k;
      np += in_p;
      nt += in_t;
      inter += in_p && in_t;
    }
    if (np + nt == 0) {
      r.per_class[k - 1] = 1.0;
      r.absent_convention[k - 1] = true;
    } else {
      r.per_class[k - 1] = 2.0 * inter / static_cast<double>(np + nt);
    }
    pooled_inter += inter;
    pooled_total += np + nt;
  }
  r.mean_class = (r.per_class[0] + r.per_class[1] + r.per_class[2]) / 3.0;
  r.pooled = pooled_total > 0 ? 2.0 * pooled_inter / static_cast<double>(pooled_total) : 1.0;
  return r;
}

LocalizationAccuracy localization_accuracy(const LocalizationConfusion& c) {
  if (c.n_lobar < 0 || c.n_deep < 0 || c.n_infra < 0 || c.tp_lobar > c.n_lobar ||
      c.tp_deep > c.n_deep || c.tp_infra > c.n_infra)
    throw std::invalid_argument("localization_accuracy: inconsistent confusion counts");
  const int n_total = c.n_lobar + c.n_deep + c.n_infra;
  if (n_total == 0)
    throw std::invalid_argument("localization_accuracy: no localized samples");
  LocalizationAccuracy la;
  if (c.n_lobar > 0) la.lobar = static_cast<double>(c.tp_lobar) / c.n_lobar;
  if (c.n_deep > 0) la.deep = static_cast<double>(c.tp_deep) / c.n_deep;
  if (c.n_infra > 0) la.infra = static_cast<double>(c.tp_infra) / c.n_infra;
  la.total = static_cast<double>(c.tp_lobar + c.tp_deep + c.tp_infra) / n_total;
  return la;
}

double efp_avg(int eliminated_fp_total, int n_subjects) {
  if (n_subjects < 1) throw std::invalid_argument("efp_avg: need at least one subject");
  return static_cast<double>(eliminated_fp_total) / n_subjects;
}

}  // namespace cmb
