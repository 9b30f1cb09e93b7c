#ifndef CMBDET_EVALUATION_HPP_
#define CMBDET_EVALUATION_HPP_

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "cmbdet/detector.hpp"
#include "cmbdet/volume.hpp"

namespace cmb {

struct MatchResult {
  int tp = 0, fp = 0, fn = 0;
  std::vector<std::pair<int, int>> pairs;  // (candidate index, annotation index)
  double match_radius_mm = 5.0;
};

// Greedy matching by descending candidate score: each candidate takes the
// nearest unmatched annotation within radius_mm (mm distance via spacing).
MatchResult match_detections(const std::vector<DetectionCandidate>& cands,
                             const std::vector<CMBAnnotation>& annotations,
                             double radius_mm, Spacing spacing);

struct DetectionMetrics {
  std::optional<double> sensitivity;  // null when no annotations exist
  std::optional<double> precision;    // null when nothing was predicted
  double fp_avg = 0.0;
};

DetectionMetrics detection_metrics(const std::vector<MatchResult>& per_subject);

// One subject's material for threshold sweeps.
struct SubjectDetections {
  std::vector<DetectionCandidate> cands;
  std::vector<CMBAnnotation> annotations;
  Spacing spacing;
};

struct PrPoint {
  double threshold = 0, precision = 0, recall = 0, fp_avg = 0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // descending threshold
  double auc_pr = 0.0;
};

// Threshold sweep over all distinct scores; matching is recomputed per
// threshold and AUC-PR uses step interpolation over recall.
PrCurve pr_curve(const std::vector<SubjectDetections>& subjects, double radius_mm);

struct DiceReport {
  std::array<double, 3> per_class{0, 0, 0};  // lobar, deep, infratentorial
  std::array<bool, 3> absent_convention{false, false, false};
  double mean_class = 0.0;   // primary "Total"
  double pooled = 0.0;       // voxel-pooled alternative
};

// Hard-label dice between predicted and ground-truth label maps. A class
// absent from both maps scores 1.0 by convention (flagged in the report).
DiceReport dice_score(const RegionLabelMap& pred, const RegionLabelMap& truth);

struct LocalizationConfusion {
  int tp_lobar = 0, tp_deep = 0, tp_infra = 0;
  int n_lobar = 0, n_deep = 0, n_infra = 0;
};

struct LocalizationAccuracy {
  std::optional<double> lobar, deep, infra;  // null when that class has n = 0
  double total = 0.0;
};

LocalizationAccuracy localization_accuracy(const LocalizationConfusion& conf);

double efp_avg(int eliminated_fp_total, int n_subjects);

struct MetricsReport {
  std::optional<double> sensitivity;
  std::optional<double> precision;
  double fp_avg = 0.0;
  std::optional<double> auc_pr;
  std::optional<DiceReport> dice;
  std::optional<LocalizationAccuracy> la;
  std::optional<double> efp_avg;
  int n_subjects = 0;
  int tp = 0, fp = 0, fn = 0;
};

}  // namespace cmb

#endif  // CMBDET_EVALUATION_HPP_
