#include "cmbdet/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <stdexcept>

#include "cmbdet/nifti.hpp"
#include "cmbdet/report.hpp"

namespace cmb {

namespace fs = std::filesystem;

namespace {

// LA is scored over annotated lesions with a rater-style region label:
// the predicted map is probed at the lesion center.
void accumulate_localization(const std::vector<CMBAnnotation>& annotations,
                             const RegionLabelMap& map, LocalizationConfusion& conf) {
  for (const auto& a : annotations) {
    if (!a.region) continue;
    DetectionCandidate probe;
    probe.x = a.x;
    probe.y = a.y;
    probe.z = a.z;
    const BombsRegion predicted = lookup_region(probe, map);
    switch (*a.region) {
      case BombsRegion::Lobar:
        ++conf.n_lobar;
        conf.tp_lobar += predicted == BombsRegion::Lobar;
        break;
      case BombsRegion::Deep:
        ++conf.n_deep;
        conf.tp_deep += predicted == BombsRegion::Deep;
        break;
      case BombsRegion::Infratentorial:
        ++conf.n_infra;
        conf.tp_infra += predicted == BombsRegion::Infratentorial;
        break;
      case BombsRegion::None:
        break;
    }
  }
}

}  // namespace

PipelineSummary run_pipeline(const std::vector<SubjectRecord>& subjects,
                             DetectorModel& detector, SegmenterModel* segmenter,
                             const PipelineOptions& options,
                             const std::string& out_dir) {
  if (subjects.empty()) throw std::invalid_argument("run_pipeline: no subjects");
  if (options.write_outputs) fs::create_directories(fs::path(out_dir) / "reports");

  PipelineSummary summary;
  std::vector<MatchResult> pre_matches, post_matches;
  LocalizationConfusion conf;
  bool any_annotated = false, any_region_labels = false;
  int eliminated_fp_total = 0;
  DiceReport dice_acc;
  int dice_count = 0;

  for (const auto& subject : subjects) {
    SubjectPipelineResult r;
    r.subject_id = subject.subject_id;

    const PreprocessedSubject pre =
        preprocess_for_detection(subject, detector.config().target_slices);
    r.pre_filter = detect_subject(pre, detector);

    RegionLabelMap map;
    bool have_predicted_map = false;
    if (options.use_gt_label_map && subject.label_map) {
      map = *subject.label_map;
    } else {
      if (!segmenter)
        throw std::invalid_argument(
            "run_pipeline: no segmenter model and no ground-truth label map");
      map = segment_subject(subject, *segmenter);
      have_predicted_map = true;
    }
    if (map.labels.size().nz != subject.swi.size().nz)
      throw std::runtime_error("run_pipeline: label map/native space mismatch for " +
                               subject.subject_id);

    r.filtered = filter_candidates(r.pre_filter, map);

    const Spacing sp = subject.swi.spacing();
    const MatchResult m_pre = match_detections(r.pre_filter, subject.annotations,
                                               options.match_radius_mm, sp);
    const MatchResult m_post = match_detections(r.filtered.kept, subject.annotations,
                                                options.match_radius_mm, sp);
    pre_matches.push_back(m_pre);
    post_matches.push_back(m_post);
    if (!subject.annotations.empty()) any_annotated = true;

    // Split the eliminated candidates into lost TPs vs removed FPs.
    std::vector<bool> matched(r.pre_filter.size(), false);
    for (const auto& [ci, ai] : m_pre.pairs) matched[ci] = true;
    for (std::size_t i = 0; i < r.pre_filter.size(); ++i) {
      const BombsRegion region = lookup_region(r.pre_filter[i], map);
      if (region != BombsRegion::None) continue;
      if (matched[i]) ++r.eliminated_tp;
      else ++r.eliminated_fp;
    }
    eliminated_fp_total += r.eliminated_fp;

    for (const auto& a : subject.annotations)
      if (a.region) any_region_labels = true;
    accumulate_localization(subject.annotations, map, conf);

    if (have_predicted_map && subject.label_map) {
      const DiceReport d = dice_score(map, *subject.label_map);
      for (int k = 0; k < 3; ++k) dice_acc.per_class[k] += d.per_class[k];
      dice_acc.mean_class += d.mean_class;
      dice_acc.pooled += d.pooled;
      ++dice_count;
    }

    if (options.write_outputs) {
      const fs::path base = fs::path(out_dir) / "reports" / subject.subject_id;
      write_candidates(base.string() + "_candidates.json", r.pre_filter);
      write_filter_report(base.string() + "_filter.json", r.filtered);
      if (have_predicted_map)
        write_nifti(map.labels, base.string() + "_regions.nii.gz");
    }
    summary.subjects.push_back(std::move(r));
  }

  const int n = static_cast<int>(subjects.size());
  const DetectionMetrics pre_m = detection_metrics(pre_matches);
  const DetectionMetrics post_m = detection_metrics(post_matches);
  summary.pre.n_subjects = n;
  summary.pre.sensitivity = pre_m.sensitivity;
  summary.pre.precision = pre_m.precision;
  summary.pre.fp_avg = pre_m.fp_avg;
  summary.post.n_subjects = n;
  summary.post.sensitivity = post_m.sensitivity;
  summary.post.precision = post_m.precision;
  summary.post.fp_avg = post_m.fp_avg;
  summary.post.efp_avg = efp_avg(eliminated_fp_total, n);
  for (const auto& m : pre_matches) {
    summary.pre.tp += m.tp;
    summary.pre.fp += m.fp;
    summary.pre.fn += m.fn;
  }
  for (const auto& m : post_matches) {
    summary.post.tp += m.tp;
    summary.post.fp += m.fp;
    summary.post.fn += m.fn;
  }
  if (any_annotated && any_region_labels &&
      conf.n_lobar + conf.n_deep + conf.n_infra > 0)
    summary.post.la = localization_accuracy(conf);
  if (dice_count > 0) {
    for (int k = 0; k < 3; ++k) dice_acc.per_class[k] /= dice_count;
    dice_acc.mean_class /= dice_count;
    dice_acc.pooled /= dice_count;
    summary.post.dice = dice_acc;
  }

  if (options.write_outputs) {
    write_metrics_report((fs::path(out_dir) / "reports" / "metrics_pre.json").string(),
                         summary.pre);
    write_metrics_report((fs::path(out_dir) / "reports" / "metrics_post.json").string(),
                         summary.post);
  }
  return summary;
}

MetricsReport evaluate_detections(
    const std::vector<SubjectRecord>& subjects,
    const std::vector<std::vector<DetectionCandidate>>& cands_per_subject,
    double match_radius_mm, bool with_pr_curve, PrCurve* curve_out) {
  if (subjects.size() != cands_per_subject.size())
    throw std::invalid_argument("evaluate_detections: subject/candidate count mismatch");
  std::vector<MatchResult> matches;
  std::vector<SubjectDetections> sweep;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const Spacing sp = subjects[i].swi.spacing();
    matches.push_back(match_detections(cands_per_subject[i], subjects[i].annotations,
                                       match_radius_mm, sp));
    if (with_pr_curve)
      sweep.push_back({cands_per_subject[i], subjects[i].annotations, sp});
  }
  const DetectionMetrics m = detection_metrics(matches);
  MetricsReport r;
  r.n_subjects = static_cast<int>(subjects.size());
  r.sensitivity = m.sensitivity;
  r.precision = m.precision;
  r.fp_avg = m.fp_avg;
  for (const auto& mm : matches) {
    r.tp += mm.tp;
    r.fp += mm.fp;
    r.fn += mm.fn;
  }
  if (with_pr_curve) {
    const PrCurve curve = pr_curve(sweep, match_radius_mm);
    r.auc_pr = curve.auc_pr;
    if (curve_out) *curve_out = curve;
  }
  return r;
}

}  // namespace cmb
