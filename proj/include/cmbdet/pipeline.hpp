#ifndef CMBDET_PIPELINE_HPP_
#define CMBDET_PIPELINE_HPP_

#include <optional>
#include <string>
#include <vector>

#include "cmbdet/anatomical.hpp"
#include "cmbdet/config.hpp"
#include "cmbdet/evaluation.hpp"
#include "cmbdet/training.hpp"

namespace cmb {

struct SubjectPipelineResult {
  std::string subject_id;
  std::vector<DetectionCandidate> pre_filter;   // native space
  FilterResult filtered;
  int eliminated_fp = 0;  // eliminated candidates that were not matched TPs
  int eliminated_tp = 0;
};

struct PipelineSummary {
  std::vector<SubjectPipelineResult> subjects;
  MetricsReport pre;   // detection only
  MetricsReport post;  // detection + anatomical filter
};

struct PipelineOptions {
  bool use_gt_label_map = false;  // bypass the segmenter where a ground-truth
                                  // map exists (synthetic QA path)
  bool write_outputs = true;
  double match_radius_mm = 5.0;
};

// Full framework per subject: preprocess, detect, segment, look up regions,
// eliminate 'none'-region candidates, and score pre/post-filter metrics
// when annotations exist.
PipelineSummary run_pipeline(const std::vector<SubjectRecord>& subjects,
                             DetectorModel& detector, SegmenterModel* segmenter,
                             const PipelineOptions& options,
                             const std::string& out_dir);

// Convenience for detector-only evaluation at the configured threshold.
MetricsReport evaluate_detections(
    const std::vector<SubjectRecord>& subjects,
    const std::vector<std::vector<DetectionCandidate>>& cands_per_subject,
    double match_radius_mm, bool with_pr_curve = false,
    PrCurve* curve_out = nullptr);

}  // namespace cmb

#endif  // CMBDET_PIPELINE_HPP_
