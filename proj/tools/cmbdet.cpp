#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cmbdet/dataset.hpp"
#include "cmbdet/nifti.hpp"
#include "cmbdet/pipeline.hpp"
#include "cmbdet/report.hpp"
#include "cmbdet/synthetic.hpp"
#include "cmbdet/training.hpp"
#include "cmbdet/volume_ops.hpp"

namespace fs = std::filesystem;
using namespace cmb;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string data_root;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string ablation;
  std::string modality;
};

ExperimentConfig resolve_config(const CommonOpts& o) {
  ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = load_config(o.config_path);
  if (!o.data_root.empty()) cfg.data_root = o.data_root;
  if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
  if (o.seed_set) cfg.seed = o.seed;
  if (!o.ablation.empty()) cfg.ablation = ablation_from_string(o.ablation);
  if (!o.modality.empty())
    cfg.segmenter.input_modality = o.modality == "t1" ? Modality::T1 : Modality::SWI;
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o, bool with_model_flags = true) {
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--data", o.data_root, "dataset directory");
  cmd->add_option("--out", o.out_dir, "output/run directory");
  cmd->add_option("--seed", o.seed, "master seed")->each([&](const std::string&) {
    o.seed_set = true;
  });
  if (with_model_flags) {
    cmd->add_option("--ablation", o.ablation, "rpn|rpn_ffm|rpn_ffm_hspl")
        ->check(CLI::IsMember({"rpn", "rpn_ffm", "rpn_ffm_hspl"}));
    cmd->add_option("--modality", o.modality, "segmenter input: swi|t1")
        ->check(CLI::IsMember({"swi", "t1"}));
  }
}

std::vector<std::vector<DetectionCandidate>> detect_all(
    const std::vector<SubjectRecord>& subjects, DetectorModel& model,
    const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir));
  std::vector<std::vector<DetectionCandidate>> all;
  for (const auto& s : subjects) {
    const auto pre = preprocess_for_detection(s, model.config().target_slices);
    auto cands = detect_subject(pre, model);
    write_candidates((fs::path(out_dir) / (s.subject_id + "_candidates.json")).string(),
                     cands);
    std::printf("%s: %zu candidates\n", s.subject_id.c_str(), cands.size());
    all.push_back(std::move(cands));
  }
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D cerebral-microbleed detection and anatomical localization"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a synthetic phantom dataset");
  CommonOpts synth_o;
  int n_subjects = 10;
  double normal_fraction = 0.0;
  PhantomSpec phantom;
  add_common(synth, synth_o, false);
  synth->add_option("--subjects", n_subjects, "number of subjects");
  synth->add_option("--normal-fraction", normal_fraction, "fraction without CMBs");
  synth->add_option("--cmbs", phantom.n_cmbs, "CMBs per subject");
  synth->add_option("--vessels", phantom.n_vessels, "vessel mimics per subject");
  synth->add_option("--calcifications", phantom.n_calcifications,
                    "calcification mimics per subject");
  synth->callback([&] {
    if (synth_o.out_dir.empty()) throw CLI::ValidationError("--out is required");
    phantom.seed = synth_o.seed_set ? synth_o.seed : 1;
    std::vector<PhantomManifestEntry> manifest;
    auto subjects =
        generate_dataset(n_subjects, phantom, phantom.seed, normal_fraction, &manifest);
    save_dataset(synth_o.out_dir, subjects, &manifest);
    std::printf("wrote %d subjects to %s\n", n_subjects, synth_o.out_dir.c_str());
  });

  // ---- preprocess ----
  auto* prep = app.add_subcommand("preprocess",
                                  "normalize and z-interpolate volumes for detection");
  CommonOpts prep_o;
  int target_slices = 224;
  add_common(prep, prep_o, false);
  prep->add_option("--target-slices", target_slices, "z-interpolation target");
  prep->callback([&] {
    if (prep_o.data_root.empty() || prep_o.out_dir.empty())
      throw CLI::ValidationError("--data and --out are required");
    fs::create_directories(prep_o.out_dir);
    const auto subjects = load_dataset(prep_o.data_root);
    for (const auto& s : subjects) {
      const auto pre = preprocess_for_detection(s, target_slices);
      const fs::path base = fs::path(prep_o.out_dir) / s.subject_id;
      write_nifti(pre.swi, base.string() + "_swi_zinterp.nii.gz");
      write_nifti(pre.phase, base.string() + "_phase_zinterp.nii.gz");
    }
    write_annotations((fs::path(prep_o.out_dir) / "annotations.json").string(),
                      subjects);
    std::printf("preprocessed %zu subjects into %s\n", subjects.size(),
                prep_o.out_dir.c_str());
  });

  // ---- train-detector ----
  auto* traind = app.add_subcommand("train-detector", "train the detection model");
  CommonOpts traind_o;
  add_common(traind, traind_o);
  traind->callback([&] {
    ExperimentConfig cfg = resolve_config(traind_o);
    if (cfg.data_root.empty()) throw CLI::ValidationError("--data (or config) required");
    const auto subjects = load_dataset(cfg.data_root);
    const auto trained = train_detector(subjects, cfg, cfg.output_dir);
    save_config(cfg, (fs::path(cfg.output_dir) / "config.json").string());
    std::printf("final loss %.6f, checkpoint %s\n", trained.final_loss,
                trained.checkpoint_path.c_str());
  });

  // ---- train-segmenter ----
  auto* trains = app.add_subcommand("train-segmenter",
                                    "train the anatomical localization model");
  CommonOpts trains_o;
  add_common(trains, trains_o);
  trains->callback([&] {
    ExperimentConfig cfg = resolve_config(trains_o);
    if (cfg.data_root.empty()) throw CLI::ValidationError("--data (or config) required");
    const auto subjects = load_dataset(cfg.data_root);
    const auto trained = train_segmenter(subjects, cfg, cfg.output_dir);
    save_config(cfg, (fs::path(cfg.output_dir) / "config.json").string());
    std::printf("final dice loss %.6f, checkpoint %s\n", trained.final_loss,
                trained.checkpoint_path.c_str());
  });

  // ---- detect ----
  auto* detect = app.add_subcommand("detect", "run detection on a dataset");
  CommonOpts detect_o;
  std::string det_ckpt;
  double threshold = 0.0;
  add_common(detect, detect_o, false);
  detect->add_option("--checkpoint", det_ckpt, "detector checkpoint")->required();
  detect->add_option("--threshold", threshold, "override probability threshold");
  detect->callback([&] {
    if (detect_o.data_root.empty() || detect_o.out_dir.empty())
      throw CLI::ValidationError("--data and --out are required");
    auto trained = load_detector(det_ckpt);
    if (threshold > 0.0) {
      DetectorConfig c = trained.model->config();
      c.prob_threshold = threshold;
      // rebuild with the adjusted threshold, reusing loaded weights
      auto arm = trained.model->arm();
      auto fresh = std::make_unique<DetectorModel>(c, arm, 0);
      nn::ParamRefs src = trained.model->parameters(), dst = fresh->parameters();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
      trained.model = std::move(fresh);
    }
    const auto subjects = load_dataset(detect_o.data_root);
    detect_all(subjects, *trained.model, detect_o.out_dir);
  });

  // ---- segment ----
  auto* segment = app.add_subcommand("segment", "run anatomical segmentation");
  CommonOpts segment_o;
  std::string seg_ckpt;
  add_common(segment, segment_o, false);
  segment->add_option("--checkpoint", seg_ckpt, "segmenter checkpoint")->required();
  segment->callback([&] {
    if (segment_o.data_root.empty() || segment_o.out_dir.empty())
      throw CLI::ValidationError("--data and --out are required");
    auto model = load_segmenter(seg_ckpt);
    fs::create_directories(segment_o.out_dir);
    for (const auto& s : load_dataset(segment_o.data_root)) {
      const RegionLabelMap map = segment_subject(s, *model);
      write_nifti(map.labels, (fs::path(segment_o.out_dir) /
                               (s.subject_id + "_regions.nii.gz")).string());
      std::printf("%s: segmented\n", s.subject_id.c_str());
    }
  });

  // ---- filter ----
  auto* filter = app.add_subcommand("filter",
                                    "eliminate candidates in the 'none' region");
  std::string cand_path, labels_path, report_path;
  filter->add_option("--candidates", cand_path, "candidates JSON")->required();
  filter->add_option("--labels", labels_path, "region label map NIfTI")->required();
  filter->add_option("--out", report_path, "filter report JSON")->required();
  filter->callback([&] {
    const auto cands = read_candidates(cand_path);
    RegionLabelMap map;
    map.labels = read_nifti(labels_path, Modality::LabelMap);
    const FilterResult r = filter_candidates(cands, map);
    write_filter_report(report_path, r);
    std::printf("kept %zu, eliminated %d\n", r.kept.size(), r.eliminated_count);
  });

  // ---- evaluate ----
  auto* eval = app.add_subcommand("evaluate", "score candidates against annotations");
  CommonOpts eval_o;
  std::string cand_dir;
  double radius = 5.0;
  bool with_pr = false;
  double min_sensitivity = -1.0, max_fp_avg = -1.0;
  add_common(eval, eval_o, false);
  eval->add_option("--candidates-dir", cand_dir, "directory of *_candidates.json")
      ->required();
  eval->add_option("--radius", radius, "match radius in mm");
  eval->add_flag("--pr", with_pr, "emit the PR and sensitivity-vs-FP_avg curves");
  eval->add_option("--min-sensitivity", min_sensitivity, "CI floor; exit 1 below");
  eval->add_option("--max-fp-avg", max_fp_avg, "CI ceiling; exit 1 above");
  eval->callback([&] {
    if (eval_o.data_root.empty() || eval_o.out_dir.empty())
      throw CLI::ValidationError("--data and --out are required");
    const auto subjects = load_dataset(eval_o.data_root);
    std::vector<std::vector<DetectionCandidate>> cands;
    for (const auto& s : subjects)
      cands.push_back(read_candidates(
          (fs::path(cand_dir) / (s.subject_id + "_candidates.json")).string()));
    fs::create_directories(eval_o.out_dir);
    PrCurve curve;
    const MetricsReport r =
        evaluate_detections(subjects, cands, radius, with_pr, &curve);
    write_metrics_report((fs::path(eval_o.out_dir) / "metrics.json").string(), r);
    if (with_pr) {
      fs::create_directories(fs::path(eval_o.out_dir) / "curves");
      write_pr_curve_csv(
          (fs::path(eval_o.out_dir) / "curves" / "pr_curve.csv").string(), curve);
      std::vector<std::pair<double, double>> pr, sens_fp;
      for (const auto& p : curve.points) {
        pr.emplace_back(p.recall, p.precision);
        sens_fp.emplace_back(p.fp_avg, p.recall);
      }
      write_curve_svg((fs::path(eval_o.out_dir) / "curves" / "pr_curve.svg").string(),
                      "recall", "precision", pr);
      write_curve_svg(
          (fs::path(eval_o.out_dir) / "curves" / "sensitivity_vs_fpavg.svg").string(),
          "FP_avg", "sensitivity", sens_fp);
    }
    std::printf("sensitivity %s, precision %s, FP_avg %.4f%s\n",
                r.sensitivity ? std::to_string(*r.sensitivity).c_str() : "n/a",
                r.precision ? std::to_string(*r.precision).c_str() : "n/a", r.fp_avg,
                with_pr ? (", AUC-PR " + std::to_string(*r.auc_pr)).c_str() : "");
    if (min_sensitivity >= 0 && (!r.sensitivity || *r.sensitivity < min_sensitivity))
      throw CLI::RuntimeError("sensitivity below configured floor", 1);
    if (max_fp_avg >= 0 && r.fp_avg > max_fp_avg)
      throw CLI::RuntimeError("FP_avg above configured ceiling", 1);
  });

  // ---- pipeline ----
  auto* pipe = app.add_subcommand("pipeline",
                                  "detect, localize, filter, and report");
  CommonOpts pipe_o;
  std::string pipe_det_ckpt, pipe_seg_ckpt;
  bool use_gt_labels = false;
  add_common(pipe, pipe_o, false);
  pipe->add_option("--detector-ckpt", pipe_det_ckpt, "detector checkpoint")->required();
  pipe->add_option("--segmenter-ckpt", pipe_seg_ckpt, "segmenter checkpoint");
  pipe->add_flag("--use-gt-labels", use_gt_labels,
                 "filter with ground-truth label maps where available");
  pipe->callback([&] {
    if (pipe_o.data_root.empty() || pipe_o.out_dir.empty())
      throw CLI::ValidationError("--data and --out are required");
    const auto subjects = load_dataset(pipe_o.data_root);
    auto det = load_detector(pipe_det_ckpt);
    std::unique_ptr<SegmenterModel> seg;
    if (!pipe_seg_ckpt.empty()) seg = load_segmenter(pipe_seg_ckpt);
    if (!pipe_o.config_path.empty()) {
      // Refuse checkpoints trained under a different detector config.
      const ExperimentConfig cfg = load_config(pipe_o.config_path);
      ExperimentConfig ck;
      ck.detector = det.model->config();
      ck.ablation = det.model->arm();
      if (config_hash(detector_section(cfg)) != config_hash(detector_section(ck)))
        throw CLI::RuntimeError(
            "checkpoint/config mismatch: detector section hash differs", 2);
    }
    PipelineOptions opts;
    opts.use_gt_label_map = use_gt_labels;
    const PipelineSummary s =
        run_pipeline(subjects, *det.model, seg.get(), opts, pipe_o.out_dir);
    std::printf("pre-filter FP_avg %.4f -> post-filter FP_avg %.4f (EFP_avg %.4f)\n",
                s.pre.fp_avg, s.post.fp_avg, s.post.efp_avg.value_or(0.0));
  });

  // ---- plot ----
  auto* plot = app.add_subcommand("plot", "render curve CSVs as SVG");
  std::string csv_path, svg_path;
  int col_x = 2, col_y = 1;
  plot->add_option("--csv", csv_path, "input CSV (threshold,precision,recall,fp_avg)")
      ->required();
  plot->add_option("--svg", svg_path, "output SVG")->required();
  plot->add_option("--col-x", col_x, "x column index (0-based)");
  plot->add_option("--col-y", col_y, "y column index (0-based)");
  plot->callback([&] {
    std::ifstream f(csv_path);
    if (!f) throw CLI::RuntimeError("cannot open " + csv_path, 1);
    std::string line;
    std::getline(f, line);  // header
    std::vector<std::pair<double, double>> pts;
    while (std::getline(f, line)) {
      std::vector<double> vals;
      std::size_t pos = 0;
      while (pos <= line.size()) {
        const std::size_t comma = line.find(',', pos);
        vals.push_back(std::stod(line.substr(pos, comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      if (static_cast<int>(vals.size()) > std::max(col_x, col_y))
        pts.emplace_back(vals[col_x], vals[col_y]);
    }
    write_curve_svg(svg_path, "x", "y", pts);
    std::printf("wrote %s (%zu points)\n", svg_path.c_str(), pts.size());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
