#ifndef CMBDET_DETECTOR_HPP_
#define CMBDET_DETECTOR_HPP_

#include <optional>
#include <string>
#include <vector>

#include "cmbdet/nn/unet.hpp"
#include "cmbdet/volume.hpp"
#include "cmbdet/volume_ops.hpp"

namespace cmb {

enum class AblationArm { Rpn, RpnFfm, RpnFfmHspl };

const char* to_string(AblationArm a);
AblationArm ablation_from_string(const std::string& s);

struct DetectorConfig {
  int in_channels = 2;  // fixed channel order: (SWI, phase)
  int base_channels = 8;
  int levels = 3;  // the FFM fuses exactly three decoder levels
  double anchor_size_mm = 5.0;
  double prob_threshold = 0.5;
  double nms_radius_mm = 5.0;
  int target_slices = 224;
  GridSize train_crop{64, 64, 64};
  GridSize infer_window{64, 64, 64};
  GridSize infer_stride{0, 0, 0};  // 0 = window/2 per axis

  void validate() const;
  GridSize effective_stride() const;
};

using FeatureMap = nn::Tensor;

// Voxel-wise objectness probabilities plus the 4-channel regression map
// (x/y/z offset logits and log-size).
struct DetectionFieldOutput {
  nn::Tensor prob;  // 1 channel, strictly in (0,1)
  nn::Tensor reg;   // 4 channels
};

struct DetectionCandidate {
  double x = 0, y = 0, z = 0;  // subject-volume voxel coordinates
  double size_mm = 0;
  double score = 0;
  std::optional<BombsRegion> region;
};

// Subject prepared for the detection task: normalized intensities,
// z-interpolated volumes, with the native geometry kept for mapping
// candidates back.
struct PreprocessedSubject {
  std::string subject_id;
  Volume3D swi;    // Space::ZInterp
  Volume3D phase;  // Space::ZInterp
  int native_depth = 0;
  Spacing native_spacing;
  std::vector<CMBAnnotation> annotations;  // native space
};

PreprocessedSubject preprocess_for_detection(const SubjectRecord& subject,
                                             int target_slices);

// U-Net backbone + Feature Fusion Module + RPN head. The ablation arm
// selects the head input: the finest decoder level alone (Rpn) or the
// three-level fused map (RpnFfm, RpnFfmHspl).
class DetectorModel {
 public:
  DetectorModel(const DetectorConfig& config, AblationArm arm,
                std::uint64_t init_seed);

  const DetectorConfig& config() const { return config_; }
  AblationArm arm() const { return arm_; }
  int feature_channels() const { return config_.base_channels; }
  nn::ParamRefs parameters();

  nn::UNetLevels backbone_forward(const nn::Tensor& crop);
  nn::Tensor fuse_features(const nn::UNetLevels& levels);
  DetectionFieldOutput rpn_forward(const nn::Tensor& final_map);

  struct ForwardResult {
    nn::Tensor final_map;  // head input; the fused map when the FFM is on
    DetectionFieldOutput field;
  };
  ForwardResult forward(const nn::Tensor& crop);

  // d_prob/d_reg: gradients on the probability and regression maps;
  // d_final_extra: extra gradient flowing directly into the head-input
  // feature map (the concentration-loss path). Either may be empty.
  void backward(const nn::Tensor& d_prob, const nn::Tensor& d_reg,
                const nn::Tensor& d_final_extra);

 private:
  DetectorConfig config_;
  AblationArm arm_;
  nn::UNet3d backbone_;
  nn::Conv3d ffm_proj_coarse_, ffm_proj_mid_, ffm_proj_fine_;  // bias-free
  nn::TrilinearResize ffm_up_coarse_, ffm_up_mid_;
  nn::L2NormScale ffm_norm_;
  nn::Conv3d head_a_, head_obj_, head_reg_;
  nn::Tensor ffm_sum_cache_, ffm_norm_out_cache_, prob_cache_;
  bool used_ffm_ = false;
};

// Thresholded box decoding: for every voxel with prob >= threshold,
// center = voxel + sigmoid(offset), size = anchor * exp(log_size), with
// coordinates shifted into whole-volume space by crop_origin.
std::vector<DetectionCandidate> decode_boxes(const DetectionFieldOutput& field,
                                             const CropSpec& crop_origin,
                                             double threshold,
                                             double anchor_size_mm);

// Greedy center-distance suppression, descending score, deterministic
// tie-break by (score, then lexicographic center).
std::vector<DetectionCandidate> nms_3d(std::vector<DetectionCandidate> cands,
                                       double radius_mm, Spacing spacing);

// Sliding-window inference over a whole subject. Candidate z is mapped
// back to native space before the global NMS; output is sorted by
// descending score.
std::vector<DetectionCandidate> detect_subject(const PreprocessedSubject& subject,
                                               DetectorModel& model);

}  // namespace cmb

#endif  // CMBDET_DETECTOR_HPP_
