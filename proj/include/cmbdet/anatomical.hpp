#ifndef CMBDET_ANATOMICAL_HPP_
#define CMBDET_ANATOMICAL_HPP_

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cmbdet/detector.hpp"
#include "cmbdet/nn/unet.hpp"
#include "cmbdet/volume.hpp"

namespace cmb {

// Atlas-subregion to BOMBS-class table: the 27 Aseg subregions plus the
// manually separated internal/external capsule entry.
class AsegMappingTable {
 public:
  static AsegMappingTable builtin();
  static AsegMappingTable load(const std::string& json_path);

  BombsRegion map_aseg_to_bombs(const std::string& subregion_name) const;
  const std::map<std::string, BombsRegion>& entries() const { return entries_; }

 private:
  std::map<std::string, BombsRegion> entries_;
};

struct SegmenterConfig {
  Modality input_modality = Modality::SWI;  // SWI or T1
  int in_channels = 4;  // image + 3 coordinate tensors
  GridSize crop_size{64, 64, 16};
  int classes = 4;
  int base_channels = 8;
  GridSize infer_stride{0, 0, 0};  // 0 = crop/2

  void validate() const;
  GridSize effective_stride() const;
};

// 4-class U-Net segmenter over (image, coord_x, coord_y, coord_z) input.
class SegmenterModel {
 public:
  SegmenterModel(const SegmenterConfig& config, std::uint64_t init_seed);

  const SegmenterConfig& config() const { return config_; }
  nn::ParamRefs parameters();

  // Returns per-class softmax probabilities (4 channels).
  nn::Tensor forward(const nn::Tensor& crop);
  // d_prob: gradient w.r.t. the softmax output.
  void backward(const nn::Tensor& d_prob);

 private:
  SegmenterConfig config_;
  nn::UNet3d backbone_;
  nn::Conv3d out_conv_;
  nn::Tensor prob_cache_;
};

// Multi-class soft dice loss: 1 - mean_k 2|P_k T_k| / (|P_k| + |T_k| + eps).
// d_pred, when non-null, receives dL/dP.
double dice_loss(const nn::Tensor& pred_softmax, const nn::Tensor& target_onehot,
                 nn::Tensor* d_pred = nullptr);

// Sliding-window 4-class segmentation in native space; overlapping windows
// are averaged in probability space before the per-voxel argmax.
RegionLabelMap segment_subject(const SubjectRecord& subject, SegmenterModel& model);

// Region of a candidate by its rounded center voxel (round half up). The
// optional confidence is the fraction of the 3^3 neighborhood agreeing
// with the center label; the center always decides.
BombsRegion lookup_region(const DetectionCandidate& candidate,
                          const RegionLabelMap& map,
                          double* neighborhood_agreement = nullptr);

struct FilterResult {
  std::vector<DetectionCandidate> kept;  // regions filled in
  int eliminated_count = 0;
};

// Drops candidates in the 'none' region and annotates the survivors.
FilterResult filter_candidates(const std::vector<DetectionCandidate>& cands,
                               const RegionLabelMap& map);

}  // namespace cmb

#endif  // CMBDET_ANATOMICAL_HPP_
