#ifndef CMBDET_HSPL_HPP_
#define CMBDET_HSPL_HPP_

#include <array>
#include <cstdint>
#include <vector>

#include "cmbdet/detector.hpp"
#include "cmbdet/nn/modules.hpp"
#include "cmbdet/rng.hpp"

namespace cmb {

// One training crop in the detection (z-interpolated) space.
struct TrainingCrop {
  nn::Tensor X;  // 2 channels (SWI, phase)
  bool contains_cmb = false;
  std::vector<std::array<int, 3>> cmb_coords;  // crop-local (x,y,z), rounded

  // Exact crop-local lesion geometry for loss targets.
  struct Lesion {
    double x = 0, y = 0, z = 0;  // crop-local, real-valued
    double diameter_mm = 5.0;
  };
  std::vector<Lesion> lesions;

  CropSpec window;       // placement within the subject volume
  int subject_index = -1;
  Spacing spacing;       // interpolated-space spacing
};

struct LossWeights {
  double lambda_cls = 1.0;
  double lambda_reg = 0.001;
  double lambda_con = 0.01;
  double margin_n = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
};

struct LossBreakdown {
  double l_cls = 0, l_reg = 0, l_con = 0, l_final = 0;
};

// Trainable class-center vectors for CMB and mimic features.
class PrototypePair {
 public:
  PrototypePair() = default;
  PrototypePair(int channels, std::uint64_t seed);

  int channels() const { return channels_; }
  void collect(nn::ParamRefs& out);
  nn::Param& cmb() { return cmb_; }
  nn::Param& mimic() { return mimic_; }
  const nn::Param& cmb() const { return cmb_; }
  const nn::Param& mimic() const { return mimic_; }

 private:
  int channels_ = 0;
  nn::Param cmb_, mimic_;
};

struct FeatureVector {
  std::vector<float> values;
  std::array<int, 3> source_coord{0, 0, 0};
  bool source_is_cmb = false;
};

// Balanced sampler: emits `count` crops, alternating with-CMB /
// without-CMB so every prefix of even length is balanced. Negative crops
// are rejection-sampled against all annotations.
std::vector<TrainingCrop> sample_balanced_crops(
    const std::vector<PreprocessedSubject>& pool, GridSize crop_size, int count,
    Rng& rng);

// Coordinate rule: annotated CMB coordinates when the crop has them,
// otherwise the probability-map argmax (lexicographic (x,y,z) tie-break).
std::vector<std::array<int, 3>> select_coordinate(const TrainingCrop& crop,
                                                  const nn::Tensor& prob_map);

FeatureVector extract_feature_vector(const nn::Tensor& feature_map,
                                     std::array<int, 3> coord, bool source_is_cmb);

// Concentration loss with analytic gradients, computed in double.
struct ConcentrationGrad {
  double loss = 0;
  std::vector<double> d_v, d_ma, d_mb;
};

ConcentrationGrad concentration_loss_grad(const std::vector<double>& v,
                                          const std::vector<double>& m_a,
                                          const std::vector<double>& m_b,
                                          double margin_n);

// Role assignment per sample class: for a CMB sample M_a is the CMB
// prototype; for a non-CMB sample M_a is the mimic prototype.
double concentration_loss(const FeatureVector& v, const PrototypePair& protos,
                          const LossWeights& weights);

// Mean focal loss over a voxel grid. Probabilities are clamped to
// [1e-7, 1-1e-7]. d_prob, when non-null, receives dL/dP.
double focal_loss(const std::vector<double>& prob,
                  const std::vector<std::uint8_t>& target, double gamma, double alpha,
                  std::vector<double>* d_prob = nullptr);
double focal_loss(const std::vector<float>& prob, const std::vector<std::uint8_t>& target,
                  double gamma, double alpha, std::vector<double>* d_prob = nullptr);

struct RegressionTarget {
  int x = 0, y = 0, z = 0;     // positive voxel (cell containing a CMB center)
  double fx = 0.5, fy = 0.5, fz = 0.5;  // fractional position within the cell
  double log_size = 0;         // log(diameter / anchor)
};

// Squared error between decoded offsets / log-size and their targets,
// averaged over positives; zero when there are none. d_reg, when non-null,
// receives dL/d(reg map).
double regression_loss(const nn::Tensor& reg,
                       const std::vector<RegressionTarget>& targets,
                       nn::Tensor* d_reg = nullptr);

// L_final = lambda1*L_cls + lambda2*L_reg + lambda3*L_con. Throws on NaN,
// naming the offending term.
LossBreakdown total_loss(double l_cls, double l_reg, double l_con,
                         const LossWeights& weights);

}  // namespace cmb

#endif  // CMBDET_HSPL_HPP_
