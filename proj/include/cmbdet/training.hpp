#ifndef CMBDET_TRAINING_HPP_
#define CMBDET_TRAINING_HPP_

#include <memory>
#include <string>
#include <vector>

#include "cmbdet/anatomical.hpp"
#include "cmbdet/config.hpp"
#include "cmbdet/detector.hpp"
#include "cmbdet/hspl.hpp"

namespace cmb {

struct TrainedDetector {
  std::unique_ptr<DetectorModel> model;
  std::unique_ptr<PrototypePair> prototypes;  // null for non-HSPL arms
  std::string checkpoint_path;
  double final_loss = 0.0;
};

// Balanced-crop detector training. Writes logs/losses.csv, periodic and
// final checkpoints under <run_dir>/checkpoints/, and optionally a
// feature-vector CSV. Fully reproducible given config.seed.
TrainedDetector train_detector(const std::vector<SubjectRecord>& subjects,
                               const ExperimentConfig& config,
                               const std::string& run_dir);

TrainedDetector load_detector(const std::string& checkpoint_path);

struct TrainedSegmenter {
  std::unique_ptr<SegmenterModel> model;
  std::string checkpoint_path;
  double final_loss = 0.0;
};

// Dice-loss segmenter training on random native-space crops of subjects
// that carry label maps.
TrainedSegmenter train_segmenter(const std::vector<SubjectRecord>& subjects,
                                 const ExperimentConfig& config,
                                 const std::string& run_dir);

std::unique_ptr<SegmenterModel> load_segmenter(const std::string& checkpoint_path);

}  // namespace cmb

#endif  // CMBDET_TRAINING_HPP_
