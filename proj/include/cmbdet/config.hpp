#ifndef CMBDET_CONFIG_HPP_
#define CMBDET_CONFIG_HPP_

#include <cstdint>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "cmbdet/anatomical.hpp"
#include "cmbdet/detector.hpp"
#include "cmbdet/hspl.hpp"

namespace cmb {

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
};

struct SchedulerConfig {
  int step_size = 50;
  double gamma = 0.5;
};

struct ExperimentConfig {
  std::string data_root;
  std::string output_dir = "runs/default";
  DetectorConfig detector;
  SegmenterConfig segmenter;
  LossWeights losses;
  OptimizerConfig optimizer;
  SchedulerConfig scheduler;
  int batch_size = 1;
  int epochs = 10;
  int crops_per_epoch = 50;
  std::uint64_t seed = 1;
  AblationArm ablation = AblationArm::RpnFfmHspl;
  double match_radius_mm = 5.0;
  int checkpoint_every = 0;  // epochs; 0 = final only
  bool dump_features = false;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const nlohmann::json& j);

ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& c, const std::string& path);

// FNV-1a over the canonical JSON dump; embedded in checkpoints so the
// pipeline can refuse incompatible model/config pairs.
std::uint64_t config_hash(const nlohmann::json& j);

nlohmann::json detector_section(const ExperimentConfig& c);
nlohmann::json segmenter_section(const ExperimentConfig& c);

}  // namespace cmb

#endif  // CMBDET_CONFIG_HPP_
