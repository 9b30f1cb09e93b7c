#include "cmbdet/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>

namespace cmb {

using nlohmann::json;

namespace {

json grid_to_json(GridSize g) { return json::array({g.nx, g.ny, g.nz}); }

GridSize grid_from_json(const json& j) {
  return GridSize{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}

}  // namespace

void ExperimentConfig::validate() const {
  detector.validate();
  segmenter.validate();
  if (batch_size != 1)
    throw std::invalid_argument("ExperimentConfig: batch_size is fixed to 1");
  if (epochs < 1 || crops_per_epoch < 2)
    throw std::invalid_argument("ExperimentConfig: need >= 1 epoch and >= 2 crops/epoch");
  if (crops_per_epoch % 2 != 0)
    throw std::invalid_argument("ExperimentConfig: crops_per_epoch must be even");
  if (losses.lambda_cls < 0 || losses.lambda_reg < 0 || losses.lambda_con < 0)
    throw std::invalid_argument("ExperimentConfig: loss weights must be nonnegative");
}

json detector_section(const ExperimentConfig& c) {
  const DetectorConfig& d = c.detector;
  return json{{"in_channels", d.in_channels},
              {"base_channels", d.base_channels},
              {"levels", d.levels},
              {"anchor_size_mm", d.anchor_size_mm},
              {"prob_threshold", d.prob_threshold},
              {"nms_radius_mm", d.nms_radius_mm},
              {"target_slices", d.target_slices},
              {"train_crop", grid_to_json(d.train_crop)},
              {"infer_window", grid_to_json(d.infer_window)},
              {"infer_stride", grid_to_json(d.infer_stride)},
              {"ablation", to_string(c.ablation)}};
}

json segmenter_section(const ExperimentConfig& c) {
  const SegmenterConfig& s = c.segmenter;
  return json{{"input_modality", to_string(s.input_modality)},
              {"in_channels", s.in_channels},
              {"crop_size", grid_to_json(s.crop_size)},
              {"classes", s.classes},
              {"base_channels", s.base_channels},
              {"infer_stride", grid_to_json(s.infer_stride)}};
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["data_root"] = c.data_root;
  j["output_dir"] = c.output_dir;
  j["detector"] = detector_section(c);
  j["segmenter"] = segmenter_section(c);
  j["losses"] = {{"lambda_cls", c.losses.lambda_cls},
                 {"lambda_reg", c.losses.lambda_reg},
                 {"lambda_con", c.losses.lambda_con},
                 {"margin_n", c.losses.margin_n},
                 {"focal_gamma", c.losses.focal_gamma},
                 {"focal_alpha", c.losses.focal_alpha}};
  j["optimizer"] = {{"kind", "sgd_momentum"},
                    {"lr", c.optimizer.lr},
                    {"momentum", c.optimizer.momentum}};
  j["scheduler"] = {{"kind", "step"},
                    {"step_size", c.scheduler.step_size},
                    {"gamma", c.scheduler.gamma}};
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["crops_per_epoch"] = c.crops_per_epoch;
  j["seed"] = c.seed;
  j["match_radius_mm"] = c.match_radius_mm;
  j["checkpoint_every"] = c.checkpoint_every;
  j["dump_features"] = c.dump_features;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  const auto get = [&](const char* key, auto& target) {
    if (j.contains(key)) target = j.at(key).get<std::decay_t<decltype(target)>>();
  };
  get("data_root", c.data_root);
  get("output_dir", c.output_dir);
  if (j.contains("detector")) {
    const json& d = j.at("detector");
    DetectorConfig& dc = c.detector;
    if (d.contains("in_channels")) dc.in_channels = d.at("in_channels").get<int>();
    if (d.contains("base_channels")) dc.base_channels = d.at("base_channels").get<int>();
    if (d.contains("levels")) dc.levels = d.at("levels").get<int>();
    if (d.contains("anchor_size_mm")) dc.anchor_size_mm = d.at("anchor_size_mm").get<double>();
    if (d.contains("prob_threshold")) dc.prob_threshold = d.at("prob_threshold").get<double>();
    if (d.contains("nms_radius_mm")) dc.nms_radius_mm = d.at("nms_radius_mm").get<double>();
    if (d.contains("target_slices")) dc.target_slices = d.at("target_slices").get<int>();
    if (d.contains("train_crop")) dc.train_crop = grid_from_json(d.at("train_crop"));
    if (d.contains("infer_window")) dc.infer_window = grid_from_json(d.at("infer_window"));
    if (d.contains("infer_stride")) dc.infer_stride = grid_from_json(d.at("infer_stride"));
    if (d.contains("ablation"))
      c.ablation = ablation_from_string(d.at("ablation").get<std::string>());
  }
  if (j.contains("segmenter")) {
    const json& s = j.at("segmenter");
    SegmenterConfig& sc = c.segmenter;
    if (s.contains("input_modality")) {
      const std::string m = s.at("input_modality").get<std::string>();
      if (m == "swi") sc.input_modality = Modality::SWI;
      else if (m == "t1") sc.input_modality = Modality::T1;
      else throw std::invalid_argument("segmenter input_modality must be swi or t1");
    }
    if (s.contains("in_channels")) sc.in_channels = s.at("in_channels").get<int>();
    if (s.contains("crop_size")) sc.crop_size = grid_from_json(s.at("crop_size"));
    if (s.contains("classes")) sc.classes = s.at("classes").get<int>();
    if (s.contains("base_channels")) sc.base_channels = s.at("base_channels").get<int>();
    if (s.contains("infer_stride")) sc.infer_stride = grid_from_json(s.at("infer_stride"));
  }
  if (j.contains("losses")) {
    const json& l = j.at("losses");
    if (l.contains("lambda_cls")) c.losses.lambda_cls = l.at("lambda_cls").get<double>();
    if (l.contains("lambda_reg")) c.losses.lambda_reg = l.at("lambda_reg").get<double>();
    if (l.contains("lambda_con")) c.losses.lambda_con = l.at("lambda_con").get<double>();
    if (l.contains("margin_n")) c.losses.margin_n = l.at("margin_n").get<double>();
    if (l.contains("focal_gamma")) c.losses.focal_gamma = l.at("focal_gamma").get<double>();
    if (l.contains("focal_alpha")) c.losses.focal_alpha = l.at("focal_alpha").get<double>();
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    if (o.contains("lr")) c.optimizer.lr = o.at("lr").get<double>();
    if (o.contains("momentum")) c.optimizer.momentum = o.at("momentum").get<double>();
  }
  if (j.contains("scheduler")) {
    const json& s = j.at("scheduler");
    if (s.contains("step_size")) c.scheduler.step_size = s.at("step_size").get<int>();
    if (s.contains("gamma")) c.scheduler.gamma = s.at("gamma").get<double>();
  }
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("crops_per_epoch", c.crops_per_epoch);
  get("seed", c.seed);
  get("match_radius_mm", c.match_radius_mm);
  get("checkpoint_every", c.checkpoint_every);
  get("dump_features", c.dump_features);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  json j;
  f >> j;
  return config_from_json(j);
}

void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write config " + path);
  f << to_json(c).dump(2) << "\n";
}

std::uint64_t config_hash(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace cmb
