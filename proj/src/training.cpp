#include "cmbdet/training.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "cmbdet/nn/checkpoint.hpp"
#include "cmbdet/nn/optim.hpp"
#include "cmbdet/volume_ops.hpp"

namespace cmb {

namespace fs = std::filesystem;

namespace {

// Voxels within a lesion radius are classification positives; the cell
// containing the center carries the regression target.
void build_targets(const TrainingCrop& crop, double anchor_size_mm,
                   std::vector<std::uint8_t>& cls_target,
                   std::vector<RegressionTarget>& reg_targets) {
  const nn::Tensor& X = crop.X;
  cls_target.assign(X.spatial(), 0);
  reg_targets.clear();
  const Spacing sp = crop.spacing;

  for (const auto& l : crop.lesions) {
    const double r_mm = std::max(l.diameter_mm / 2.0, 0.75);
    const int x0 = std::max(0, static_cast<int>(std::floor(l.x - r_mm / sp.sx)));
    const int x1 = std::min(X.nx - 1, static_cast<int>(std::ceil(l.x + r_mm / sp.sx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(l.y - r_mm / sp.sy)));
    const int y1 = std::min(X.ny - 1, static_cast<int>(std::ceil(l.y + r_mm / sp.sy)));
    const int z0 = std::max(0, static_cast<int>(std::floor(l.z - r_mm / sp.sz)));
    const int z1 = std::min(X.nz - 1, static_cast<int>(std::ceil(l.z + r_mm / sp.sz)));
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dx = (x - l.x) * sp.sx;
          const double dy = (y - l.y) * sp.sy;
          const double dz = (z - l.z) * sp.sz;
          if (dx * dx + dy * dy + dz * dz <= r_mm * r_mm)
            cls_target[(static_cast<std::size_t>(z) * X.ny + y) * X.nx + x] = 1;
        }

    RegressionTarget t;
    t.x = std::clamp(static_cast<int>(std::floor(l.x)), 0, X.nx - 1);
    t.y = std::clamp(static_cast<int>(std::floor(l.y)), 0, X.ny - 1);
    t.z = std::clamp(static_cast<int>(std::floor(l.z)), 0, X.nz - 1);
    t.fx = std::clamp(l.x - t.x, 0.001, 0.999);
    t.fy = std::clamp(l.y - t.y, 0.001, 0.999);
    t.fz = std::clamp(l.z - t.z, 0.001, 0.999);
    t.log_size = std::log(l.diameter_mm / anchor_size_mm);
    reg_targets.push_back(t);
  }
}

class CsvLog {
 public:
  CsvLog(const std::string& path, const std::string& header) : f_(path) {
    if (!f_) throw std::runtime_error("cannot write " + path);
    f_ << header << "\n";
  }
  template <typename... T>
  void row(T... vals) {
    bool first = true;
    ((f_ << (first ? "" : ",") << format(vals), first = false), ...);
    f_ << "\n";
  }
  void flush() { f_.flush(); }

 private:
  static std::string format(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
  }
  static std::string format(int v) { return std::to_string(v); }
  static std::string format(long v) { return std::to_string(v); }
  std::ofstream f_;
};

}  // namespace

TrainedDetector train_detector(const std::vector<SubjectRecord>& subjects,
                               const ExperimentConfig& config,
                               const std::string& run_dir) {
  config.validate();
  fs::create_directories(fs::path(run_dir) / "checkpoints");
  fs::create_directories(fs::path(run_dir) / "logs");

  std::vector<PreprocessedSubject> pool;
  pool.reserve(subjects.size());
  for (const auto& s : subjects)
    pool.push_back(preprocess_for_detection(s, config.detector.target_slices));

  const bool hspl = config.ablation == AblationArm::RpnFfmHspl;
  LossWeights weights = config.losses;
  if (!hspl) weights.lambda_con = 0.0;

  TrainedDetector out;
  out.model = std::make_unique<DetectorModel>(config.detector, config.ablation,
                                              config.seed);
  nn::ParamRefs params = out.model->parameters();
  if (hspl) {
    out.prototypes =
        std::make_unique<PrototypePair>(config.detector.base_channels, config.seed);
    out.prototypes->collect(params);
  }
  nn::Sgd opt(params, config.optimizer.lr, config.optimizer.momentum);
  nn::StepLr sched{config.optimizer.lr, config.scheduler.step_size,
                   config.scheduler.gamma};

  Rng sampler_rng(Rng::derive(config.seed, 0x5A3D1E));
  CsvLog loss_log((fs::path(run_dir) / "logs" / "losses.csv").string(),
                  "step,L_cls,L_reg,L_con,L_final");
  std::unique_ptr<std::ofstream> feature_csv;
  if (config.dump_features) {
    feature_csv = std::make_unique<std::ofstream>(
        (fs::path(run_dir) / "logs" / "features.csv").string());
    *feature_csv << "subject_id,x,y,z,is_cmb";
    for (int ch = 0; ch < config.detector.base_channels; ++ch)
      *feature_csv << ",v_" << ch;
    *feature_csv << "\n";
  }

  std::vector<std::uint8_t> cls_target;
  std::vector<RegressionTarget> reg_targets;
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_lr(sched.at_epoch(epoch));
    for (int pair = 0; pair < config.crops_per_epoch / 2; ++pair) {
      const auto crops = sample_balanced_crops(pool, config.detector.train_crop, 2,
                                               sampler_rng);
      for (const TrainingCrop& crop : crops) {
        opt.zero_grad();
        auto fwd = out.model->forward(crop.X);

        build_targets(crop, config.detector.anchor_size_mm, cls_target, reg_targets);
        std::vector<double> d_prob_d;
        const double l_cls = focal_loss(fwd.field.prob.v, cls_target,
                                        weights.focal_gamma, weights.focal_alpha,
                                        &d_prob_d);
        nn::Tensor d_reg;
        const double l_reg = regression_loss(fwd.field.reg, reg_targets, &d_reg);

        double l_con = 0.0;
        nn::Tensor d_final_extra;
        if (hspl) {
          const auto coords = select_coordinate(crop, fwd.field.prob);
          d_final_extra = nn::Tensor(fwd.final_map.c, fwd.final_map.nz,
                                     fwd.final_map.ny, fwd.final_map.nx);
          const double inv_k = 1.0 / static_cast<double>(coords.size());
          auto& proto_a = crop.contains_cmb ? out.prototypes->cmb()
                                            : out.prototypes->mimic();
          auto& proto_b = crop.contains_cmb ? out.prototypes->mimic()
                                            : out.prototypes->cmb();
          for (const auto& c : coords) {
            const FeatureVector v =
                extract_feature_vector(fwd.final_map, c, crop.contains_cmb);
            std::vector<double> vv(v.values.begin(), v.values.end());
            std::vector<double> ma(proto_a.value.begin(), proto_a.value.end());
            std::vector<double> mb(proto_b.value.begin(), proto_b.value.end());
            const ConcentrationGrad g =
                concentration_loss_grad(vv, ma, mb, weights.margin_n);
            l_con += g.loss * inv_k;
            const double scale = weights.lambda_con * inv_k;
            for (int ch = 0; ch < fwd.final_map.c; ++ch) {
              d_final_extra.at(ch, c[2], c[1], c[0]) +=
                  static_cast<float>(scale * g.d_v[ch]);
              proto_a.grad[ch] += static_cast<float>(scale * g.d_ma[ch]);
              proto_b.grad[ch] += static_cast<float>(scale * g.d_mb[ch]);
            }
            if (feature_csv) {
              *feature_csv << pool[crop.subject_index].subject_id << ','
                           << crop.window.x0 + c[0] << ',' << crop.window.y0 + c[1]
                           << ',' << crop.window.z0 + c[2] << ','
                           << (crop.contains_cmb ? 1 : 0);
              for (float val : v.values) *feature_csv << ',' << val;
              *feature_csv << "\n";
            }
          }
        }

        LossBreakdown loss;
        try {
          loss = total_loss(l_cls, l_reg, l_con, weights);
        } catch (const std::exception& e) {
          throw std::runtime_error("train_detector: aborted at step " +
                                   std::to_string(step) + ": " + e.what());
        }

        nn::Tensor d_prob(1, fwd.field.prob.nz, fwd.field.prob.ny, fwd.field.prob.nx);
        for (std::size_t i = 0; i < d_prob.v.size(); ++i)
          d_prob.v[i] = static_cast<float>(weights.lambda_cls * d_prob_d[i]);
        for (auto& v : d_reg.v) v *= static_cast<float>(weights.lambda_reg);

        out.model->backward(d_prob, d_reg, d_final_extra);
        opt.step();

        loss_log.row(step, loss.l_cls, loss.l_reg, loss.l_con, loss.l_final);
        out.final_loss = loss.l_final;
        ++step;
      }
    }
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 &&
        epoch + 1 < config.epochs) {
      char name[64];
      std::snprintf(name, sizeof(name), "detector_epoch%04d.ckpt", epoch + 1);
      save_checkpoint((fs::path(run_dir) / "checkpoints" / name).string(),
                      "detector", detector_section(config), params);
    }
  }
  loss_log.flush();

  out.checkpoint_path =
      (fs::path(run_dir) / "checkpoints" / "detector_final.ckpt").string();
  nlohmann::json meta = detector_section(config);
  meta["config_hash"] = config_hash(detector_section(config));
  save_checkpoint(out.checkpoint_path, "detector", meta, params);
  return out;
}

TrainedDetector load_detector(const std::string& checkpoint_path) {
  const nlohmann::json meta = nn::peek_checkpoint_config(checkpoint_path);
  ExperimentConfig tmp;
  tmp.detector = config_from_json(nlohmann::json{{"detector", meta}}).detector;
  const AblationArm arm = ablation_from_string(meta.at("ablation").get<std::string>());
  TrainedDetector out;
  out.checkpoint_path = checkpoint_path;
  out.model = std::make_unique<DetectorModel>(tmp.detector, arm, /*init_seed=*/0);
  nn::ParamRefs params = out.model->parameters();
  if (arm == AblationArm::RpnFfmHspl) {
    out.prototypes = std::make_unique<PrototypePair>(tmp.detector.base_channels, 0);
    out.prototypes->collect(params);
  }
  nn::load_checkpoint(checkpoint_path, "detector", params);
  return out;
}

TrainedSegmenter train_segmenter(const std::vector<SubjectRecord>& subjects,
                                 const ExperimentConfig& config,
                                 const std::string& run_dir) {
  config.validate();
  fs::create_directories(fs::path(run_dir) / "checkpoints");
  fs::create_directories(fs::path(run_dir) / "logs");
  const SegmenterConfig& sc = config.segmenter;

  struct Prepared {
    Volume3D image;  // normalized
    CoordinateTensors coords;
    const RegionLabelMap* labels;
  };
  std::vector<Prepared> pool;
  for (const auto& s : subjects) {
    if (!s.label_map) continue;
    const Volume3D* image = nullptr;
    if (sc.input_modality == Modality::SWI) {
      image = &s.swi;
    } else {
      if (!s.t1) continue;
      image = &*s.t1;
    }
    Prepared p{normalize_minmax(*image),
               make_coordinate_tensors(image->size(), image->spacing()),
               &*s.label_map};
    pool.push_back(std::move(p));
  }
  if (pool.empty())
    throw std::invalid_argument(
        "train_segmenter: no subject has both the input modality and a label map");

  TrainedSegmenter out;
  out.model = std::make_unique<SegmenterModel>(sc, config.seed);
  nn::ParamRefs params = out.model->parameters();
  nn::Sgd opt(params, config.optimizer.lr, config.optimizer.momentum);
  nn::StepLr sched{config.optimizer.lr, config.scheduler.step_size,
                   config.scheduler.gamma};
  Rng rng(Rng::derive(config.seed, 0x5E6A11));

  CsvLog loss_log((fs::path(run_dir) / "logs" / "losses_segmenter.csv").string(),
                  "step,L_dice");
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_lr(sched.at_epoch(epoch));
    for (int k = 0; k < config.crops_per_epoch; ++k) {
      const Prepared& p = pool[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
      const GridSize g = p.image.size();
      const CropSpec w{
          static_cast<int>(rng.uniform_int(0, g.nx - sc.crop_size.nx)),
          static_cast<int>(rng.uniform_int(0, g.ny - sc.crop_size.ny)),
          static_cast<int>(rng.uniform_int(0, g.nz - sc.crop_size.nz)),
          sc.crop_size.nx, sc.crop_size.ny, sc.crop_size.nz};

      nn::Tensor x(sc.in_channels, w.d, w.h, w.w);
      nn::set_channel(x, 0, extract_crop(p.image, w));
      nn::set_channel(x, 1, extract_crop(p.coords.x, w));
      nn::set_channel(x, 2, extract_crop(p.coords.y, w));
      nn::set_channel(x, 3, extract_crop(p.coords.z, w));

      nn::Tensor target(sc.classes, w.d, w.h, w.w);
      const Volume3D label_crop = extract_crop(p.labels->labels, w);
      for (int z = 0; z < w.d; ++z)
        for (int y = 0; y < w.h; ++y)
          for (int xx = 0; xx < w.w; ++xx)
            target.at(static_cast<int>(label_crop(xx, y, z)), z, y, xx) = 1.0f;

      opt.zero_grad();
      const nn::Tensor prob = out.model->forward(x);
      nn::Tensor d_prob;
      const double l_dice = dice_loss(prob, target, &d_prob);
      if (std::isnan(l_dice))
        throw std::runtime_error("train_segmenter: dice loss is NaN at step " +
                                 std::to_string(step));
      out.model->backward(d_prob);
      opt.step();
      loss_log.row(step, l_dice);
      out.final_loss = l_dice;
      ++step;
    }
  }
  loss_log.flush();

  out.checkpoint_path =
      (fs::path(run_dir) / "checkpoints" / "segmenter_final.ckpt").string();
  nlohmann::json meta = segmenter_section(config);
  meta["config_hash"] = config_hash(segmenter_section(config));
  save_checkpoint(out.checkpoint_path, "segmenter", meta, params);
  return out;
}

std::unique_ptr<SegmenterModel> load_segmenter(const std::string& checkpoint_path) {
  const nlohmann::json meta = nn::peek_checkpoint_config(checkpoint_path);
  ExperimentConfig tmp;
  tmp.segmenter = config_from_json(nlohmann::json{{"segmenter", meta}}).segmenter;
  auto model = std::make_unique<SegmenterModel>(tmp.segmenter, /*init_seed=*/0);
  nn::ParamRefs params = model->parameters();
  nn::load_checkpoint(checkpoint_path, "segmenter", params);
  return model;
}

}  // namespace cmb
