#include "cmbdet/anatomical.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cmbdet/volume_ops.hpp"

namespace cmb {

AsegMappingTable AsegMappingTable::builtin() {
  AsegMappingTable t;
  const auto L = BombsRegion::Lobar;
  const auto D = BombsRegion::Deep;
  const auto I = BombsRegion::Infratentorial;
  const auto N = BombsRegion::None;
  t.entries_ = {
      // lobar: cortex and subcortical white matter structures
      {"cerebral cortex", L},
      {"cerebral white matter", L},
      {"white matter hypointensities", L},
      {"corpus callosum posterior", L},
      {"corpus callosum mid posterior", L},
      {"corpus callosum central", L},
      {"corpus callosum mid anterior", L},
      {"corpus callosum anterior", L},
      {"hippocampus", L},
      {"amygdala", L},
      // deep gray structures
      {"caudate", D},
      {"putamen", D},
      {"pallidum", D},
      {"thalamus", D},
      {"accumbens area", D},
      {"ventral diencephalon", D},
      // infratentorial
      {"brain stem", I},
      {"cerebellum white matter", I},
      {"cerebellum cortex", I},
      // regions where microbleeds cannot exist
      {"lateral ventricle", N},
      {"temporal horn of lateral ventricle", N},
      {"third ventricle", N},
      {"fourth ventricle", N},
      {"cerebrospinal fluid", N},
      {"choroid plexus", N},
      {"vessel", N},
      {"optic chiasm", N},
      // separated manually from cerebral white matter by the raters
      {"internal/external capsule", D},
  };
  return t;
}

AsegMappingTable AsegMappingTable::load(const std::string& json_path) {
  std::ifstream f(json_path);
  if (!f) throw std::runtime_error("cannot open mapping table " + json_path);
  nlohmann::json j;
  f >> j;
  AsegMappingTable t;
  for (auto it = j.begin(); it != j.end(); ++it)
    t.entries_[it.key()] = bombs_region_from_string(it.value().get<std::string>());
  if (t.entries_.empty())
    throw std::runtime_error(json_path + ": empty mapping table");
  return t;
}

BombsRegion AsegMappingTable::map_aseg_to_bombs(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) {
    std::ostringstream msg;
    msg << "unknown Aseg subregion '" << name << "'; valid names:";
    for (const auto& [k, v] : entries_) msg << " '" << k << "'";
    throw std::invalid_argument(msg.str());
  }
  return it->second;
}

void SegmenterConfig::validate() const {
  if (in_channels != 4)
    throw std::invalid_argument("SegmenterConfig: in_channels must be 1 image + 3 coords");
  if (classes != 4) throw std::invalid_argument("SegmenterConfig: classes must be 4");
  if (input_modality != Modality::SWI && input_modality != Modality::T1)
    throw std::invalid_argument("SegmenterConfig: input modality must be SWI or T1");
}

GridSize SegmenterConfig::effective_stride() const {
  GridSize s = infer_stride;
  if (s.nx <= 0) s.nx = std::max(1, crop_size.nx / 2);
  if (s.ny <= 0) s.ny = std::max(1, crop_size.ny / 2);
  if (s.nz <= 0) s.nz = std::max(1, crop_size.nz / 2);
  return s;
}

SegmenterModel::SegmenterModel(const SegmenterConfig& config, std::uint64_t init_seed)
    : config_(config),
      backbone_("segmenter", config.in_channels, config.base_channels),
      out_conv_("segmenter.out", config.base_channels, config.classes, 1, false) {
  config_.validate();
  Rng rng(Rng::derive(init_seed, 0x5E63E27));
  backbone_.init(rng);
  out_conv_.init(rng);
}

nn::ParamRefs SegmenterModel::parameters() {
  nn::ParamRefs out;
  backbone_.collect(out);
  out_conv_.collect(out);
  return out;
}

nn::Tensor SegmenterModel::forward(const nn::Tensor& crop) {
  if (crop.c != config_.in_channels)
    throw std::invalid_argument("SegmenterModel: expected 4-channel input");
  nn::UNetLevels levels = backbone_.forward(crop);
  prob_cache_ = nn::softmax_channels(out_conv_.forward(levels.fine));
  return prob_cache_;
}

void SegmenterModel::backward(const nn::Tensor& d_prob) {
  // Softmax Jacobian-vector product per position.
  const nn::Tensor& p = prob_cache_;
  nn::Tensor d_logits(p.c, p.nz, p.ny, p.nx);
  const std::size_t spatial = p.spatial();
  for (std::size_t i = 0; i < spatial; ++i) {
    float dot = 0.0f;
    for (int ch = 0; ch < p.c; ++ch)
      dot += p.v[ch * spatial + i] * d_prob.v[ch * spatial + i];
    for (int ch = 0; ch < p.c; ++ch)
      d_logits.v[ch * spatial + i] =
          p.v[ch * spatial + i] * (d_prob.v[ch * spatial + i] - dot);
  }
  nn::UNetLevels grads;
  grads.fine = out_conv_.backward(d_logits);
  backbone_.backward(grads);
}

double dice_loss(const nn::Tensor& pred, const nn::Tensor& target, nn::Tensor* d_pred) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("dice_loss: shape mismatch");
  constexpr double kEps = 1e-6;
  const std::size_t spatial = pred.spatial();
  const int classes = pred.c;
  if (d_pred) *d_pred = nn::Tensor(pred.c, pred.nz, pred.ny, pred.nx);

  double mean_dice = 0.0;
  for (int k = 0; k < classes; ++k) {
    const float* p = pred.v.data() + static_cast<std::size_t>(k) * spatial;
    const float* t = target.v.data() + static_cast<std::size_t>(k) * spatial;
    double inter = 0.0, total = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) {
      inter += static_cast<double>(p[i]) * t[i];
      total += static_cast<double>(p[i]) + t[i];
    }
    const double denom = total + kEps;
    mean_dice += 2.0 * inter / denom;
    if (d_pred) {
      float* d = d_pred->v.data() + static_cast<std::size_t>(k) * spatial;
      // d dice_k / dp_i = (2 t_i * denom - 2 inter) / denom^2
      const double inv = 1.0 / (static_cast<double>(classes) * denom * denom);
      for (std::size_t i = 0; i < spatial; ++i)
        d[i] = static_cast<float>(-(2.0 * t[i] * denom - 2.0 * inter) * inv);
    }
  }
  return 1.0 - mean_dice / classes;
}

RegionLabelMap segment_subject(const SubjectRecord& subject, SegmenterModel& model) {
  const SegmenterConfig& cfg = model.config();
  const Volume3D* image = nullptr;
  if (cfg.input_modality == Modality::SWI) {
    image = &subject.swi;
  } else {
    if (!subject.t1.has_value())
      throw std::invalid_argument("segment_subject: subject " + subject.subject_id +
                                  " has no T1 volume");
    image = &*subject.t1;
  }
  if (image->space() != Space::Native)
    throw std::invalid_argument("segment_subject: expects native-space input");

  const Volume3D norm = normalize_minmax(*image);
  const GridSize shape = norm.size();
  const CoordinateTensors coords = make_coordinate_tensors(shape, norm.spacing());
  const auto windows = sliding_windows(shape, cfg.crop_size, cfg.effective_stride());

  // Per-class probability accumulation plus a coverage count for averaging.
  std::vector<std::vector<float>> acc(
      cfg.classes, std::vector<float>(static_cast<std::size_t>(shape.count()), 0.0f));
  std::vector<std::uint16_t> hits(static_cast<std::size_t>(shape.count()), 0);

  for (const CropSpec& w : windows) {
    nn::Tensor crop(cfg.in_channels, w.d, w.h, w.w);
    nn::set_channel(crop, 0, extract_crop(norm, w));
    nn::set_channel(crop, 1, extract_crop(coords.x, w));
    nn::set_channel(crop, 2, extract_crop(coords.y, w));
    nn::set_channel(crop, 3, extract_crop(coords.z, w));
    const nn::Tensor prob = model.forward(crop);
    for (int z = 0; z < w.d; ++z)
      for (int y = 0; y < w.h; ++y)
        for (int x = 0; x < w.w; ++x) {
          const std::size_t gi = norm.index(w.x0 + x, w.y0 + y, w.z0 + z);
          for (int k = 0; k < cfg.classes; ++k)
            acc[k][gi] += prob.at(k, z, y, x);
          ++hits[gi];
        }
  }

  RegionLabelMap out;
  out.labels = Volume3D(shape, norm.spacing(), Modality::LabelMap, Space::Native);
  for (std::size_t i = 0; i < hits.size(); ++i) {
    int best_k = 0;
    float best_p = -1.0f;
    for (int k = 0; k < cfg.classes; ++k) {
      const float p = acc[k][i] / hits[i];
      if (p > best_p) {
        best_p = p;
        best_k = k;
      }
    }
    out.labels.data()[i] = static_cast<float>(best_k);
  }
  return out;
}

BombsRegion lookup_region(const DetectionCandidate& c, const RegionLabelMap& map,
                          double* neighborhood_agreement) {
  const auto round_half_up = [](double v) {
    return static_cast<int>(std::floor(v + 0.5));
  };
  const int x = round_half_up(c.x), y = round_half_up(c.y), z = round_half_up(c.z);
  if (!map.labels.contains(x, y, z))
    throw std::out_of_range("lookup_region: candidate center outside label map");
  const BombsRegion center = map.at(x, y, z);

  if (neighborhood_agreement) {
    int agree = 0, total = 0;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!map.labels.contains(x + dx, y + dy, z + dz)) continue;
          ++total;
          if (map.at(x + dx, y + dy, z + dz) == center) ++agree;
        }
    *neighborhood_agreement = total > 0 ? static_cast<double>(agree) / total : 1.0;
  }
  return center;
}

FilterResult filter_candidates(const std::vector<DetectionCandidate>& cands,
                               const RegionLabelMap& map) {
  FilterResult r;
  for (const auto& c : cands) {
    const BombsRegion region = lookup_region(c, map);
    if (region == BombsRegion::None) {
      ++r.eliminated_count;
      continue;
    }
    DetectionCandidate kept = c;
    kept.region = region;
    r.kept.push_back(kept);
  }
  return r;
}

}  // namespace cmb
