#include "cmbdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cmb {

const char* to_string(AblationArm a) {
  switch (a) {
    case AblationArm::Rpn: return "rpn";
    case AblationArm::RpnFfm: return "rpn_ffm";
    case AblationArm::RpnFfmHspl: return "rpn_ffm_hspl";
  }
  return "?";
}

AblationArm ablation_from_string(const std::string& s) {
  if (s == "rpn") return AblationArm::Rpn;
  if (s == "rpn_ffm") return AblationArm::RpnFfm;
  if (s == "rpn_ffm_hspl") return AblationArm::RpnFfmHspl;
  throw std::invalid_argument("unknown ablation arm: " + s);
}

void DetectorConfig::validate() const {
  if (levels != 3)
    throw std::invalid_argument("DetectorConfig: levels must be 3 (FFM fuses exactly three)");
  if (anchor_size_mm < 2.0 || anchor_size_mm > 10.0)
    throw std::invalid_argument("DetectorConfig: anchor_size_mm outside [2,10]");
  if (prob_threshold <= 0.0 || prob_threshold >= 1.0)
    throw std::invalid_argument("DetectorConfig: prob_threshold outside (0,1)");
  if (in_channels != 2)
    throw std::invalid_argument("DetectorConfig: detector takes 2 channels (SWI, phase)");
}

GridSize DetectorConfig::effective_stride() const {
  GridSize s = infer_stride;
  if (s.nx <= 0) s.nx = std::max(1, infer_window.nx / 2);
  if (s.ny <= 0) s.ny = std::max(1, infer_window.ny / 2);
  if (s.nz <= 0) s.nz = std::max(1, infer_window.nz / 2);
  return s;
}

PreprocessedSubject preprocess_for_detection(const SubjectRecord& subject,
                                             int target_slices) {
  if (!subject.phase.has_value())
    throw std::invalid_argument("subject " + subject.subject_id +
                                ": detector requires a phase image");
  PreprocessedSubject out;
  out.subject_id = subject.subject_id;
  out.native_depth = subject.swi.size().nz;
  out.native_spacing = subject.swi.spacing();
  out.annotations = subject.annotations;
  out.swi = interpolate_z(normalize_minmax(subject.swi), target_slices);
  out.phase = interpolate_z(normalize_minmax(*subject.phase), target_slices);
  return out;
}

DetectorModel::DetectorModel(const DetectorConfig& config, AblationArm arm,
                             std::uint64_t init_seed)
    : config_(config),
      arm_(arm),
      backbone_("backbone", config.in_channels, config.base_channels),
      ffm_proj_coarse_("ffm.proj_coarse", 4 * config.base_channels,
                       config.base_channels, 1, false, /*bias=*/false),
      ffm_proj_mid_("ffm.proj_mid", 2 * config.base_channels, config.base_channels,
                    1, false, /*bias=*/false),
      ffm_proj_fine_("ffm.proj_fine", config.base_channels, config.base_channels, 1,
                     false, /*bias=*/false),
      ffm_norm_("ffm.norm", config.base_channels),
      head_a_("head.shared", config.base_channels, 2 * config.base_channels, 1, true),
      head_obj_("head.obj", 2 * config.base_channels, 1, 1, false),
      head_reg_("head.reg", 2 * config.base_channels, 4, 1, false) {
  config_.validate();
  Rng rng(Rng::derive(init_seed, 0xD37EC702));
  backbone_.init(rng);
  ffm_proj_coarse_.init(rng);
  ffm_proj_mid_.init(rng);
  ffm_proj_fine_.init(rng);
  head_a_.init(rng);
  head_obj_.init(rng);
  head_reg_.init(rng);
  // Rare-object prior on the objectness bias keeps early training from
  // flooding the map with positives.
  head_obj_.bias().value[0] = -4.0f;
}

nn::ParamRefs DetectorModel::parameters() {
  nn::ParamRefs out;
  backbone_.collect(out);
  if (arm_ != AblationArm::Rpn) {
    ffm_proj_coarse_.collect(out);
    ffm_proj_mid_.collect(out);
    ffm_proj_fine_.collect(out);
    ffm_norm_.collect(out);
  }
  head_a_.collect(out);
  head_obj_.collect(out);
  head_reg_.collect(out);
  return out;
}

nn::UNetLevels DetectorModel::backbone_forward(const nn::Tensor& crop) {
  if (crop.c != config_.in_channels)
    throw std::invalid_argument("backbone_forward: expected 2-channel (SWI, phase) crop");
  return backbone_.forward(crop);
}

nn::Tensor DetectorModel::fuse_features(const nn::UNetLevels& levels) {
  const nn::Tensor& fine = levels.fine;
  if (levels.coarse.nx * 4 != fine.nx || levels.mid.nx * 2 != fine.nx ||
      levels.coarse.ny * 4 != fine.ny || levels.mid.ny * 2 != fine.ny ||
      levels.coarse.nz * 4 != fine.nz || levels.mid.nz * 2 != fine.nz)
    throw std::invalid_argument("fuse_features: levels are not a 4:2:1 pyramid");

  // 1x1x1 projection commutes with trilinear interpolation, so project on
  // the coarse grid first; it is cheaper by the upsampling factor.
  nn::Tensor pc = ffm_proj_coarse_.forward(levels.coarse);
  nn::Tensor pm = ffm_proj_mid_.forward(levels.mid);
  nn::Tensor sum = ffm_proj_fine_.forward(fine);
  nn::add_inplace(sum, ffm_up_coarse_.forward(pc, fine.nz, fine.ny, fine.nx));
  nn::add_inplace(sum, ffm_up_mid_.forward(pm, fine.nz, fine.ny, fine.nx));
  ffm_sum_cache_ = sum;
  nn::Tensor normed = ffm_norm_.forward(sum);
  ffm_norm_out_cache_ = normed;
  return nn::relu(normed);
}

DetectionFieldOutput DetectorModel::rpn_forward(const nn::Tensor& final_map) {
  nn::Tensor h = head_a_.forward(final_map);
  nn::Tensor logits = head_obj_.forward(h);
  DetectionFieldOutput out;
  out.prob = nn::sigmoid(logits);
  out.reg = head_reg_.forward(h);
  prob_cache_ = out.prob;
  return out;
}

DetectorModel::ForwardResult DetectorModel::forward(const nn::Tensor& crop) {
  nn::UNetLevels levels = backbone_forward(crop);
  ForwardResult r;
  used_ffm_ = arm_ != AblationArm::Rpn;
  r.final_map = used_ffm_ ? fuse_features(levels) : levels.fine;
  r.field = rpn_forward(r.final_map);
  return r;
}

void DetectorModel::backward(const nn::Tensor& d_prob, const nn::Tensor& d_reg,
                             const nn::Tensor& d_final_extra) {
  // Chain through the sigmoid: dL/dlogit = dL/dp * p * (1-p).
  nn::Tensor d_logits = d_prob;
  for (std::size_t i = 0; i < d_logits.v.size(); ++i) {
    const float p = prob_cache_.v[i];
    d_logits.v[i] *= p * (1.0f - p);
  }
  nn::Tensor d_head = head_obj_.backward(d_logits);
  if (!d_reg.v.empty()) nn::add_inplace(d_head, head_reg_.backward(d_reg));
  nn::Tensor d_final = head_a_.backward(d_head);
  if (!d_final_extra.v.empty()) nn::add_inplace(d_final, d_final_extra);

  nn::UNetLevels grads;
  if (used_ffm_) {
    // relu over the normalized sum
    for (std::size_t i = 0; i < d_final.v.size(); ++i)
      if (ffm_norm_out_cache_.v[i] <= 0.0f) d_final.v[i] = 0.0f;
    nn::Tensor d_sum = ffm_norm_.backward(d_final);
    grads.coarse = ffm_proj_coarse_.backward(ffm_up_coarse_.backward(d_sum));
    grads.mid = ffm_proj_mid_.backward(ffm_up_mid_.backward(d_sum));
    grads.fine = ffm_proj_fine_.backward(d_sum);
  } else {
    grads.fine = d_final;
  }
  backbone_.backward(grads);
}

std::vector<DetectionCandidate> decode_boxes(const DetectionFieldOutput& field,
                                             const CropSpec& crop_origin,
                                             double threshold,
                                             double anchor_size_mm) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("decode_boxes: threshold outside (0,1)");
  std::vector<DetectionCandidate> out;
  const nn::Tensor& p = field.prob;
  const std::size_t spatial = p.spatial();
  for (int z = 0; z < p.nz; ++z)
    for (int y = 0; y < p.ny; ++y)
      for (int x = 0; x < p.nx; ++x) {
        const std::size_t i = p.index(0, z, y, x);
        const float score = p.v[i];
        if (score < threshold) continue;
        DetectionCandidate c;
        const auto off = [&](int ch) {
          return 1.0 / (1.0 + std::exp(-static_cast<double>(field.reg.v[ch * spatial + i])));
        };
        c.x = crop_origin.x0 + x + off(0);
        c.y = crop_origin.y0 + y + off(1);
        c.z = crop_origin.z0 + z + off(2);
        c.size_mm = anchor_size_mm * std::exp(static_cast<double>(field.reg.v[3 * spatial + i]));
        c.score = score;
        out.push_back(c);
      }
  return out;
}

namespace {

bool candidate_order(const DetectionCandidate& a, const DetectionCandidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  return a.z < b.z;
}

}  // namespace

std::vector<DetectionCandidate> nms_3d(std::vector<DetectionCandidate> cands,
                                       double radius_mm, Spacing spacing) {
  std::sort(cands.begin(), cands.end(), candidate_order);
  std::vector<DetectionCandidate> kept;
  const double r2 = radius_mm * radius_mm;
  for (const auto& c : cands) {
    bool suppressed = false;
    for (const auto& k : kept) {
      const double dx = (c.x - k.x) * spacing.sx;
      const double dy = (c.y - k.y) * spacing.sy;
      const double dz = (c.z - k.z) * spacing.sz;
      if (dx * dx + dy * dy + dz * dz <= r2) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

std::vector<DetectionCandidate> detect_subject(const PreprocessedSubject& subject,
                                               DetectorModel& model) {
  const DetectorConfig& cfg = model.config();
  if (subject.swi.space() != Space::ZInterp)
    throw std::invalid_argument("detect_subject: subject must be preprocessed");
  const GridSize shape = subject.swi.size();
  const auto windows = sliding_windows(shape, cfg.infer_window, cfg.effective_stride());

  std::vector<DetectionCandidate> all;
  for (const CropSpec& w : windows) {
    nn::Tensor crop(2, w.d, w.h, w.w);
    nn::set_channel(crop, 0, extract_crop(subject.swi, w));
    nn::set_channel(crop, 1, extract_crop(subject.phase, w));
    auto fwd = model.forward(crop);
    auto cands = decode_boxes(fwd.field, w, cfg.prob_threshold, cfg.anchor_size_mm);
    all.insert(all.end(), cands.begin(), cands.end());
  }

  // Back to native z before the global suppression.
  for (auto& c : all)
    c.z = map_z(c.z, subject.native_depth, cfg.target_slices);
  auto kept = nms_3d(std::move(all), cfg.nms_radius_mm, subject.native_spacing);
  std::sort(kept.begin(), kept.end(), candidate_order);
  return kept;
}

}  // namespace cmb
