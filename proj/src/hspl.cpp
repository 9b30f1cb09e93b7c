#include "cmbdet/hspl.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cmbdet/volume_ops.hpp"

namespace cmb {

PrototypePair::PrototypePair(int channels, std::uint64_t seed) : channels_(channels) {
  Rng rng(Rng::derive(seed, 0x9207071));
  cmb_.name = "prototype.cmb";
  cmb_.shape = {channels};
  cmb_.resize(channels);
  mimic_.name = "prototype.mimic";
  mimic_.shape = {channels};
  mimic_.resize(channels);
  for (auto& v : cmb_.value) v = static_cast<float>(rng.normal(0.0, 0.01));
  for (auto& v : mimic_.value) v = static_cast<float>(rng.normal(0.0, 0.01));
}

void PrototypePair::collect(nn::ParamRefs& out) {
  out.push_back(&cmb_);
  out.push_back(&mimic_);
}

namespace {

// A crop counts as brain-bearing when its center voxel is not background.
bool crop_in_brain(const Volume3D& swi, const CropSpec& w) {
  const float center =
      swi(w.x0 + w.w / 2, w.y0 + w.h / 2, w.z0 + w.d / 2);
  return center > 0.15f;
}

struct InterpAnnotation {
  double x, y, z;  // interpolated-space voxel coords
  double diameter_mm;
};

std::vector<InterpAnnotation> annotations_in_interp_space(
    const PreprocessedSubject& s, int target_slices) {
  std::vector<InterpAnnotation> out;
  out.reserve(s.annotations.size());
  for (const auto& a : s.annotations) {
    InterpAnnotation ia;
    ia.x = a.x;
    ia.y = a.y;
    ia.z = map_z_forward(a.z, s.native_depth, target_slices);
    ia.diameter_mm = a.diameter_mm.value_or(5.0);
    out.push_back(ia);
  }
  return out;
}

bool inside_window(const InterpAnnotation& a, const CropSpec& w) {
  return a.x >= w.x0 && a.x < w.x0 + w.w && a.y >= w.y0 && a.y < w.y0 + w.h &&
         a.z >= w.z0 && a.z < w.z0 + w.d;
}

TrainingCrop materialize(const PreprocessedSubject& s, int subject_index,
                         const CropSpec& w,
                         const std::vector<InterpAnnotation>& interp_annos) {
  TrainingCrop crop;
  crop.window = w;
  crop.subject_index = subject_index;
  crop.spacing = s.swi.spacing();
  crop.X = nn::Tensor(2, w.d, w.h, w.w);
  nn::set_channel(crop.X, 0, extract_crop(s.swi, w));
  nn::set_channel(crop.X, 1, extract_crop(s.phase, w));
  for (const auto& a : interp_annos) {
    if (!inside_window(a, w)) continue;
    TrainingCrop::Lesion l;
    l.x = a.x - w.x0;
    l.y = a.y - w.y0;
    l.z = a.z - w.z0;
    l.diameter_mm = a.diameter_mm;
    crop.lesions.push_back(l);
    crop.cmb_coords.push_back(
        {std::min(w.w - 1, static_cast<int>(std::floor(l.x + 0.5))),
         std::min(w.h - 1, static_cast<int>(std::floor(l.y + 0.5))),
         std::min(w.d - 1, static_cast<int>(std::floor(l.z + 0.5)))});
  }
  crop.contains_cmb = !crop.cmb_coords.empty();
  return crop;
}

}  // namespace

std::vector<TrainingCrop> sample_balanced_crops(
    const std::vector<PreprocessedSubject>& pool, GridSize crop_size, int count,
    Rng& rng) {
  if (count % 2 != 0) throw std::invalid_argument("sample_balanced_crops: count must be even");
  if (pool.empty()) throw std::invalid_argument("sample_balanced_crops: empty pool");

  std::vector<int> with_cmbs;
  std::vector<std::vector<InterpAnnotation>> interp(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const int target = pool[i].swi.size().nz;
    interp[i] = annotations_in_interp_space(pool[i], target);
    if (!interp[i].empty()) with_cmbs.push_back(static_cast<int>(i));
  }
  if (with_cmbs.empty())
    throw std::invalid_argument("sample_balanced_crops: no subject has a CMB");

  for (const auto& s : pool) {
    const GridSize g = s.swi.size();
    if (crop_size.nx > g.nx || crop_size.ny > g.ny || crop_size.nz > g.nz)
      throw std::invalid_argument("sample_balanced_crops: crop larger than volume");
  }

  const auto origin_range = [&](double c, int extent, int win) {
    // Valid origins such that coordinate c lands inside the window.
    int lo = static_cast<int>(std::ceil(c)) - win + 1;
    int hi = static_cast<int>(std::floor(c));
    lo = std::max(lo, 0);
    hi = std::min(hi, extent - win);
    return std::pair<int, int>(lo, hi);
  };

  std::vector<TrainingCrop> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const bool want_positive = k % 2 == 0;
    if (want_positive) {
      const int si = with_cmbs[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(with_cmbs.size()) - 1))];
      const auto& annos = interp[si];
      const auto& a = annos[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(annos.size()) - 1))];
      const GridSize g = pool[si].swi.size();
      const auto [x_lo, x_hi] = origin_range(a.x, g.nx, crop_size.nx);
      const auto [y_lo, y_hi] = origin_range(a.y, g.ny, crop_size.ny);
      const auto [z_lo, z_hi] = origin_range(a.z, g.nz, crop_size.nz);
      CropSpec w{static_cast<int>(rng.uniform_int(x_lo, x_hi)),
                 static_cast<int>(rng.uniform_int(y_lo, y_hi)),
                 static_cast<int>(rng.uniform_int(z_lo, z_hi)),
                 crop_size.nx, crop_size.ny, crop_size.nz};
      out.push_back(materialize(pool[si], si, w, annos));
    } else {
      constexpr int kMaxAttempts = 1000;
      bool placed = false;
      for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
        const int si = static_cast<int>(
            rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1));
        const GridSize g = pool[si].swi.size();
        CropSpec w{static_cast<int>(rng.uniform_int(0, g.nx - crop_size.nx)),
                   static_cast<int>(rng.uniform_int(0, g.ny - crop_size.ny)),
                   static_cast<int>(rng.uniform_int(0, g.nz - crop_size.nz)),
                   crop_size.nx, crop_size.ny, crop_size.nz};
        bool has_cmb = false;
        for (const auto& a : interp[si])
          if (inside_window(a, w)) {
            has_cmb = true;
            break;
          }
        if (has_cmb) continue;
        // Prefer brain-bearing negatives; accept anything late in the search.
        if (attempt < kMaxAttempts / 2 && !crop_in_brain(pool[si].swi, w)) continue;
        out.push_back(materialize(pool[si], si, w, interp[si]));
        placed = true;
      }
      if (!placed)
        throw std::runtime_error(
            "sample_balanced_crops: no CMB-free region found after bounded attempts");
    }
  }
  return out;
}

std::vector<std::array<int, 3>> select_coordinate(const TrainingCrop& crop,
                                                  const nn::Tensor& prob_map) {
  if (crop.contains_cmb) return crop.cmb_coords;

  float best = -1.0f;
  std::array<int, 3> best_c{0, 0, 0};
  for (int z = 0; z < prob_map.nz; ++z)
    for (int y = 0; y < prob_map.ny; ++y)
      for (int x = 0; x < prob_map.nx; ++x) {
        const float p = prob_map.at(0, z, y, x);
        const std::array<int, 3> c{x, y, z};
        if (p > best || (p == best && c < best_c)) {
          best = p;
          best_c = c;
        }
      }
  return {best_c};
}

FeatureVector extract_feature_vector(const nn::Tensor& f, std::array<int, 3> coord,
                                     bool source_is_cmb) {
  const auto [x, y, z] = coord;
  if (x < 0 || y < 0 || z < 0 || x >= f.nx || y >= f.ny || z >= f.nz)
    throw std::out_of_range("extract_feature_vector: coordinate outside feature grid");
  FeatureVector v;
  v.source_coord = coord;
  v.source_is_cmb = source_is_cmb;
  v.values.resize(f.c);
  for (int ch = 0; ch < f.c; ++ch) v.values[ch] = f.at(ch, z, y, x);
  return v;
}

ConcentrationGrad concentration_loss_grad(const std::vector<double>& v,
                                          const std::vector<double>& m_a,
                                          const std::vector<double>& m_b,
                                          double margin_n) {
  if (v.size() != m_a.size() || v.size() != m_b.size())
    throw std::invalid_argument("concentration_loss: dimension mismatch");
  constexpr double kEps = 1e-8;
  double da = 0, db = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double ea = v[i] - m_a[i];
    const double eb = v[i] - m_b[i];
    da += ea * ea;
    db += eb * eb;
  }
  const double denom = da + db + kEps;
  ConcentrationGrad g;
  g.loss = (da - db) / denom + margin_n;

  // d/dda = (2*db + eps) / denom^2, d/ddb = -(2*da + eps) / denom^2
  const double dda = (2.0 * db + kEps) / (denom * denom);
  const double ddb = -(2.0 * da + kEps) / (denom * denom);
  g.d_v.resize(v.size());
  g.d_ma.resize(v.size());
  g.d_mb.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double ea = v[i] - m_a[i];
    const double eb = v[i] - m_b[i];
    g.d_v[i] = 2.0 * ea * dda + 2.0 * eb * ddb;
    g.d_ma[i] = -2.0 * ea * dda;
    g.d_mb[i] = -2.0 * eb * ddb;
  }
  return g;
}

double concentration_loss(const FeatureVector& v, const PrototypePair& protos,
                          const LossWeights& weights) {
  std::vector<double> vv(v.values.begin(), v.values.end());
  std::vector<double> ma, mb;
  const auto& cmb = protos.cmb().value;
  const auto& mimic = protos.mimic().value;
  if (v.source_is_cmb) {
    ma.assign(cmb.begin(), cmb.end());
    mb.assign(mimic.begin(), mimic.end());
  } else {
    ma.assign(mimic.begin(), mimic.end());
    mb.assign(cmb.begin(), cmb.end());
  }
  return concentration_loss_grad(vv, ma, mb, weights.margin_n).loss;
}

double focal_loss(const std::vector<double>& prob,
                  const std::vector<std::uint8_t>& target, double gamma, double alpha,
                  std::vector<double>* d_prob) {
  if (prob.size() != target.size())
    throw std::invalid_argument("focal_loss: grid mismatch");
  if (prob.empty()) return 0.0;
  constexpr double kEps = 1e-7;
  const double n = static_cast<double>(prob.size());
  if (d_prob) d_prob->assign(prob.size(), 0.0);

  double sum = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = std::clamp(prob[i], kEps, 1.0 - kEps);
    const bool pos = target[i] != 0;
    const double pt = pos ? p : 1.0 - p;
    const double at = pos ? alpha : 1.0 - alpha;
    const double w = gamma > 0.0 ? std::pow(1.0 - pt, gamma) : 1.0;
    sum += -at * w * std::log(pt);
    if (d_prob) {
      // d/dpt of -at*(1-pt)^g*log(pt), then dpt/dp = +/-1
      double d = -at * w / pt;
      if (gamma > 0.0)
        d += at * gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt);
      (*d_prob)[i] = (pos ? d : -d) / n;
    }
  }
  return sum / n;
}

double focal_loss(const std::vector<float>& prob, const std::vector<std::uint8_t>& target,
                  double gamma, double alpha, std::vector<double>* d_prob) {
  return focal_loss(std::vector<double>(prob.begin(), prob.end()), target, gamma,
                    alpha, d_prob);
}

double regression_loss(const nn::Tensor& reg,
                       const std::vector<RegressionTarget>& targets,
                       nn::Tensor* d_reg) {
  if (d_reg) *d_reg = nn::Tensor(reg.c, reg.nz, reg.ny, reg.nx);
  if (targets.empty()) return 0.0;
  const std::size_t spatial = reg.spatial();
  const double inv_n = 1.0 / static_cast<double>(targets.size());

  double sum = 0.0;
  for (const auto& t : targets) {
    const std::size_t i = reg.index(0, t.z, t.y, t.x);
    const double f_target[3] = {t.fx, t.fy, t.fz};
    for (int axis = 0; axis < 3; ++axis) {
      const double raw = reg.v[axis * spatial + i];
      const double s = 1.0 / (1.0 + std::exp(-raw));
      const double err = s - f_target[axis];
      sum += err * err;
      if (d_reg)
        d_reg->v[axis * spatial + i] +=
            static_cast<float>(2.0 * err * s * (1.0 - s) * inv_n);
    }
    const double size_err = static_cast<double>(reg.v[3 * spatial + i]) - t.log_size;
    sum += size_err * size_err;
    if (d_reg) d_reg->v[3 * spatial + i] += static_cast<float>(2.0 * size_err * inv_n);
  }
  return sum * inv_n;
}

LossBreakdown total_loss(double l_cls, double l_reg, double l_con,
                         const LossWeights& weights) {
  if (std::isnan(l_cls)) throw std::runtime_error("total_loss: L_cls is NaN");
  if (std::isnan(l_reg)) throw std::runtime_error("total_loss: L_reg is NaN");
  if (std::isnan(l_con)) throw std::runtime_error("total_loss: L_con is NaN");
  LossBreakdown b;
  b.l_cls = l_cls;
  b.l_reg = l_reg;
  b.l_con = l_con;
  b.l_final = weights.lambda_cls * l_cls + weights.lambda_reg * l_reg +
              weights.lambda_con * l_con;
  return b;
}

}  // namespace cmb
