#include "cmbdet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cmbdet/rng.hpp"

namespace cmb {

namespace {

struct Ellipsoid {
  double cx, cy, cz;  // voxels
  double rx, ry, rz;  // voxels

  double rho(double x, double y, double z) const {
    const double ex = (x - cx) / rx, ey = (y - cy) / ry, ez = (z - cz) / rz;
    return std::sqrt(ex * ex + ey * ey + ez * ez);
  }
};

struct Mm {
  double x, y, z;
};

Mm to_mm(double x, double y, double z, Spacing sp) {
  return {x * sp.sx, y * sp.sy, z * sp.sz};
}

double dist_mm(Mm a, Mm b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                   (a.z - b.z) * (a.z - b.z));
}

double point_segment_dist(Mm p, Mm mid, Mm dir, double half_len) {
  const double vx = p.x - mid.x, vy = p.y - mid.y, vz = p.z - mid.z;
  double t = vx * dir.x + vy * dir.y + vz * dir.z;
  t = std::clamp(t, -half_len, half_len);
  const double qx = mid.x + t * dir.x, qy = mid.y + t * dir.y, qz = mid.z + t * dir.z;
  return dist_mm(p, {qx, qy, qz});
}

void paint_sphere(Volume3D& vol, Mm center, double r_mm, float value) {
  const Spacing sp = vol.spacing();
  const GridSize g = vol.size();
  const int x0 = std::max(0, static_cast<int>(std::floor((center.x - r_mm) / sp.sx)));
  const int x1 = std::min(g.nx - 1, static_cast<int>(std::ceil((center.x + r_mm) / sp.sx)));
  const int y0 = std::max(0, static_cast<int>(std::floor((center.y - r_mm) / sp.sy)));
  const int y1 = std::min(g.ny - 1, static_cast<int>(std::ceil((center.y + r_mm) / sp.sy)));
  const int z0 = std::max(0, static_cast<int>(std::floor((center.z - r_mm) / sp.sz)));
  const int z1 = std::min(g.nz - 1, static_cast<int>(std::ceil((center.z + r_mm) / sp.sz)));
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (dist_mm(to_mm(x, y, z, sp), center) <= r_mm) vol(x, y, z) = value;
}

void paint_tube(Volume3D& vol, Mm mid, Mm dir, double half_len, double r_mm,
                float value, const Ellipsoid& clip) {
  const Spacing sp = vol.spacing();
  const GridSize g = vol.size();
  const double reach_x = std::abs(dir.x) * half_len + r_mm;
  const double reach_y = std::abs(dir.y) * half_len + r_mm;
  const double reach_z = std::abs(dir.z) * half_len + r_mm;
  const int x0 = std::max(0, static_cast<int>(std::floor((mid.x - reach_x) / sp.sx)));
  const int x1 = std::min(g.nx - 1, static_cast<int>(std::ceil((mid.x + reach_x) / sp.sx)));
  const int y0 = std::max(0, static_cast<int>(std::floor((mid.y - reach_y) / sp.sy)));
  const int y1 = std::min(g.ny - 1, static_cast<int>(std::ceil((mid.y + reach_y) / sp.sy)));
  const int z0 = std::max(0, static_cast<int>(std::floor((mid.z - reach_z) / sp.sz)));
  const int z1 = std::min(g.nz - 1, static_cast<int>(std::ceil((mid.z + reach_z) / sp.sz)));
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (clip.rho(x, y, z) > 1.0) continue;  // no tissue outside the brain
        if (point_segment_dist(to_mm(x, y, z, sp), mid, dir, half_len) <= r_mm)
          vol(x, y, z) = value;
      }
}

}  // namespace

SubjectRecord generate_phantom(const PhantomSpec& spec, PhantomTruth* truth) {
  const GridSize g = spec.shape;
  const Spacing sp = spec.spacing;
  Rng rng(spec.seed);

  // Brain ellipsoid with a little per-subject shape jitter.
  Ellipsoid brain{g.nx / 2.0, g.ny / 2.0, g.nz / 2.0,
                  0.42 * g.nx * rng.uniform(0.92, 1.0),
                  0.42 * g.ny * rng.uniform(0.92, 1.0),
                  0.42 * g.nz * rng.uniform(0.92, 1.0)};
  // Ventricle-like pocket: a 'none' island inside the deep core.
  Ellipsoid pocket{brain.cx + 0.10 * brain.rx * rng.uniform(-1.0, 1.0),
                   brain.cy + 0.10 * brain.ry * rng.uniform(-1.0, 1.0),
                   brain.cz + 0.05 * brain.rz,
                   0.20 * brain.rx, 0.16 * brain.ry, 0.22 * brain.rz};
  const double infra_z = brain.cz - 0.45 * brain.rz;

  SubjectRecord rec;
  rec.swi = Volume3D(g, sp, Modality::SWI);
  rec.phase = Volume3D(g, sp, Modality::Phase);
  RegionLabelMap labels;
  labels.labels = Volume3D(g, sp, Modality::LabelMap);

  const float brain_base = static_cast<float>(rng.uniform(0.56, 0.62));
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        const double rho = brain.rho(x, y, z);
        if (rho > 1.0) {
          rec.swi(x, y, z) = 0.03f;
          (*rec.phase)(x, y, z) = 0.04f;
          labels.labels(x, y, z) = 0.0f;
          continue;
        }
        rec.swi(x, y, z) = brain_base - 0.06f * static_cast<float>(rho);
        (*rec.phase)(x, y, z) = 0.50f;
        float code;
        if (pocket.rho(x, y, z) <= 1.0) code = 0.0f;
        else if (z < infra_z) code = 3.0f;
        else if (rho <= 0.45) code = 2.0f;
        else code = 1.0f;
        labels.labels(x, y, z) = code;
      }

  PhantomTruth local_truth;
  PhantomTruth& tr = truth ? *truth : local_truth;
  tr = PhantomTruth{};

  const auto overlaps_existing = [&](Mm c, double r) {
    for (const auto& s : tr.cmbs)
      if (dist_mm(c, to_mm(s.x, s.y, s.z, sp)) <= r + s.r_mm + 1.0) return true;
    for (const auto& s : tr.calcifications)
      if (dist_mm(c, to_mm(s.x, s.y, s.z, sp)) <= r + s.r_mm + 1.0) return true;
    for (const auto& t : tr.vessels)
      if (point_segment_dist(c, to_mm(t.x, t.y, t.z, sp), {t.dx, t.dy, t.dz},
                             t.len_mm / 2.0) <= r + t.r_mm + 1.0)
        return true;
    return false;
  };

  // Tube overlap approximated by sampling points along the new segment.
  const auto tube_overlaps = [&](Mm mid, Mm dir, double half_len, double r) {
    for (int k = -4; k <= 4; ++k) {
      const double t = half_len * k / 4.0;
      const Mm p{mid.x + t * dir.x, mid.y + t * dir.y, mid.z + t * dir.z};
      if (overlaps_existing(p, r)) return true;
    }
    return false;
  };

  const auto sample_brain_point = [&](double rho_max, bool avoid_none) {
    for (int attempt = 0; attempt < 4000; ++attempt) {
      const double x = rng.uniform(0.0, g.nx - 1.0);
      const double y = rng.uniform(0.0, g.ny - 1.0);
      const double z = rng.uniform(2.0, g.nz - 3.0);
      if (brain.rho(x, y, z) > rho_max) continue;
      if (avoid_none) {
        const int code = static_cast<int>(
            labels.labels(static_cast<int>(std::floor(x + 0.5)),
                          static_cast<int>(std::floor(y + 0.5)),
                          static_cast<int>(std::floor(z + 0.5))));
        if (code == 0) continue;
        if (pocket.rho(x, y, z) < 1.35) continue;
      }
      return Mm{x, y, z};
    }
    throw std::runtime_error("generate_phantom: could not place a lesion (spec too dense)");
  };

  const double pocket_min_mm =
      std::min({pocket.rx * sp.sx, pocket.ry * sp.sy, pocket.rz * sp.sz});

  // Calcifications: dark in SWI, bright in phase. Half sit inside the
  // ventricle-like pocket (choroid-plexus style) so the anatomical filter
  // has real prey; they go first because the pocket is the tightest spot.
  // Below this radius a sphere can fall between voxel centers and paint
  // nothing, so it is the floor for every spherical lesion.
  const double r_floor_mm = 0.8 * std::max({sp.sx, sp.sy, sp.sz});
  const auto place_calcification = [&](bool in_pocket) {
    double r = 0;
    Mm c{0, 0, 0};
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 800)
        throw std::runtime_error(
            "generate_phantom: unsatisfiable calcification placement");
      const double shrink = attempt < 200 ? 1.0 : 0.6;
      r = rng.uniform(1.2, 3.0) * shrink;
      if (in_pocket) {
        r = std::max(std::min(r, 0.45 * pocket_min_mm), r_floor_mm);
        c = {pocket.cx + pocket.rx * 0.5 * rng.uniform(-1.0, 1.0),
             pocket.cy + pocket.ry * 0.5 * rng.uniform(-1.0, 1.0),
             pocket.cz + pocket.rz * 0.5 * rng.uniform(-1.0, 1.0)};
        if (pocket.rho(c.x, c.y, c.z) > 0.6) continue;
      } else {
        r = std::max(r_floor_mm, r);
        c = sample_brain_point(0.75, /*avoid_none=*/false);
      }
      if (!overlaps_existing(to_mm(c.x, c.y, c.z, sp), r)) break;
    }
    paint_sphere(rec.swi, to_mm(c.x, c.y, c.z, sp), r,
                 static_cast<float>(rng.uniform(0.15, 0.22)));
    paint_sphere(*rec.phase, to_mm(c.x, c.y, c.z, sp), r,
                 static_cast<float>(rng.uniform(0.80, 0.88)));
    tr.calcifications.push_back({c.x, c.y, c.z, r});
  };
  for (int i = 0; i < spec.n_calcifications; i += 2) place_calcification(true);

  // CMBs: dark spheres in both modalities, annotated.
  for (int i = 0; i < spec.n_cmbs; ++i) {
    double d_mm = 0, r = 0;
    Mm c{0, 0, 0};
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 800)
        throw std::runtime_error("generate_phantom: unsatisfiable CMB placement");
      const double hi = attempt < 200 ? spec.cmb_diameter_range_mm.second
                                      : spec.cmb_diameter_range_mm.first + 1.0;
      d_mm = rng.uniform(spec.cmb_diameter_range_mm.first, hi);
      r = d_mm / 2.0;
      c = sample_brain_point(0.75, /*avoid_none=*/true);
      if (!overlaps_existing(to_mm(c.x, c.y, c.z, sp), r)) break;
    }
    const float dark = static_cast<float>(rng.uniform(0.14, 0.20));
    paint_sphere(rec.swi, to_mm(c.x, c.y, c.z, sp), r, dark);
    paint_sphere(*rec.phase, to_mm(c.x, c.y, c.z, sp), r,
                 static_cast<float>(rng.uniform(0.20, 0.26)));
    tr.cmbs.push_back({c.x, c.y, c.z, r});

    CMBAnnotation a;
    a.x = c.x;
    a.y = c.y;
    a.z = c.z;
    a.diameter_mm = d_mm;
    a.region = labels.at(static_cast<int>(std::floor(c.x + 0.5)),
                         static_cast<int>(std::floor(c.y + 0.5)),
                         static_cast<int>(std::floor(c.z + 0.5)));
    rec.annotations.push_back(a);
  }

  // Pial-vessel mimics: tubes matching CMB darkness in-plane but extended
  // along a mostly-through-plane direction. Length adapts to the brain
  // while staying >= 3x the tube diameter.
  const double brain_z_mm = 2.0 * brain.rz * sp.sz;
  for (int i = 0; i < spec.n_vessels; ++i) {
    double r = 0, len = 0;
    Mm dir{0, 0, 1}, c{0, 0, 0};
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 800)
        throw std::runtime_error("generate_phantom: unsatisfiable vessel placement");
      const double shrink = std::pow(0.85, attempt / 100);
      len = std::min(rng.uniform(14.0, 26.0), 0.8 * brain_z_mm) * shrink;
      len = std::max(len, std::max(8.0, 3.5 * sp.sz));  // spans >= 3 slices
      r = std::min(rng.uniform(0.8, 1.8), len / 6.0);
      dir = {rng.normal(0.0, 0.30), rng.normal(0.0, 0.30),
             rng.bernoulli(0.5) ? 1.0 : -1.0};
      const double n = std::sqrt(dir.x * dir.x + dir.y * dir.y + dir.z * dir.z);
      dir = {dir.x / n, dir.y / n, dir.z / n};
      c = sample_brain_point(0.70, /*avoid_none=*/false);
      // Keep both ends inside the brain so clipping cannot shorten the tube.
      const Mm e1{c.x + dir.x * len / 2.0 / sp.sx, c.y + dir.y * len / 2.0 / sp.sy,
                  c.z + dir.z * len / 2.0 / sp.sz};
      const Mm e2{c.x - dir.x * len / 2.0 / sp.sx, c.y - dir.y * len / 2.0 / sp.sy,
                  c.z - dir.z * len / 2.0 / sp.sz};
      if (brain.rho(e1.x, e1.y, e1.z) > 0.95 || brain.rho(e2.x, e2.y, e2.z) > 0.95)
        continue;
      if (e1.z < 1 || e1.z > g.nz - 2 || e2.z < 1 || e2.z > g.nz - 2) continue;
      if (!tube_overlaps(to_mm(c.x, c.y, c.z, sp), dir, len / 2.0, r)) break;
    }
    const float dark = static_cast<float>(rng.uniform(0.15, 0.22));
    paint_tube(rec.swi, to_mm(c.x, c.y, c.z, sp), dir, len / 2.0, r, dark, brain);
    paint_tube(*rec.phase, to_mm(c.x, c.y, c.z, sp), dir, len / 2.0, r,
               static_cast<float>(rng.uniform(0.22, 0.28)), brain);
    tr.vessels.push_back({c.x, c.y, c.z, dir.x, dir.y, dir.z, r, len});
  }

  for (int i = 1; i < spec.n_calcifications; i += 2) place_calcification(false);

  // Brain means before noise, for the polarity checks.
  {
    double sum_swi = 0, sum_phase = 0;
    long cnt = 0;
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x)
          if (brain.rho(x, y, z) <= 1.0) {
            sum_swi += rec.swi(x, y, z);
            sum_phase += (*rec.phase)(x, y, z);
            ++cnt;
          }
    tr.brain_mean_swi = sum_swi / cnt;
    tr.brain_mean_phase = sum_phase / cnt;
  }

  for (auto& v : rec.swi.data())
    v += static_cast<float>(rng.normal(0.0, spec.noise_sigma));
  for (auto& v : rec.phase->data())
    v += static_cast<float>(rng.normal(0.0, spec.noise_sigma));

  rec.label_map = labels;
  return rec;
}

std::vector<SubjectRecord> generate_dataset(
    int n_subjects, const PhantomSpec& spec_template, std::uint64_t master_seed,
    double normal_fraction, std::vector<PhantomManifestEntry>* manifest) {
  if (n_subjects < 1) throw std::invalid_argument("generate_dataset: need >= 1 subject");
  const int n_normal = static_cast<int>(std::llround(normal_fraction * n_subjects));
  std::vector<SubjectRecord> out;
  out.reserve(n_subjects);
  if (manifest) manifest->clear();
  for (int i = 0; i < n_subjects; ++i) {
    PhantomSpec spec = spec_template;
    spec.seed = Rng::derive(master_seed, static_cast<std::uint64_t>(i));
    const bool normal = i >= n_subjects - n_normal;
    if (normal) spec.n_cmbs = 0;
    SubjectRecord rec = generate_phantom(spec);
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%03d", i);
    rec.subject_id = id;
    if (manifest) manifest->push_back({rec.subject_id, spec.seed, !normal});
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace cmb
