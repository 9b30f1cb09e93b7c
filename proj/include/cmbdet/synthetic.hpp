#ifndef CMBDET_SYNTHETIC_HPP_
#define CMBDET_SYNTHETIC_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmbdet/volume.hpp"

namespace cmb {

struct PhantomSpec {
  GridSize shape{96, 96, 48};
  Spacing spacing{0.5, 0.5, 2.0};
  int n_cmbs = 3;
  int n_vessels = 7;
  int n_calcifications = 4;
  std::pair<double, double> cmb_diameter_range_mm{2.5, 7.0};
  double noise_sigma = 0.02;
  std::uint64_t seed = 1;
};

// Ground-truth lesion geometry, for tests and QA dumps. Coordinates are
// voxels, radii and lengths mm.
struct PhantomTruth {
  struct Sphere {
    double x, y, z, r_mm;
  };
  struct Tube {
    double x, y, z;        // segment midpoint
    double dx, dy, dz;     // unit direction (mm space)
    double r_mm, len_mm;
  };
  std::vector<Sphere> cmbs;
  std::vector<Sphere> calcifications;
  std::vector<Tube> vessels;
  double brain_mean_swi = 0, brain_mean_phase = 0;
};

// Deterministic phantom: bright brain ellipsoid with dark CMB spheres,
// dark elongated vessel tubes, and calcifications that are dark in SWI
// but bright in phase. The label map uses schematic concentric zones:
// outer shell lobar, core deep, inferior cap infratentorial, a
// ventricle-like pocket plus everything outside the brain 'none'.
SubjectRecord generate_phantom(const PhantomSpec& spec,
                               PhantomTruth* truth = nullptr);

struct PhantomManifestEntry {
  std::string subject_id;
  std::uint64_t seed = 0;
  bool has_cmbs = true;
};

// Per-subject seeds derive from the master seed; the trailing
// round(normal_fraction * n) subjects carry no CMBs (mimics only).
std::vector<SubjectRecord> generate_dataset(
    int n_subjects, const PhantomSpec& spec_template, std::uint64_t master_seed,
    double normal_fraction = 0.0,
    std::vector<PhantomManifestEntry>* manifest = nullptr);

}  // namespace cmb

#endif  // CMBDET_SYNTHETIC_HPP_
