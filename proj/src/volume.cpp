#include "cmbdet/volume.hpp"

#include <algorithm>

namespace cmb {

const char* to_string(Modality m) {
  switch (m) {
    case Modality::SWI: return "swi";
    case Modality::Phase: return "phase";
    case Modality::T1: return "t1";
    case Modality::LabelMap: return "labelmap";
  }
  return "?";
}

const char* to_string(Space s) {
  return s == Space::Native ? "native" : "z_interp";
}

const char* to_string(BombsRegion r) {
  switch (r) {
    case BombsRegion::None: return "none";
    case BombsRegion::Lobar: return "lobar";
    case BombsRegion::Deep: return "deep";
    case BombsRegion::Infratentorial: return "infratentorial";
  }
  return "?";
}

BombsRegion bombs_region_from_string(const std::string& name) {
  if (name == "none") return BombsRegion::None;
  if (name == "lobar") return BombsRegion::Lobar;
  if (name == "deep") return BombsRegion::Deep;
  if (name == "infratentorial") return BombsRegion::Infratentorial;
  throw std::invalid_argument("unknown BOMBS region: " + name);
}

CropSpec CropSpec::make_clamped(GridSize bounds, int x0, int y0, int z0, int w,
                                int h, int d) {
  CropSpec s;
  s.w = std::min(w, bounds.nx);
  s.h = std::min(h, bounds.ny);
  s.d = std::min(d, bounds.nz);
  s.x0 = std::clamp(x0, 0, bounds.nx - s.w);
  s.y0 = std::clamp(y0, 0, bounds.ny - s.h);
  s.z0 = std::clamp(z0, 0, bounds.nz - s.d);
  return s;
}

}  // namespace cmb
