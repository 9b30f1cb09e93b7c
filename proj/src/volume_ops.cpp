#include "cmbdet/volume_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cmb {

Volume3D normalize_minmax(const Volume3D& v) {
  float lo = std::numeric_limits<float>::max();
  float hi = std::numeric_limits<float>::lowest();
  for (float x : v.data()) {
    if (!std::isfinite(x)) throw std::invalid_argument("normalize_minmax: non-finite voxel");
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi <= lo) throw std::invalid_argument("normalize_minmax: degenerate intensity range");

  Volume3D out = v;
  const float scale = 1.0f / (hi - lo);
  for (float& x : out.data()) x = (x - lo) * scale;
  return out;
}

double map_z(double z_interp_coord, int native_depth, int target_slices) {
  if (target_slices < 2 || native_depth < 1)
    throw std::invalid_argument("map_z: invalid depths");
  if (native_depth == 1) return 0.0;
  return z_interp_coord * static_cast<double>(native_depth - 1) /
         static_cast<double>(target_slices - 1);
}

double map_z_forward(double z_native, int native_depth, int target_slices) {
  if (target_slices < 2 || native_depth < 2)
    throw std::invalid_argument("map_z_forward: invalid depths");
  return z_native * static_cast<double>(target_slices - 1) /
         static_cast<double>(native_depth - 1);
}

Volume3D interpolate_z(const Volume3D& v, int target_slices) {
  if (target_slices < 2) throw std::invalid_argument("interpolate_z: target_slices < 2");
  if (v.space() != Space::Native)
    throw std::invalid_argument("interpolate_z: input must be native space");
  const GridSize in = v.size();
  if (target_slices < in.nz)
    throw std::invalid_argument("interpolate_z: target_slices below native depth");

  Spacing sp = v.spacing();
  sp.sz = in.nz > 1 ? sp.sz * static_cast<double>(in.nz - 1) / (target_slices - 1) : sp.sz;
  Volume3D out({in.nx, in.ny, target_slices}, sp, v.modality(), Space::ZInterp);

  const bool nearest = v.modality() == Modality::LabelMap;
  for (int zo = 0; zo < target_slices; ++zo) {
    const double zn = map_z(zo, in.nz, target_slices);
    if (nearest) {
      const int z = std::min(in.nz - 1, static_cast<int>(std::floor(zn + 0.5)));
      for (int y = 0; y < in.ny; ++y)
        for (int x = 0; x < in.nx; ++x) out(x, y, zo) = v(x, y, z);
    } else {
      const int z0 = std::min(in.nz - 1, static_cast<int>(std::floor(zn)));
      const int z1 = std::min(in.nz - 1, z0 + 1);
      const float t = static_cast<float>(zn - z0);
      for (int y = 0; y < in.ny; ++y)
        for (int x = 0; x < in.nx; ++x)
          out(x, y, zo) = (1.0f - t) * v(x, y, z0) + t * v(x, y, z1);
    }
  }
  return out;
}

namespace {

std::vector<int> axis_origins(int extent, int window, int stride) {
  std::vector<int> origins;
  for (int o = 0;; o += stride) {
    if (o + window >= extent) {
      origins.push_back(extent - window);
      break;
    }
    origins.push_back(o);
  }
  return origins;
}

}  // namespace

std::vector<CropSpec> sliding_windows(GridSize shape, GridSize window,
                                      GridSize stride) {
  if (window.nx > shape.nx || window.ny > shape.ny || window.nz > shape.nz)
    throw std::invalid_argument("sliding_windows: window exceeds shape");
  if (window.nx < 1 || window.ny < 1 || window.nz < 1)
    throw std::invalid_argument("sliding_windows: empty window");
  if (stride.nx < 1 || stride.ny < 1 || stride.nz < 1)
    throw std::invalid_argument("sliding_windows: stride must be >= 1");

  const auto xs = axis_origins(shape.nx, window.nx, stride.nx);
  const auto ys = axis_origins(shape.ny, window.ny, stride.ny);
  const auto zs = axis_origins(shape.nz, window.nz, stride.nz);

  std::vector<CropSpec> out;
  out.reserve(xs.size() * ys.size() * zs.size());
  for (int z : zs)
    for (int y : ys)
      for (int x : xs)
        out.push_back({x, y, z, window.nx, window.ny, window.nz});
  return out;
}

CoordinateTensors make_coordinate_tensors(GridSize shape, Spacing spacing) {
  if (shape.nx < 2 || shape.ny < 2 || shape.nz < 2)
    throw std::invalid_argument("make_coordinate_tensors: each axis needs >= 2 voxels");

  CoordinateTensors t{
      Volume3D(shape, spacing, Modality::LabelMap, Space::Native),
      Volume3D(shape, spacing, Modality::LabelMap, Space::Native),
      Volume3D(shape, spacing, Modality::LabelMap, Space::Native)};
  t.x.set_modality(Modality::SWI);
  t.y.set_modality(Modality::SWI);
  t.z.set_modality(Modality::SWI);
  for (int z = 0; z < shape.nz; ++z) {
    const float fz = static_cast<float>(z) / (shape.nz - 1);
    for (int y = 0; y < shape.ny; ++y) {
      const float fy = static_cast<float>(y) / (shape.ny - 1);
      for (int x = 0; x < shape.nx; ++x) {
        t.x(x, y, z) = static_cast<float>(x) / (shape.nx - 1);
        t.y(x, y, z) = fy;
        t.z(x, y, z) = fz;
      }
    }
  }
  return t;
}

Volume3D extract_crop(const Volume3D& v, const CropSpec& spec) {
  if (!spec.inside(v.size()))
    throw std::out_of_range("extract_crop: crop outside volume bounds");
  Volume3D out({spec.w, spec.h, spec.d}, v.spacing(), v.modality(), v.space());
  for (int z = 0; z < spec.d; ++z)
    for (int y = 0; y < spec.h; ++y) {
      const float* src = &v.data()[v.index(spec.x0, spec.y0 + y, spec.z0 + z)];
      float* dst = &out.data()[out.index(0, y, z)];
      std::copy(src, src + spec.w, dst);
    }
  return out;
}

}  // namespace cmb
