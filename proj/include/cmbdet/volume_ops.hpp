#ifndef CMBDET_VOLUME_OPS_HPP_
#define CMBDET_VOLUME_OPS_HPP_

#include <vector>

#include "cmbdet/volume.hpp"

namespace cmb {

// Min-max normalization to [0, 1]. Rejects constant volumes.
Volume3D normalize_minmax(const Volume3D& v);

// Resample along z to target_slices with endpoint-aligned linear
// interpolation: native slices 0 and D-1 map exactly to output slices 0 and
// target_slices-1. LabelMap volumes are resampled nearest-neighbor so the
// integer codes survive. The output is tagged Space::ZInterp and carries the
// adjusted z spacing.
Volume3D interpolate_z(const Volume3D& v, int target_slices = 224);

// Inverse of the interpolate_z coordinate map.
double map_z(double z_interp_coord, int native_depth, int target_slices);

// Forward map: native z coordinate to interpolated-space coordinate.
double map_z_forward(double z_native, int native_depth, int target_slices);

// Tile a grid with fixed-size windows. The last window per axis is clamped
// to the end so every voxel is covered. Lexicographic (z, y, x ascending)
// emission order.
std::vector<CropSpec> sliding_windows(GridSize shape, GridSize window,
                                      GridSize stride);

struct CoordinateTensors {
  Volume3D x, y, z;  // each value in [0, 1], absolute over the whole grid
};

// Absolute-coordinate tensors: x[i,.,.] = i/(W-1) etc. Cropping these with
// any CropSpec preserves the whole-volume values.
CoordinateTensors make_coordinate_tensors(GridSize shape, Spacing spacing);

// Exact sub-grid copy. The crop keeps spacing/modality/space tags.
Volume3D extract_crop(const Volume3D& v, const CropSpec& spec);

}  // namespace cmb

#endif  // CMBDET_VOLUME_OPS_HPP_
