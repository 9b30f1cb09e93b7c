#ifndef CMBDET_NIFTI_HPP_
#define CMBDET_NIFTI_HPP_

#include <string>

#include "cmbdet/volume.hpp"

namespace cmb {

// Reads a scalar NIfTI-1 volume (.nii or .nii.gz). Any numeric dtype is
// converted to 32-bit float; scl_slope/scl_inter are applied; spacing comes
// from pixdim. LabelMap volumes are validated to hold only codes {0,1,2,3}.
Volume3D read_nifti(const std::string& path, Modality modality,
                    Space space = Space::Native);

// Writes float32 data, or uint8 for LabelMap volumes. Compresses when the
// path ends in .gz.
void write_nifti(const Volume3D& v, const std::string& path);

}  // namespace cmb

#endif  // CMBDET_NIFTI_HPP_
