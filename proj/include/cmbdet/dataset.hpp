#ifndef CMBDET_DATASET_HPP_
#define CMBDET_DATASET_HPP_

#include <string>
#include <vector>

#include "cmbdet/synthetic.hpp"
#include "cmbdet/volume.hpp"

namespace cmb {

// Annotation file: {"subjects":[{"id":..., "cmbs":[{"x","y","z",
// "diameter_mm","region"}]}]} with native-space voxel coordinates.
void write_annotations(const std::string& path,
                       const std::vector<SubjectRecord>& subjects);
std::vector<std::pair<std::string, std::vector<CMBAnnotation>>> read_annotations(
    const std::string& path);

// Dataset directory: annotations.json, manifest.json, and per-subject
// <id>_swi.nii.gz / <id>_phase.nii.gz / <id>_labels.nii.gz volumes.
void save_dataset(const std::string& dir, const std::vector<SubjectRecord>& subjects,
                  const std::vector<PhantomManifestEntry>* manifest = nullptr);
std::vector<SubjectRecord> load_dataset(const std::string& dir);

SubjectRecord load_subject(const std::string& dir, const std::string& id,
                           const std::vector<CMBAnnotation>& annotations);

}  // namespace cmb

#endif  // CMBDET_DATASET_HPP_
