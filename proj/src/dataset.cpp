#include "cmbdet/dataset.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "cmbdet/nifti.hpp"

namespace cmb {

namespace fs = std::filesystem;
using nlohmann::json;

void write_annotations(const std::string& path,
                       const std::vector<SubjectRecord>& subjects) {
  json root;
  auto& subs = root["subjects"] = json::array();
  for (const auto& s : subjects) {
    json js;
    js["id"] = s.subject_id;
    auto& cmbs = js["cmbs"] = json::array();
    for (const auto& a : s.annotations) {
      json ja = {{"x", a.x}, {"y", a.y}, {"z", a.z}};
      if (a.diameter_mm) ja["diameter_mm"] = *a.diameter_mm;
      if (a.region) ja["region"] = to_string(*a.region);
      cmbs.push_back(ja);
    }
    subs.push_back(js);
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << root.dump(2) << "\n";
}

std::vector<std::pair<std::string, std::vector<CMBAnnotation>>> read_annotations(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  json root;
  f >> root;
  std::vector<std::pair<std::string, std::vector<CMBAnnotation>>> out;
  for (const auto& js : root.at("subjects")) {
    std::vector<CMBAnnotation> annos;
    for (const auto& ja : js.at("cmbs")) {
      CMBAnnotation a;
      a.x = ja.at("x").get<double>();
      a.y = ja.at("y").get<double>();
      a.z = ja.at("z").get<double>();
      if (ja.contains("diameter_mm")) {
        a.diameter_mm = ja.at("diameter_mm").get<double>();
        if (*a.diameter_mm < 2.0 || *a.diameter_mm > 10.0)
          throw std::runtime_error(path + ": diameter_mm outside [2,10]");
      }
      if (ja.contains("region"))
        a.region = bombs_region_from_string(ja.at("region").get<std::string>());
      annos.push_back(a);
    }
    out.emplace_back(js.at("id").get<std::string>(), std::move(annos));
  }
  return out;
}

void save_dataset(const std::string& dir, const std::vector<SubjectRecord>& subjects,
                  const std::vector<PhantomManifestEntry>* manifest) {
  fs::create_directories(dir);
  write_annotations((fs::path(dir) / "annotations.json").string(), subjects);
  for (const auto& s : subjects) {
    const fs::path base = fs::path(dir) / s.subject_id;
    write_nifti(s.swi, base.string() + "_swi.nii.gz");
    if (s.phase) write_nifti(*s.phase, base.string() + "_phase.nii.gz");
    if (s.t1) write_nifti(*s.t1, base.string() + "_t1.nii.gz");
    if (s.label_map) write_nifti(s.label_map->labels, base.string() + "_labels.nii.gz");
  }
  if (manifest) {
    json m = json::array();
    for (const auto& e : *manifest)
      m.push_back({{"id", e.subject_id}, {"seed", e.seed}, {"has_cmbs", e.has_cmbs}});
    std::ofstream f(fs::path(dir) / "manifest.json");
    f << m.dump(2) << "\n";
  }
}

SubjectRecord load_subject(const std::string& dir, const std::string& id,
                           const std::vector<CMBAnnotation>& annotations) {
  const fs::path base = fs::path(dir) / id;
  SubjectRecord s;
  s.subject_id = id;
  s.annotations = annotations;
  s.swi = read_nifti(base.string() + "_swi.nii.gz", Modality::SWI);
  if (fs::exists(base.string() + "_phase.nii.gz"))
    s.phase = read_nifti(base.string() + "_phase.nii.gz", Modality::Phase);
  if (fs::exists(base.string() + "_t1.nii.gz"))
    s.t1 = read_nifti(base.string() + "_t1.nii.gz", Modality::T1);
  if (fs::exists(base.string() + "_labels.nii.gz")) {
    RegionLabelMap m;
    m.labels = read_nifti(base.string() + "_labels.nii.gz", Modality::LabelMap);
    s.label_map = m;
  }
  const GridSize g = s.swi.size();
  for (const auto& a : s.annotations)
    if (a.x < 0 || a.y < 0 || a.z < 0 || a.x > g.nx - 1 || a.y > g.ny - 1 ||
        a.z > g.nz - 1)
      throw std::runtime_error("subject " + id + ": annotation outside volume");
  return s;
}

std::vector<SubjectRecord> load_dataset(const std::string& dir) {
  const auto annos = read_annotations((fs::path(dir) / "annotations.json").string());
  std::vector<SubjectRecord> out;
  out.reserve(annos.size());
  for (const auto& [id, list] : annos) out.push_back(load_subject(dir, id, list));
  return out;
}

}  // namespace cmb
