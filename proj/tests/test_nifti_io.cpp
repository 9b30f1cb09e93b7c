#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>

#include "cmbdet/nifti.hpp"
#include "cmbdet/rng.hpp"
#include "test_util.hpp"

using namespace cmb;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("cmbdet_test_" + std::to_string(std::rand()) + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_SUITE("nifti") {

TEST_CASE("float volume round trip, plain and gzipped") {
  TempDir tmp;
  Rng rng(21);
  Volume3D v({7, 5, 3}, {0.5, 0.5, 2.0}, Modality::SWI);
  for (auto& x : v.data()) x = static_cast<float>(rng.uniform(-2.0, 2.0));

  for (const char* name : {"vol.nii", "vol.nii.gz"}) {
    const std::string p = (tmp.path / name).string();
    write_nifti(v, p);
    const Volume3D r = read_nifti(p, Modality::SWI);
    CHECK(r.size() == v.size());
    CHECK(r.spacing().sx == doctest::Approx(0.5));
    CHECK(r.spacing().sz == doctest::Approx(2.0));
    CHECK(r.data() == v.data());  // float32 is preserved bit-exactly
  }
}

TEST_CASE("label maps store as uint8 and validate codes") {
  TempDir tmp;
  Volume3D v({4, 4, 2}, {1, 1, 1}, Modality::LabelMap);
  for (std::size_t i = 0; i < v.data().size(); ++i)
    v.data()[i] = static_cast<float>(i % 4);
  const std::string p = (tmp.path / "labels.nii.gz").string();
  write_nifti(v, p);
  const Volume3D r = read_nifti(p, Modality::LabelMap);
  CHECK(r.data() == v.data());

  // a scalar volume with out-of-range codes must be rejected as a label map
  Volume3D bad({2, 2, 2}, {1, 1, 1}, Modality::SWI);
  for (std::size_t i = 0; i < bad.data().size(); ++i)
    bad.data()[i] = static_cast<float>(i);  // contains 4..7
  const std::string pb = (tmp.path / "bad.nii").string();
  write_nifti(bad, pb);
  CHECK_THROWS_AS(read_nifti(pb, Modality::LabelMap), std::runtime_error);
}

TEST_CASE("uint8 data converts to float on load") {
  TempDir tmp;
  Volume3D v({3, 3, 3}, {1, 1, 1}, Modality::LabelMap);
  for (std::size_t i = 0; i < v.data().size(); ++i)
    v.data()[i] = static_cast<float>(i % 3);
  const std::string p = (tmp.path / "codes.nii").string();
  write_nifti(v, p);
  const Volume3D r = read_nifti(p, Modality::SWI);  // read the uint8 file as scalar
  for (std::size_t i = 0; i < v.data().size(); ++i) CHECK(r.data()[i] == v.data()[i]);
}

TEST_CASE("missing file raises") {
  CHECK_THROWS_AS(read_nifti("/nonexistent/path.nii", Modality::SWI),
                  std::runtime_error);
}

}  // TEST_SUITE
