#ifndef CMBDET_VOLUME_HPP_
#define CMBDET_VOLUME_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmb {

enum class Modality { SWI, Phase, T1, LabelMap };
enum class Space { Native, ZInterp };

const char* to_string(Modality m);
const char* to_string(Space s);

struct GridSize {
  int nx = 0, ny = 0, nz = 0;  // (W, H, D) voxels

  bool operator==(const GridSize&) const = default;
  std::int64_t count() const {
    return static_cast<std::int64_t>(nx) * ny * nz;
  }
};

struct Spacing {
  double sx = 1.0, sy = 1.0, sz = 1.0;  // mm per voxel

  bool operator==(const Spacing&) const = default;
};

// Scalar voxel grid with spacing and coordinate-space tags. Data is stored
// x-fastest (NIfTI order): index = x + nx*(y + ny*z).
class Volume3D {
 public:
  Volume3D() = default;
  Volume3D(GridSize size, Spacing spacing, Modality modality,
           Space space = Space::Native, float fill = 0.0f)
      : size_(size),
        spacing_(spacing),
        modality_(modality),
        space_(space),
        data_(static_cast<std::size_t>(size.count()), fill) {
    if (size.nx <= 0 || size.ny <= 0 || size.nz <= 0)
      throw std::invalid_argument("Volume3D: non-positive shape");
    if (spacing.sx <= 0 || spacing.sy <= 0 || spacing.sz <= 0)
      throw std::invalid_argument("Volume3D: non-positive spacing");
  }

  const GridSize& size() const { return size_; }
  const Spacing& spacing() const { return spacing_; }
  Modality modality() const { return modality_; }
  Space space() const { return space_; }
  void set_space(Space s) { space_ = s; }
  void set_modality(Modality m) { modality_ = m; }
  void set_spacing(Spacing s) { spacing_ = s; }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(size_.nx) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(size_.ny) * static_cast<std::size_t>(z));
  }
  float operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
  float& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }

  float at_checked(int x, int y, int z) const {
    if (!contains(x, y, z)) throw std::out_of_range("Volume3D: index out of bounds");
    return data_[index(x, y, z)];
  }

  bool contains(int x, int y, int z) const {
    return x >= 0 && x < size_.nx && y >= 0 && y < size_.ny && z >= 0 && z < size_.nz;
  }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

 private:
  GridSize size_;
  Spacing spacing_{1, 1, 1};
  Modality modality_ = Modality::SWI;
  Space space_ = Space::Native;
  std::vector<float> data_;
};

enum class BombsRegion : int { None = 0, Lobar = 1, Deep = 2, Infratentorial = 3 };

const char* to_string(BombsRegion r);
BombsRegion bombs_region_from_string(const std::string& name);

// Lesion annotation in native voxel coordinates.
struct CMBAnnotation {
  double x = 0, y = 0, z = 0;              // native-space voxel indices
  std::optional<double> diameter_mm;       // within [2, 10] when present
  std::optional<BombsRegion> region;
};

struct RegionLabelMap {
  Volume3D labels;  // Modality::LabelMap, integer codes {0,1,2,3}

  BombsRegion at(int x, int y, int z) const {
    return static_cast<BombsRegion>(static_cast<int>(labels(x, y, z)));
  }
};

struct SubjectRecord {
  std::string subject_id;
  Volume3D swi;
  std::optional<Volume3D> phase;
  std::optional<Volume3D> t1;
  std::vector<CMBAnnotation> annotations;
  std::optional<RegionLabelMap> label_map;
};

// Axis-aligned crop window, clamped into bounds at construction.
struct CropSpec {
  int x0 = 0, y0 = 0, z0 = 0;  // origin, voxels
  int w = 0, h = 0, d = 0;     // size, voxels

  bool operator==(const CropSpec&) const = default;

  static CropSpec make_clamped(GridSize bounds, int x0, int y0, int z0, int w,
                               int h, int d);
  bool inside(GridSize bounds) const {
    return x0 >= 0 && y0 >= 0 && z0 >= 0 && w > 0 && h > 0 && d > 0 &&
           x0 + w <= bounds.nx && y0 + h <= bounds.ny && z0 + d <= bounds.nz;
  }
};

}  // namespace cmb

#endif  // CMBDET_VOLUME_HPP_
