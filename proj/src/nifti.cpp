#include "cmbdet/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace cmb {

namespace {

// NIfTI-1 header, 348 bytes. Only the fields we touch are named; the rest
// stay zero on write and are ignored on read.
#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration, toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

enum NiftiDtype : std::int16_t {
  DT_UINT8 = 2,
  DT_INT16 = 4,
  DT_INT32 = 8,
  DT_FLOAT32 = 16,
  DT_FLOAT64 = 64,
  DT_INT8 = 256,
  DT_UINT16 = 512,
  DT_UINT32 = 768,
};

template <typename T>
void swap_bytes(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
    std::swap(p[i], p[sizeof(T) - 1 - i]);
}

void swap_header(Nifti1Header& h) {
  swap_bytes(h.sizeof_hdr);
  for (auto& d : h.dim) swap_bytes(d);
  swap_bytes(h.datatype);
  swap_bytes(h.bitpix);
  for (auto& p : h.pixdim) swap_bytes(p);
  swap_bytes(h.vox_offset);
  swap_bytes(h.scl_slope);
  swap_bytes(h.scl_inter);
}

class GzFile {
 public:
  GzFile(const std::string& path, const char* mode) : f_(gzopen(path.c_str(), mode)) {
    if (!f_) throw std::runtime_error("cannot open " + path);
  }
  ~GzFile() {
    if (f_) gzclose(f_);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;

  void read(void* dst, std::size_t n) {
    if (gzread(f_, dst, static_cast<unsigned>(n)) != static_cast<int>(n))
      throw std::runtime_error("short read from NIfTI stream");
  }
  void write(const void* src, std::size_t n) {
    if (gzwrite(f_, src, static_cast<unsigned>(n)) != static_cast<int>(n))
      throw std::runtime_error("short write to NIfTI stream");
  }
  void skip(std::size_t n) {
    std::vector<char> junk(std::min<std::size_t>(n, 65536));
    while (n > 0) {
      const std::size_t chunk = std::min(n, junk.size());
      read(junk.data(), chunk);
      n -= chunk;
    }
  }

 private:
  gzFile f_;
};

template <typename T>
void convert_raw(GzFile& f, std::vector<float>& out, bool swapped) {
  std::vector<T> raw(out.size());
  f.read(raw.data(), raw.size() * sizeof(T));
  if (swapped && sizeof(T) > 1)
    for (auto& v : raw) swap_bytes(v);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(raw[i]);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Volume3D read_nifti(const std::string& path, Modality modality, Space space) {
  GzFile f(path, "rb");
  Nifti1Header h{};
  f.read(&h, sizeof(h));

  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swapped = true;
    if (h.sizeof_hdr != 348)
      throw std::runtime_error(path + ": not a NIfTI-1 file");
  }
  if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
    throw std::runtime_error(path + ": missing NIfTI magic");
  if (h.dim[0] < 3) {
    if (h.dim[0] == 2) h.dim[3] = 1;
    else throw std::runtime_error(path + ": need a 3D volume");
  }
  for (int d = 4; d <= h.dim[0]; ++d)
    if (h.dim[d] > 1) throw std::runtime_error(path + ": >3D volumes unsupported");

  const GridSize size{h.dim[1], h.dim[2], h.dim[3]};
  Spacing sp{h.pixdim[1] > 0 ? h.pixdim[1] : 1.0, h.pixdim[2] > 0 ? h.pixdim[2] : 1.0,
             h.pixdim[3] > 0 ? h.pixdim[3] : 1.0};
  Volume3D vol(size, sp, modality, space);

  const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
  if (offset > sizeof(h)) f.skip(offset - sizeof(h));

  auto& data = vol.data();
  switch (h.datatype) {
    case DT_UINT8: convert_raw<std::uint8_t>(f, data, swapped); break;
    case DT_INT8: convert_raw<std::int8_t>(f, data, swapped); break;
    case DT_INT16: convert_raw<std::int16_t>(f, data, swapped); break;
    case DT_UINT16: convert_raw<std::uint16_t>(f, data, swapped); break;
    case DT_INT32: convert_raw<std::int32_t>(f, data, swapped); break;
    case DT_UINT32: convert_raw<std::uint32_t>(f, data, swapped); break;
    case DT_FLOAT32: convert_raw<float>(f, data, swapped); break;
    case DT_FLOAT64: convert_raw<double>(f, data, swapped); break;
    default:
      throw std::runtime_error(path + ": unsupported NIfTI datatype " +
                               std::to_string(h.datatype));
  }

  const float slope = h.scl_slope;
  const float inter = h.scl_inter;
  if (slope != 0.0f && (slope != 1.0f || inter != 0.0f))
    for (auto& v : data) v = v * slope + inter;

  if (modality == Modality::LabelMap) {
    for (float v : data) {
      const float r = std::round(v);
      if (std::abs(v - r) > 1e-3f || r < 0.0f || r > 3.0f)
        throw std::runtime_error(path + ": label map contains codes outside {0,1,2,3}");
    }
    for (auto& v : data) v = std::round(v);
  }
  return vol;
}

void write_nifti(const Volume3D& v, const std::string& path) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(v.size().nx);
  h.dim[2] = static_cast<std::int16_t>(v.size().ny);
  h.dim[3] = static_cast<std::int16_t>(v.size().nz);
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(v.spacing().sx);
  h.pixdim[2] = static_cast<float>(v.spacing().sy);
  h.pixdim[3] = static_cast<float>(v.spacing().sz);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.qform_code = 0;
  h.sform_code = 1;
  h.srow_x[0] = h.pixdim[1];
  h.srow_y[1] = h.pixdim[2];
  h.srow_z[2] = h.pixdim[3];
  std::memcpy(h.magic, "n+1", 4);

  const bool label = v.modality() == Modality::LabelMap;
  h.datatype = label ? DT_UINT8 : DT_FLOAT32;
  h.bitpix = label ? 8 : 32;

  // "wT" writes without compression for plain .nii.
  GzFile f(path, ends_with(path, ".gz") ? "wb" : "wbT");
  f.write(&h, sizeof(h));
  const char pad[4] = {0, 0, 0, 0};
  f.write(pad, 4);

  if (label) {
    std::vector<std::uint8_t> raw(v.data().size());
    for (std::size_t i = 0; i < raw.size(); ++i)
      raw[i] = static_cast<std::uint8_t>(std::lround(v.data()[i]));
    f.write(raw.data(), raw.size());
  } else {
    f.write(v.data().data(), v.data().size() * sizeof(float));
  }
}

}  // namespace cmb
