#ifndef CMBDET_NN_TENSOR_HPP_
#define CMBDET_NN_TENSOR_HPP_

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "cmbdet/volume.hpp"

namespace cmb::nn {

// Dense float32 feature tensor, (channels, z, y, x), x fastest. A Volume3D
// slots in as a single channel plane since both are x-fastest.
struct Tensor {
  int c = 0, nz = 0, ny = 0, nx = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int c_, int nz_, int ny_, int nx_, float fill = 0.0f)
      : c(c_), nz(nz_), ny(ny_), nx(nx_),
        v(static_cast<std::size_t>(c_) * nz_ * ny_ * nx_, fill) {}

  std::size_t spatial() const { return static_cast<std::size_t>(nz) * ny * nx; }
  std::size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const {
    return c == o.c && nz == o.nz && ny == o.ny && nx == o.nx;
  }

  std::size_t index(int ch, int z, int y, int x) const {
    return ((static_cast<std::size_t>(ch) * nz + z) * ny + y) * nx + x;
  }
  float at(int ch, int z, int y, int x) const { return v[index(ch, z, y, x)]; }
  float& at(int ch, int z, int y, int x) { return v[index(ch, z, y, x)]; }

  float* plane(int ch, int z) { return v.data() + (static_cast<std::size_t>(ch) * nz + z) * ny * nx; }
  const float* plane(int ch, int z) const {
    return v.data() + (static_cast<std::size_t>(ch) * nz + z) * ny * nx;
  }

  void zero() { std::fill(v.begin(), v.end(), 0.0f); }
};

// Copies a volume into channel `ch` of a tensor with matching spatial shape.
inline void set_channel(Tensor& t, int ch, const Volume3D& vol) {
  if (vol.size().nx != t.nx || vol.size().ny != t.ny || vol.size().nz != t.nz)
    throw std::invalid_argument("set_channel: shape mismatch");
  std::copy(vol.data().begin(), vol.data().end(),
            t.v.begin() + static_cast<std::size_t>(ch) * t.spatial());
}

}  // namespace cmb::nn

#endif  // CMBDET_NN_TENSOR_HPP_
