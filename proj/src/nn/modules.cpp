#include "cmbdet/nn/modules.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cmb::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using MapRowC = Eigen::Map<const RowMat>;
using MapStride = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

// Fills the im2col matrix (rows = cin*27, cols = ny*nx) for one output
// z-slice of a 3x3x3 same-padded convolution.
void im2col_slab(const Tensor& in, int z, std::vector<float>& col) {
  const int ny = in.ny, nx = in.nx;
  const std::size_t cols = static_cast<std::size_t>(ny) * nx;
  int r = 0;
  for (int ci = 0; ci < in.c; ++ci) {
    for (int dz = 0; dz < 3; ++dz) {
      const int zi = z + dz - 1;
      const bool z_ok = zi >= 0 && zi < in.nz;
      for (int dy = 0; dy < 3; ++dy) {
        for (int dx = 0; dx < 3; ++dx, ++r) {
          float* dst = col.data() + static_cast<std::size_t>(r) * cols;
          if (!z_ok) {
            std::fill(dst, dst + cols, 0.0f);
            continue;
          }
          for (int y = 0; y < ny; ++y) {
            const int yi = y + dy - 1;
            float* row = dst + static_cast<std::size_t>(y) * nx;
            if (yi < 0 || yi >= ny) {
              std::fill(row, row + nx, 0.0f);
              continue;
            }
            const float* src = in.plane(ci, zi) + static_cast<std::size_t>(yi) * nx;
            const int x_lo = std::max(0, 1 - dx);
            const int x_hi = std::min(nx, nx + 1 - dx);
            if (x_lo > 0) row[0] = 0.0f;
            if (x_hi < nx) row[nx - 1] = 0.0f;
            std::copy(src + x_lo + dx - 1, src + x_hi + dx - 1, row + x_lo);
          }
        }
      }
    }
  }
}

// Scatter-add of an im2col gradient slab back into dx.
void col2im_slab(const std::vector<float>& col, int z, Tensor& dx) {
  const int ny = dx.ny, nx = dx.nx;
  const std::size_t cols = static_cast<std::size_t>(ny) * nx;
  int r = 0;
  for (int ci = 0; ci < dx.c; ++ci) {
    for (int dz = 0; dz < 3; ++dz) {
      const int zi = z + dz - 1;
      const bool z_ok = zi >= 0 && zi < dx.nz;
      for (int dy = 0; dy < 3; ++dy) {
        for (int dx3 = 0; dx3 < 3; ++dx3, ++r) {
          if (!z_ok) continue;
          const float* src = col.data() + static_cast<std::size_t>(r) * cols;
          for (int y = 0; y < ny; ++y) {
            const int yi = y + dy - 1;
            if (yi < 0 || yi >= ny) continue;
            float* row = dx.plane(ci, zi) + static_cast<std::size_t>(yi) * nx;
            const int x_lo = std::max(0, 1 - dx3);
            const int x_hi = std::min(nx, nx + 1 - dx3);
            const float* s = src + static_cast<std::size_t>(y) * nx + x_lo;
            float* d = row + x_lo + dx3 - 1;
            for (int x = x_lo; x < x_hi; ++x) *d++ += *s++;
          }
        }
      }
    }
  }
}

}  // namespace

Conv3d::Conv3d(const std::string& name, int cin, int cout, int k, bool relu,
               bool bias)
    : cin_(cin), cout_(cout), k_(k), relu_(relu), has_bias_(bias) {
  if (k != 1 && k != 3) throw std::invalid_argument("Conv3d: kernel must be 1 or 3");
  const int kk = k * k * k;
  w_.name = name + ".w";
  w_.shape = {cout, cin * kk};
  w_.resize(static_cast<std::size_t>(cout) * cin * kk);
  b_.name = name + ".b";
  b_.shape = {has_bias_ ? cout : 0};
  b_.resize(has_bias_ ? cout : 0);
}

void Conv3d::init(Rng& rng) {
  const double std = std::sqrt(2.0 / (cin_ * k_ * k_ * k_));
  for (auto& w : w_.value) w = static_cast<float>(rng.normal(0.0, std));
  std::fill(b_.value.begin(), b_.value.end(), 0.0f);
}

void Conv3d::collect(ParamRefs& out) {
  out.push_back(&w_);
  if (has_bias_) out.push_back(&b_);
}

Tensor Conv3d::forward(const Tensor& x) {
  if (x.c != cin_) throw std::invalid_argument("Conv3d: channel mismatch");
  in_cache_ = x;
  Tensor y(cout_, x.nz, x.ny, x.nx);
  const std::size_t spatial = x.spatial();

  if (k_ == 1) {
    MapRowC wm(w_.value.data(), cout_, cin_);
    MapRowC xm(x.v.data(), cin_, static_cast<Eigen::Index>(spatial));
    MapRow ym(y.v.data(), cout_, static_cast<Eigen::Index>(spatial));
    ym.noalias() = wm * xm;
  } else {
    const int rows = cin_ * 27;
    const std::size_t cols = static_cast<std::size_t>(x.ny) * x.nx;
    std::vector<float> col(static_cast<std::size_t>(rows) * cols);
    MapRowC wm(w_.value.data(), cout_, rows);
    for (int z = 0; z < x.nz; ++z) {
      im2col_slab(x, z, col);
      MapRowC cm(col.data(), rows, static_cast<Eigen::Index>(cols));
      MapStride ym(y.v.data() + static_cast<std::size_t>(z) * cols, cout_,
                   static_cast<Eigen::Index>(cols),
                   Eigen::OuterStride<>(static_cast<Eigen::Index>(x.nz * cols)));
      ym.noalias() = wm * cm;
    }
  }

  if (has_bias_) {
    for (int co = 0; co < cout_; ++co) {
      float* p = y.v.data() + static_cast<std::size_t>(co) * spatial;
      const float b = b_.value[co];
      for (std::size_t i = 0; i < spatial; ++i) p[i] += b;
    }
  }
  if (relu_)
    for (auto& v : y.v) v = v > 0.0f ? v : 0.0f;
  out_cache_ = y;
  return y;
}

Tensor Conv3d::backward(const Tensor& dy_in) {
  const Tensor& x = in_cache_;
  Tensor dy = dy_in;
  if (relu_) {
    for (std::size_t i = 0; i < dy.v.size(); ++i)
      if (out_cache_.v[i] <= 0.0f) dy.v[i] = 0.0f;
  }
  const std::size_t spatial = x.spatial();

  if (has_bias_) {
    for (int co = 0; co < cout_; ++co) {
      const float* p = dy.v.data() + static_cast<std::size_t>(co) * spatial;
      double s = 0.0;
      for (std::size_t i = 0; i < spatial; ++i) s += p[i];
      b_.grad[co] += static_cast<float>(s);
    }
  }

  Tensor dx(cin_, x.nz, x.ny, x.nx);
  if (k_ == 1) {
    MapRowC wm(w_.value.data(), cout_, cin_);
    MapRowC xm(x.v.data(), cin_, static_cast<Eigen::Index>(spatial));
    MapRowC dym(dy.v.data(), cout_, static_cast<Eigen::Index>(spatial));
    MapRow dwm(w_.grad.data(), cout_, cin_);
    MapRow dxm(dx.v.data(), cin_, static_cast<Eigen::Index>(spatial));
    dwm.noalias() += dym * xm.transpose();
    dxm.noalias() = wm.transpose() * dym;
  } else {
    const int rows = cin_ * 27;
    const std::size_t cols = static_cast<std::size_t>(x.ny) * x.nx;
    std::vector<float> col(static_cast<std::size_t>(rows) * cols);
    std::vector<float> dcol(static_cast<std::size_t>(rows) * cols);
    MapRowC wm(w_.value.data(), cout_, rows);
    MapRow dwm(w_.grad.data(), cout_, rows);
    for (int z = 0; z < x.nz; ++z) {
      im2col_slab(x, z, col);
      MapRowC cm(col.data(), rows, static_cast<Eigen::Index>(cols));
      Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> dym(
          dy.v.data() + static_cast<std::size_t>(z) * cols, cout_,
          static_cast<Eigen::Index>(cols),
          Eigen::OuterStride<>(static_cast<Eigen::Index>(x.nz * cols)));
      dwm.noalias() += dym * cm.transpose();
      MapRow dcm(dcol.data(), rows, static_cast<Eigen::Index>(cols));
      dcm.noalias() = wm.transpose() * dym;
      col2im_slab(dcol, z, dx);
    }
  }
  return dx;
}

Tensor MaxPool3d::forward(const Tensor& x) {
  if (x.nz % 2 || x.ny % 2 || x.nx % 2)
    throw std::invalid_argument("MaxPool3d: spatial dims must be even");
  c_ = x.c;
  in_nz_ = x.nz;
  in_ny_ = x.ny;
  in_nx_ = x.nx;
  Tensor y(x.c, x.nz / 2, x.ny / 2, x.nx / 2);
  argmax_.resize(y.size());
  std::size_t o = 0;
  for (int ch = 0; ch < x.c; ++ch)
    for (int z = 0; z < y.nz; ++z)
      for (int yy = 0; yy < y.ny; ++yy)
        for (int xx = 0; xx < y.nx; ++xx, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_i = 0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t i = x.index(ch, 2 * z + dz, 2 * yy + dy, 2 * xx + dx);
                if (x.v[i] > best) {
                  best = x.v[i];
                  best_i = i;
                }
              }
          y.v[o] = best;
          argmax_[o] = static_cast<std::uint32_t>(best_i);
        }
  return y;
}

Tensor MaxPool3d::backward(const Tensor& dy) {
  Tensor dx(c_, in_nz_, in_ny_, in_nx_);
  for (std::size_t o = 0; o < dy.v.size(); ++o) dx.v[argmax_[o]] += dy.v[o];
  return dx;
}

Tensor Upsample2x::forward(const Tensor& x) {
  c_ = x.c;
  in_nz_ = x.nz;
  in_ny_ = x.ny;
  in_nx_ = x.nx;
  Tensor y(x.c, x.nz * 2, x.ny * 2, x.nx * 2);
  for (int ch = 0; ch < x.c; ++ch)
    for (int z = 0; z < y.nz; ++z)
      for (int yy = 0; yy < y.ny; ++yy) {
        const float* src = x.plane(ch, z / 2) + static_cast<std::size_t>(yy / 2) * x.nx;
        float* dst = y.plane(ch, z) + static_cast<std::size_t>(yy) * y.nx;
        for (int xx = 0; xx < y.nx; ++xx) dst[xx] = src[xx / 2];
      }
  return y;
}

Tensor Upsample2x::backward(const Tensor& dy) {
  Tensor dx(c_, in_nz_, in_ny_, in_nx_);
  for (int ch = 0; ch < c_; ++ch)
    for (int z = 0; z < dy.nz; ++z)
      for (int yy = 0; yy < dy.ny; ++yy) {
        float* dst = dx.plane(ch, z / 2) + static_cast<std::size_t>(yy / 2) * in_nx_;
        const float* src = dy.plane(ch, z) + static_cast<std::size_t>(yy) * dy.nx;
        for (int xx = 0; xx < dy.nx; ++xx) dst[xx / 2] += src[xx];
      }
  return dx;
}

namespace {

struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<float> w;
};

LerpAxis make_axis(int src, int dst) {
  LerpAxis a;
  a.i0.resize(dst);
  a.i1.resize(dst);
  a.w.resize(dst);
  for (int i = 0; i < dst; ++i) {
    const double f = dst > 1 ? static_cast<double>(i) * (src - 1) / (dst - 1) : 0.0;
    const int i0 = std::min(src - 1, static_cast<int>(std::floor(f)));
    a.i0[i] = i0;
    a.i1[i] = std::min(src - 1, i0 + 1);
    a.w[i] = static_cast<float>(f - i0);
  }
  return a;
}

}  // namespace

Tensor TrilinearResize::forward(const Tensor& x, int nz, int ny, int nx) {
  c_ = x.c;
  in_nz_ = x.nz;
  in_ny_ = x.ny;
  in_nx_ = x.nx;
  out_nz_ = nz;
  out_ny_ = ny;
  out_nx_ = nx;
  const LerpAxis az = make_axis(x.nz, nz), ay = make_axis(x.ny, ny), ax = make_axis(x.nx, nx);
  Tensor y(x.c, nz, ny, nx);
  for (int ch = 0; ch < x.c; ++ch)
    for (int z = 0; z < nz; ++z)
      for (int yy = 0; yy < ny; ++yy)
        for (int xx = 0; xx < nx; ++xx) {
          const float wz = az.w[z], wy = ay.w[yy], wx = ax.w[xx];
          float acc = 0.0f;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const float wgt = (dz ? wz : 1 - wz) * (dy ? wy : 1 - wy) * (dx ? wx : 1 - wx);
                if (wgt == 0.0f) continue;
                acc += wgt * x.at(ch, dz ? az.i1[z] : az.i0[z], dy ? ay.i1[yy] : ay.i0[yy],
                                  dx ? ax.i1[xx] : ax.i0[xx]);
              }
          y.at(ch, z, yy, xx) = acc;
        }
  return y;
}

Tensor TrilinearResize::backward(const Tensor& dy) {
  const LerpAxis az = make_axis(in_nz_, out_nz_), ay = make_axis(in_ny_, out_ny_),
                 ax = make_axis(in_nx_, out_nx_);
  Tensor dx(c_, in_nz_, in_ny_, in_nx_);
  for (int ch = 0; ch < c_; ++ch)
    for (int z = 0; z < out_nz_; ++z)
      for (int yy = 0; yy < out_ny_; ++yy)
        for (int xx = 0; xx < out_nx_; ++xx) {
          const float g = dy.at(ch, z, yy, xx);
          if (g == 0.0f) continue;
          const float wz = az.w[z], wy = ay.w[yy], wx = ax.w[xx];
          for (int bz = 0; bz < 2; ++bz)
            for (int by = 0; by < 2; ++by)
              for (int bx = 0; bx < 2; ++bx) {
                const float wgt =
                    (bz ? wz : 1 - wz) * (by ? wy : 1 - wy) * (bx ? wx : 1 - wx);
                if (wgt == 0.0f) continue;
                dx.at(ch, bz ? az.i1[z] : az.i0[z], by ? ay.i1[yy] : ay.i0[yy],
                      bx ? ax.i1[xx] : ax.i0[xx]) += wgt * g;
              }
        }
  return dx;
}

L2NormScale::L2NormScale(const std::string& name, int channels) : c_(channels) {
  gamma_.name = name + ".scale";
  gamma_.shape = {channels};
  gamma_.resize(channels);
  std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0f);
}

void L2NormScale::collect(ParamRefs& out) { out.push_back(&gamma_); }

Tensor L2NormScale::forward(const Tensor& x) {
  if (x.c != c_) throw std::invalid_argument("L2NormScale: channel mismatch");
  in_cache_ = x;
  const std::size_t spatial = x.spatial();
  inv_norm_.assign(spatial, 0.0f);
  for (int ch = 0; ch < c_; ++ch) {
    const float* p = x.v.data() + static_cast<std::size_t>(ch) * spatial;
    for (std::size_t i = 0; i < spatial; ++i) inv_norm_[i] += p[i] * p[i];
  }
  for (auto& s : inv_norm_) s = 1.0f / std::sqrt(s + 1e-12f);

  Tensor y(x.c, x.nz, x.ny, x.nx);
  for (int ch = 0; ch < c_; ++ch) {
    const float g = gamma_.value[ch];
    const float* p = x.v.data() + static_cast<std::size_t>(ch) * spatial;
    float* q = y.v.data() + static_cast<std::size_t>(ch) * spatial;
    for (std::size_t i = 0; i < spatial; ++i) q[i] = g * p[i] * inv_norm_[i];
  }
  return y;
}

Tensor L2NormScale::backward(const Tensor& dy) {
  const Tensor& x = in_cache_;
  const std::size_t spatial = x.spatial();
  std::vector<float> dot(spatial, 0.0f);  // sum_c dy*gamma*x per position
  for (int ch = 0; ch < c_; ++ch) {
    const float g = gamma_.value[ch];
    const float* px = x.v.data() + static_cast<std::size_t>(ch) * spatial;
    const float* pd = dy.v.data() + static_cast<std::size_t>(ch) * spatial;
    double dg = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) {
      dot[i] += pd[i] * g * px[i];
      dg += pd[i] * px[i] * inv_norm_[i];
    }
    gamma_.grad[ch] += static_cast<float>(dg);
  }
  Tensor dx(x.c, x.nz, x.ny, x.nx);
  for (int ch = 0; ch < c_; ++ch) {
    const float g = gamma_.value[ch];
    const float* px = x.v.data() + static_cast<std::size_t>(ch) * spatial;
    const float* pd = dy.v.data() + static_cast<std::size_t>(ch) * spatial;
    float* q = dx.v.data() + static_cast<std::size_t>(ch) * spatial;
    for (std::size_t i = 0; i < spatial; ++i) {
      const float inv = inv_norm_[i];
      q[i] = g * inv * pd[i] - px[i] * inv * inv * inv * dot[i];
    }
  }
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.nz != b.nz || a.ny != b.ny || a.nx != b.nx)
    throw std::invalid_argument("concat_channels: grid mismatch");
  Tensor y(a.c + b.c, a.nz, a.ny, a.nx);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + a.v.size());
  return y;
}

void split_channels(const Tensor& dy, int ca, Tensor& da, Tensor& db) {
  da = Tensor(ca, dy.nz, dy.ny, dy.nx);
  db = Tensor(dy.c - ca, dy.nz, dy.ny, dy.nx);
  std::copy(dy.v.begin(), dy.v.begin() + da.v.size(), da.v.begin());
  std::copy(dy.v.begin() + da.v.size(), dy.v.end(), db.v.begin());
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.v) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.v) v = 1.0f / (1.0f + std::exp(-v));
  return y;
}

Tensor softmax_channels(const Tensor& x) {
  Tensor y(x.c, x.nz, x.ny, x.nx);
  const std::size_t spatial = x.spatial();
  for (std::size_t i = 0; i < spatial; ++i) {
    float mx = -std::numeric_limits<float>::infinity();
    for (int ch = 0; ch < x.c; ++ch) mx = std::max(mx, x.v[ch * spatial + i]);
    float sum = 0.0f;
    for (int ch = 0; ch < x.c; ++ch) {
      const float e = std::exp(x.v[ch * spatial + i] - mx);
      y.v[ch * spatial + i] = e;
      sum += e;
    }
    for (int ch = 0; ch < x.c; ++ch) y.v[ch * spatial + i] /= sum;
  }
  return y;
}

}  // namespace cmb::nn
